"""Two-stage program inference for a group of canvases.

Objective.  A candidate explanation of a group is a template TP plus one
conforming concrete program z_i per canvas x_i.  Its score is

    O = w_rec * sum_i M(x_i, E(z_i)) + w_len * sum_i (|z_i| - |TP|)

with the reconstruction metric M from the domain, E the executor, and |.|
the description length (function tokens plus concretely determined
relatable parameter tokens; each shared variable counts once).  Lower is
better.  ``dl_grouping="group"`` subtracts |TP| once instead of per member.
A member whose program fails to execute scores infinity and the candidate
is discarded (counted in diagnostics).

Enumeration.  Each decoding stage runs an exact budgeted best-first
enumeration over token prefixes: a priority queue ordered by
(-log probability, token string) pops the globally most probable prefix,
extends it one grammar-legal token, and collects completed streams.  The
pop order never depends on how many completions were requested, so the
top-k sets are nested: widening a beam can only add candidates, never
replace them.  With the pop budget left at its default the enumeration is
exhaustive for small grammars, matching brute force exactly.

Stages.  Stage one decodes ``beam_templates`` templates conditioned on the
whole group, ranked by log probability.  Stage two, for each template and
each member, decodes ``beam_members`` fill streams, and for each resulting
expansion ``beam_members`` binding streams; every (fills, bindings) pair is
instantiated, executed, and scored.  The per-member best is exact within
the enumerated set because the objective decomposes over members for a
fixed template.  The final answer minimizes O across templates, breaking
ties by template token string.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import domains
from .cursors import ExpansionCursor, ParamCursor, TemplateCursor
from .program import ProgramError, description_length, expand, instantiate
from .sampler import GroupTriplet
from .sequences import linearize

INF = float("inf")


@dataclass(frozen=True)
class ObjectiveWeights:
    w_rec: float = 1.0
    w_len: float = 0.001
    dl_grouping: str = "per_member"  # or "group"


@dataclass(frozen=True)
class BeamConfig:
    beam_templates: int = 5
    beam_members: int = 5
    beam_bindings: int = 0      # binding candidates per fill; 0 = beam_members
    pop_budget: int = 20000     # max heap pops, template enumeration
    pop_fill: int = 1500        # max heap pops per fill enumeration
    pop_param: int = 1500       # max heap pops per binding enumeration
    max_group: int = 5          # subsample larger groups at inference

    @property
    def bindings_k(self) -> int:
        return self.beam_bindings or self.beam_members


@dataclass
class InferenceResult:
    triplet: GroupTriplet
    objective: float
    member_scores: list
    diagnostics: dict = field(default_factory=dict)


class InferenceFailure(RuntimeError):
    """No template produced an executable explanation for every member."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


# ------------------------------------------------------------- enumeration

def best_first(session, cursor, k, pop_budget):
    """Top-k completed streams by log probability.

    Returns a list of (logprob, tokens, finished_cursor), most probable
    first; ties broken by token string.  Exact for the explored region: if
    the pop budget is not exhausted, these are the true k most probable
    completions under the session's distribution.
    """
    heap = [(0.0, (), cursor)]
    done = []
    pops = 0
    exhausted = False
    while heap and len(done) < k:
        if pops >= pop_budget:
            exhausted = True
            break
        neglp, toks, cur = heapq.heappop(heap)
        pops += 1
        if cur.done():
            done.append((-neglp, toks, cur))
            continue
        legal, probs = session.dist(toks, cur)
        for tok, p in zip(legal, probs):
            if p <= 0.0:
                continue
            child = cur.copy()
            child.advance(tok)
            heapq.heappush(heap, (neglp - float(np.log(p)),
                                  toks + (tok,), child))
    return done, {"pops": pops, "exhausted": exhausted}


# ---------------------------------------------------------------- objective

def member_score(canvas, program, spec, weights, dl_tp):
    """(score, canvas_of_z)  or (inf, None) when execution fails."""
    try:
        cells, _payload = spec.execute(program)
    except spec.execution_error:
        return INF, None
    m = spec.metric_distance(canvas, cells)
    dl_z = description_length(program)
    if weights.dl_grouping == "group":
        return weights.w_rec * m + weights.w_len * dl_z, cells
    return (weights.w_rec * m
            + weights.w_len * (dl_z - dl_tp)), cells


def objective(template, programs, canvases, spec, weights):
    """Score a fully specified explanation; inf if any member fails."""
    dl_tp = description_length(template)
    total = 0.0
    members = []
    for x, z in zip(canvases, programs):
        s, _ = member_score(x, z, spec, weights, dl_tp)
        members.append(s)
        total += s
    if weights.dl_grouping == "group":
        total -= weights.w_len * dl_tp
    return total, members


# ------------------------------------------------------------------- search

def infer_group(canvases, model, weights=None, beams=None,
                concept_id="") -> InferenceResult:
    """Best explanation of one canvas group under the proposal model."""
    weights = weights or ObjectiveWeights()
    beams = beams or BeamConfig()
    vocab = model.vocab
    spec = domains.get_domain(model.domain)
    if len(canvases) > beams.max_group:
        canvases = list(canvases)[:beams.max_group]

    sess_tp = model.open("template", canvases, ())
    cur0 = TemplateCursor(vocab, spec.context_factory())
    tps, tp_stats = best_first(sess_tp, cur0, beams.beam_templates,
                               beams.pop_budget)
    diagnostics = {"template_stage": tp_stats, "templates": [],
                   "discarded_members": 0}
    if not tps:
        raise InferenceFailure("template enumeration produced no candidate",
                               diagnostics)

    best = None  # (objective, tp_tokens, triplet, member_scores)
    for tp_lp, tp_toks, tp_cur in tps:
        template = tp_cur.result()
        dl_tp = description_length(template)
        tp_cond = tuple(linearize(template))
        members = []
        member_scores = []
        failed = False
        discarded = 0
        for x in canvases:
            cands = _member_candidates(x, template, tp_cond, model, spec,
                                       beams)
            scored = []
            for exp_toks, par_toks, program in cands:
                s, cells = member_score(x, program, spec, weights, dl_tp)
                if s == INF:
                    discarded += 1
                    continue
                scored.append((s, exp_toks, par_toks, program))
            if not scored:
                failed = True
                break
            scored.sort(key=lambda t: (t[0], t[1], t[2]))
            s, _, _, program = scored[0]
            members.append(program)
            member_scores.append(s)
        diagnostics["discarded_members"] += discarded
        entry = {"template": tp_toks, "logprob": tp_lp,
                 "explained": not failed}
        if failed:
            diagnostics["templates"].append(entry)
            continue
        total = sum(member_scores)
        if weights.dl_grouping == "group":
            total -= weights.w_len * dl_tp
        entry["objective"] = total
        diagnostics["templates"].append(entry)
        key = (total, tp_toks)
        if best is None or key < (best[0], best[1]):
            triplet = GroupTriplet(domain=model.domain, concept_id=concept_id,
                                   template=template, programs=members,
                                   canvases=list(canvases), source="inferred")
            best = (total, tp_toks, triplet, member_scores)
    if best is None:
        raise InferenceFailure(
            "no template explained every canvas in the group", diagnostics)
    total, _, triplet, member_scores = best
    return InferenceResult(triplet=triplet, objective=total,
                           member_scores=member_scores,
                           diagnostics=diagnostics)


def _member_candidates(canvas, template, tp_cond, model, spec, beams):
    """(exp_tokens, par_tokens, concrete program) candidates for one canvas."""
    vocab = model.vocab
    out = []
    sess_exp = model.open("expansion", [canvas], tp_cond)
    cur = ExpansionCursor(vocab, template, spec.context_factory())
    fills_hits, _ = best_first(sess_exp, cur, beams.beam_members,
                               beams.pop_fill)
    for _lp, exp_toks, exp_cur in fills_hits:
        try:
            expansion = expand(template, exp_cur.result())
        except ProgramError:
            continue
        exp_cond = tuple(linearize(expansion))
        try:
            pc = ParamCursor(vocab, expansion, spec.context_factory())
        except ProgramError:
            continue
        sess_par = model.open("param", [canvas], exp_cond)
        bind_hits, _ = best_first(sess_par, pc, beams.bindings_k,
                                  beams.pop_param)
        for _plp, par_toks, par_cur in bind_hits:
            try:
                program = instantiate(expansion, par_cur.result())
            except ProgramError:
                continue
            out.append((exp_toks, par_toks, program))
    return out


def infer_concepts(concepts, model, weights=None, beams=None):
    """Run inference over a list of GroupTriplets (their canvases).

    Returns (results, failures): results maps concept index ->
    InferenceResult; failures maps concept index -> diagnostics dict.
    """
    results = {}
    failures = {}
    for i, t in enumerate(concepts):
        try:
            results[i] = infer_group(t.canvases, model, weights, beams,
                                     concept_id=t.concept_id)
        except InferenceFailure as e:
            failures[i] = {"error": str(e), **e.diagnostics}
    return results, failures
