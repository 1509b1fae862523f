"""Synthetic concept generation.

The generative story for one concept:

1. ``sample_program`` draws a concrete program from the grammar under the
   domain context (so e.g. stroke references are resolvable by construction),
   with an exact token budget — samples always fit the template cap.
2. ``collapse`` abstracts it into a template: up to five disjoint non-root
   subtrees become holes (each under the fill cap), and the surviving
   relatable pinned slots are re-annotated Pinned / Shared / Free by lottery.
   Fine-grained slots always become Free.  Shared variables join only slots
   that hold equal values over identical value sets, at most four variables,
   numbered by first use.
3. ``sample_group`` draws members that conform to the template by
   construction: grammar-sampled fills per hole, one value draw per shared
   variable per member, independent draws per free slot, then execution.
   Members that fail to execute are redrawn within a retry budget.
4. ``format_targets`` turns a group into training examples for the three
   decoding roles (template / expansion / param), with the group's canvases
   in randomized order for the template role.

Datasets serialize as JSONL with canvases as base64 symbolic bytes.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import domains
from .cursors import ParamCursor, min_completion_costs
from .program import (FREE, Call, Hole, Pinned, Program, ProgramError, Shared,
                      expand, instantiate, replace_at, walk,
                      _slot_category, _subtree_token_count)
from .sequences import fill_tokens, linearize
from .sexpr import from_text, to_text
from .vocab import MAX_HOLES, MAX_SHARED, Vocabulary


class SampleError(RuntimeError):
    """Sampling could not produce a valid object within its retry budget."""


@dataclass(frozen=True)
class SamplerConfig:
    max_depth: int = 8
    min_tokens: int = 4            # reject degenerate one-call programs
    fn_weights: Optional[dict] = None   # category -> {fn: weight}
    hole_prob: float = 0.75        # chance to attempt each hole slot
    pin_prob: float = 0.35
    share_prob: float = 0.20
    group_size: int = 5
    max_retries: int = 32


def _weights_for(cfg: SamplerConfig, category: str, fns) -> np.ndarray:
    table = (cfg.fn_weights or {}).get(category, {})
    w = np.array([float(table.get(f, 1.0)) for f in fns], dtype=np.float64)
    if w.sum() <= 0:
        raise SampleError(f"all function weights vanish in category {category}")
    return w / w.sum()


def sample_program(vocab: Vocabulary, cfg: SamplerConfig,
                   rng: np.random.Generator, context=None) -> Program:
    """Draw a concrete program within the template token budget."""
    spec_ctx = context if context is not None else domains.NullContext()
    min_cat, min_fn = min_completion_costs(vocab)
    budget = [vocab.caps.template - 2]  # Start and End are part of the cap

    def gen(category: str, depth: int, reserved: int):
        avail = budget[0] - reserved
        fns = [f for f in spec_ctx.legal_functions(vocab, category)
               if min_fn[f] <= avail]
        if not fns:
            raise SampleError(
                f"no function of category {category} fits budget {avail}")
        if depth >= cfg.max_depth:
            quickest = min(min_fn[f] for f in fns)
            fns = [f for f in fns if min_fn[f] == quickest]
        probs = _weights_for(cfg, category, fns)
        fn = fns[int(rng.choice(len(fns), p=probs))]
        sig = vocab.functions[fn]
        budget[0] -= 1 + len(sig.params)
        spec_ctx.after_function(fn)
        args = []
        for pname in sig.params:
            pt = vocab.param_types[pname]
            idxs = list(spec_ctx.legal_value_indices(pt))
            args.append(Pinned(idxs[int(rng.integers(len(idxs)))]))
        kids = []
        for j, ccat in enumerate(sig.children):
            rest = sum(min_cat[c] for c in sig.children[j + 1:])
            kids.append(gen(ccat, depth + 1, reserved + rest))
        return Call(fn, tuple(args), tuple(kids))

    root = gen(vocab.root_category, 0, 0)
    return Program(root, vocab)


def _sample_fill(vocab: Vocabulary, category: str, cfg: SamplerConfig,
                 rng: np.random.Generator, ctx) -> Call:
    """Grammar-sample one fill subtree (params Free) within the fill cap."""
    min_cat, min_fn = min_completion_costs(vocab)
    budget = [vocab.caps.fill]

    def gen(cat: str, depth: int, reserved: int):
        avail = budget[0] - reserved
        fns = [f for f in ctx.legal_functions(vocab, cat)
               if min_fn[f] <= avail]
        if not fns:
            raise SampleError(f"no fill of category {cat} fits budget {avail}")
        if depth >= cfg.max_depth:
            quickest = min(min_fn[f] for f in fns)
            fns = [f for f in fns if min_fn[f] == quickest]
        probs = _weights_for(cfg, cat, fns)
        fn = fns[int(rng.choice(len(fns), p=probs))]
        sig = vocab.functions[fn]
        budget[0] -= 1 + len(sig.params)
        ctx.after_function(fn)
        kids = []
        for j, ccat in enumerate(sig.children):
            rest = sum(min_cat[c] for c in sig.children[j + 1:])
            kids.append(gen(ccat, depth + 1, reserved + rest))
        return Call(fn, tuple([FREE] * len(sig.params)), tuple(kids))

    return gen(category, 0, 0)


# ------------------------------------------------------------------- collapse

def collapse(program: Program, cfg: SamplerConfig,
             rng: np.random.Generator) -> Program:
    """Abstract a concrete program into a template.

    Hole selection: every non-root subtree within the fill cap is a
    candidate; candidates are visited in shuffled order and taken (subject
    to the per-slot lottery) while disjoint from previous picks, up to the
    hole budget.  Relation lottery runs over the slots that stay visible.
    """
    if program.kind != "concrete":
        raise ProgramError("collapse expects a concrete program")
    vocab = program.vocab
    candidates = [path for node, path in walk(program.root)
                  if path and isinstance(node, Call)
                  and _subtree_token_count(node, vocab) <= vocab.caps.fill]
    order = list(rng.permutation(len(candidates))) if candidates else []
    chosen: list[tuple] = []
    for oi in order:
        if len(chosen) >= MAX_HOLES:
            break
        path = candidates[int(oi)]
        if any(_prefix(p, path) or _prefix(path, p) for p in chosen):
            continue
        if rng.random() < cfg.hole_prob:
            chosen.append(path)
    # erase in pre-order so hole slot ids follow appearance order; the tree
    # stays raw (unvalidated) until the lottery has freed fine slots
    chosen.sort()
    erased = program.root
    for p in chosen:
        erased = replace_at(erased, p, Hole(_slot_category(program, p)))

    # relation lottery over surviving pinned slots
    fates: dict[tuple, str] = {}        # (path, slot) -> pin|share|free
    share_groups: dict[tuple, list] = {}  # (value-set, value idx) -> slots
    for node, path in walk(erased):
        if not isinstance(node, Call):
            continue
        sig = vocab.functions[node.fn]
        for si, (a, pname) in enumerate(zip(node.args, sig.params)):
            if not isinstance(a, Pinned):
                continue
            pt = vocab.param_types[pname]
            if not pt.relatable:
                fates[(path, si)] = "free"
                continue
            r = rng.random()
            if r < cfg.pin_prob:
                fates[(path, si)] = "pin"
            elif r < cfg.pin_prob + cfg.share_prob:
                fates[(path, si)] = "share"
                share_groups.setdefault((pt.values, a.index), []).append(
                    (path, si))
            else:
                fates[(path, si)] = "free"

    var_of: dict[tuple, int] = {}
    next_var = 0
    for key in sorted(share_groups, key=lambda k: min(share_groups[k])):
        slots = share_groups[key]
        if len(slots) < 2 or next_var >= MAX_SHARED:
            continue  # singletons and overflow groups fall back to Free
        for s in slots:
            var_of[s] = next_var
        next_var += 1

    def rebuild(node, path):
        if isinstance(node, Hole):
            return node
        args = []
        for si, a in enumerate(node.args):
            key = (path, si)
            fate = fates.get(key)
            if fate is None:          # non-Pinned never occurs pre-lottery
                args.append(a)
            elif fate == "pin":
                args.append(a)
            elif key in var_of:
                args.append(Shared(var_of[key]))
            else:
                args.append(FREE)
        kids = tuple(rebuild(k, path + (i,)) for i, k in enumerate(node.kids))
        return Call(node.fn, tuple(args), kids)

    root = rebuild(erased, ())
    root = _renumber_shared(root)
    return Program(root, vocab)


def _prefix(a: tuple, b: tuple) -> bool:
    return len(a) <= len(b) and b[:len(a)] == a


def _renumber_shared(root):
    """Canonicalize shared variable ids by first pre-order use."""
    mapping: dict[int, int] = {}
    for node, _ in walk(root):
        if isinstance(node, Call):
            for a in node.args:
                if isinstance(a, Shared) and a.var not in mapping:
                    mapping[a.var] = len(mapping)

    def rb(node):
        if isinstance(node, Hole):
            return node
        args = tuple(Shared(mapping[a.var]) if isinstance(a, Shared) else a
                     for a in node.args)
        return Call(node.fn, args, tuple(rb(k) for k in node.kids))

    return rb(root)


# ---------------------------------------------------------------- group data

@dataclass
class GroupTriplet:
    """One concept: a template, its member programs, and their canvases."""

    domain: str
    concept_id: str
    template: Optional[Program]
    programs: list
    canvases: list                       # symbolic cell arrays
    source: str = "synthetic"

    @property
    def group_size(self) -> int:
        return len(self.canvases)


def sample_member(template: Program, cfg: SamplerConfig,
                  rng: np.random.Generator, spec: domains.DomainSpec):
    """One conforming member: fills, bindings, execution.  Returns
    (program, canvas) or raises SampleError after the retry budget."""
    vocab = template.vocab
    holes = template.holes()
    last_err = None
    for _ in range(cfg.max_retries):
        try:
            ctx = spec.context_factory()
            fills = []
            for node, _ in walk(template.root):
                if isinstance(node, Call):
                    ctx.after_function(node.fn)
                else:
                    fills.append(_sample_fill(vocab, node.category, cfg, rng, ctx))
            assert len(fills) == len(holes)
            expansion = expand(template, fills)
            pc = ParamCursor(vocab, expansion, spec.context_factory())
            toks = []
            for i, (prompt, tname, _kind, _key) in enumerate(pc.schedule):
                legal = pc.legal_values[i]
                if not legal:
                    raise SampleError(f"slot {tname} has no admissible value")
                choice = legal[int(rng.integers(len(legal)))]
                toks.append(prompt)
                toks.append(vocab.value_id(tname, choice))
            for t in toks:
                pc.advance(t)
            pc.advance(vocab.end_id)
            program = instantiate(expansion, pc.result())
            cells, _payload = spec.execute(program)
            return program, cells
        except (SampleError, ProgramError, spec.execution_error) as e:
            last_err = e
            continue
    raise SampleError(f"no valid member after {cfg.max_retries} tries: {last_err}")


def sample_group(template: Program, cfg: SamplerConfig,
                 rng: np.random.Generator, spec: domains.DomainSpec,
                 concept_id: str = "") -> GroupTriplet:
    programs, canvases = [], []
    for _ in range(cfg.group_size):
        program, cells = sample_member(template, cfg, rng, spec)
        programs.append(program)
        canvases.append(cells)
    return GroupTriplet(domain=spec.name, concept_id=concept_id,
                        template=template, programs=programs,
                        canvases=canvases)


def sample_concept(spec: domains.DomainSpec, cfg: SamplerConfig,
                   rng: np.random.Generator, concept_id: str) -> GroupTriplet:
    """Full concept draw: program -> template -> conforming group."""
    vocab = domains.get_vocab(spec.name)
    last_err = None
    for _ in range(cfg.max_retries):
        try:
            z = sample_program(vocab, cfg, rng, spec.context_factory())
            if len(linearize(z)) < cfg.min_tokens + 2:
                continue
            spec.execute(z)  # the seed program itself must be executable
            template = collapse(z, cfg, rng)
            return sample_group(template, cfg, rng, spec, concept_id)
        except (SampleError, ProgramError, spec.execution_error) as e:
            last_err = e
            continue
    raise SampleError(
        f"no valid concept after {cfg.max_retries} tries: {last_err}")


def make_dataset(domain_name: str, n_concepts: int, cfg: SamplerConfig,
                 seed: int) -> list[GroupTriplet]:
    spec = domains.get_domain(domain_name)
    rng = np.random.default_rng(seed)
    return [sample_concept(spec, cfg, rng, f"{domain_name}-{seed}-{i:05d}")
            for i in range(n_concepts)]


# ------------------------------------------------------------ training targets

@dataclass(frozen=True)
class TrainingExample:
    """One supervised decode: visual conditioning, a program-side prompt
    prefix, and the target stream the decoder must produce."""

    role: str                    # template | expansion | param
    domain: str
    visuals: tuple               # canvases to encode, in conditioning order
    prefix: tuple                # program-side prompt token ids (may be empty)
    target: tuple                # token ids to predict, ends with End
    source: str = "synthetic"
    concept_id: str = ""


def format_targets(triplet: GroupTriplet,
                   rng: np.random.Generator) -> list[TrainingExample]:
    """Training examples for one concept, all three roles."""
    tp = triplet.template
    vocab = tp.vocab
    out = []
    order = [int(i) for i in rng.permutation(len(triplet.canvases))]
    out.append(TrainingExample(
        role="template", domain=triplet.domain,
        visuals=tuple(triplet.canvases[i] for i in order),
        prefix=(), target=tuple(linearize(tp)[1:]),
        source=triplet.source, concept_id=triplet.concept_id))
    tp_tokens = tuple(linearize(tp))
    for program, canvas in zip(triplet.programs, triplet.canvases):
        w = _witness_or_raise(program, tp)
        exp_target = []
        for k, fill in enumerate(w.fills):
            exp_target.append(vocab.hole_id(k))
            exp_target.extend(fill_tokens(fill, vocab))
        exp_target.append(vocab.end_id)
        out.append(TrainingExample(
            role="expansion", domain=triplet.domain, visuals=(canvas,),
            prefix=tp_tokens, target=tuple(exp_target),
            source=triplet.source, concept_id=triplet.concept_id))

        expansion = expand(tp, w.fills)
        pc = ParamCursor(vocab, expansion,
                         domains.get_domain(triplet.domain).context_factory())
        par_target = []
        for i, (prompt, tname, kind, key) in enumerate(pc.schedule):
            idx = w.shared[key] if kind == "shared" else w.free[key]
            par_target.append(prompt)
            par_target.append(vocab.value_id(tname, idx))
        par_target.append(vocab.end_id)
        out.append(TrainingExample(
            role="param", domain=triplet.domain, visuals=(canvas,),
            prefix=tuple(linearize(expansion)), target=tuple(par_target),
            source=triplet.source, concept_id=triplet.concept_id))
    return out


def _witness_or_raise(program: Program, template: Program):
    from .program import conforms
    w = conforms(program, template)
    if w is None:
        raise ProgramError("group member does not conform to its template")
    return w


# -------------------------------------------------------------------- dataset IO

def _b64(cells, spec: domains.DomainSpec) -> str:
    return base64.b64encode(spec.to_symbolic(cells)).decode("ascii")


def _unb64(text: str, spec: domains.DomainSpec):
    return spec.from_symbolic(base64.b64decode(text.encode("ascii")))


def triplet_to_json(t: GroupTriplet) -> dict:
    spec = domains.get_domain(t.domain)
    return {
        "domain": t.domain,
        "concept_id": t.concept_id,
        "source": t.source,
        "template": to_text(t.template) if t.template is not None else None,
        "programs": [to_text(p) for p in t.programs],
        "canvases": [_b64(c, spec) for c in t.canvases],
    }


def triplet_from_json(obj: dict) -> GroupTriplet:
    spec = domains.get_domain(obj["domain"])
    vocab = domains.get_vocab(obj["domain"])
    template = (from_text(obj["template"], vocab)
                if obj.get("template") else None)
    programs = [from_text(s, vocab) for s in obj.get("programs") or []]
    canvases = [_unb64(s, spec) for s in obj["canvases"]]
    return GroupTriplet(domain=obj["domain"], concept_id=obj["concept_id"],
                        template=template, programs=programs,
                        canvases=canvases,
                        source=obj.get("source", "synthetic"))


def save_triplets(path, triplets) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(triplet_to_json(t), sort_keys=True) + "\n")


def load_triplets(path) -> list[GroupTriplet]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(triplet_from_json(json.loads(line)))
    return out
