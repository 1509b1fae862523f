"""Downstream tasks on inferred templates.

* few-shot generation: sample fresh members that conform to a template;
* co-segmentation: carry template part identities onto member pixels;
* unconditional generation: sample whole concepts from a generative model;
* set-level generation metrics (reconstruction-distance MMD and coverage).

Part identities come from executor provenance.  A template "part" is each
content node (layout ``Prim``, stroke ``DRAW``) plus each hole, numbered in
pre-order.  Members structurally contain the template (holes replaced by
fill subtrees), so a lockstep walk maps every member content node to the
template part it descends from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import domains, kernels
from .bootstrap import dream_concepts
from .layout import _SHAPE_IDS
from .program import Call, Hole, Program, ProgramError, conforms
from .sampler import GroupTriplet, SamplerConfig, sample_member
from .search import infer_group


# ----------------------------------------------------------- part inventory

def template_parts(template: Program, spec) -> list[tuple]:
    """Part keys in pre-order: ("node", path) content nodes, ("hole", k)."""
    parts = []
    k = 0

    def rec(node, path):
        nonlocal k
        if isinstance(node, Hole):
            parts.append(("hole", k))
            k += 1
            return
        if node.fn in spec.content_fns:
            parts.append(("node", path))
        for i, kid in enumerate(node.kids):
            rec(kid, path + (i,))

    rec(template.root, ())
    return parts


def _align_member(template: Program, member: Program, spec):
    """Map member content occurrences to template part indices.

    Returns (by_leaf, by_rank): ``by_leaf`` keys are content-leaf ordinals
    (the layout executor's part counter); ``by_rank`` keys are global
    pre-order node ranks (the stroke executor's part ids).
    """
    parts = template_parts(template, spec)
    index_of = {key: i for i, key in enumerate(parts)}
    by_leaf: dict[int, int] = {}
    by_rank: dict[int, int] = {}
    leaf = [0]
    rank = [0]
    hole = [0]

    def claim(part_i, mnode):
        r = rank[0]
        rank[0] += 1
        if isinstance(mnode, Hole):
            raise ProgramError("member is not concrete")
        if mnode.fn in spec.content_fns:
            by_leaf[leaf[0]] = part_i
            by_rank[r] = part_i
            leaf[0] += 1
        for kid in mnode.kids:
            claim(part_i, kid)

    def rec(tnode, mnode, tpath):
        if isinstance(tnode, Hole):
            part_i = index_of[("hole", hole[0])]
            hole[0] += 1
            claim(part_i, mnode)
            return
        if not isinstance(mnode, Call) or mnode.fn != tnode.fn:
            raise ProgramError("member does not match template structure")
        r = rank[0]
        rank[0] += 1
        if tnode.fn in spec.content_fns:
            part_i = index_of[("node", tpath)]
            by_leaf[leaf[0]] = part_i
            by_rank[r] = part_i
            leaf[0] += 1
        for i, (tk, mk) in enumerate(zip(tnode.kids, mnode.kids)):
            rec(tk, mk, tpath + (i,))

    rec(template.root, member.root, ())
    return by_leaf, by_rank


# ---------------------------------------------------------- co-segmentation

@dataclass
class CosegResult:
    parts: list[tuple]             # template part keys, label i = parts[i]
    labels: list[np.ndarray]       # per member, int32 (H,W); -1 = unlabeled
    meta: dict = field(default_factory=dict)


def cosegment(template: Program, members, spec, seed: int = 0,
              samples_per_part: int = 200,
              queries_per_pixel: int = 5) -> CosegResult:
    """Label each member's pixels with template part indices.

    Layout members label every cell: painted cells take their painting
    instance's part, empty cells take the nearest instance's part.  Stroke
    members label inked pixels by a 3-nearest-neighbor vote over points
    sampled along each part's inked trajectories; blank pixels stay -1.
    """
    parts = template_parts(template, spec)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC05E6]))
    labels = []
    for member in members:
        cells, payload = spec.execute(member)
        by_leaf, by_rank = _align_member(template, member, spec)
        if "instances" in payload:
            labels.append(_label_layout(cells, payload, by_leaf, spec))
        else:
            labels.append(_label_stroke(cells, payload, by_rank, len(parts),
                                        rng, samples_per_part,
                                        queries_per_pixel))
    return CosegResult(parts=parts, labels=labels)


def transfer_labels(result: CosegResult, labeled_index: int,
                    reference: np.ndarray) -> tuple[list[np.ndarray], dict]:
    """Rewrite part maps into the reference's label space.

    Each template part is mapped to the reference label it overlaps most on
    the labeled member (ties break toward the smaller label id); parts that
    touch no labeled reference cell stay -1 everywhere.
    """
    ref = np.asarray(reference)
    partmap = result.labels[labeled_index]
    if ref.shape != partmap.shape:
        raise ValueError(f"reference shape {ref.shape} does not match "
                         f"member shape {partmap.shape}")
    mapping: dict[int, int] = {}
    for part in (int(v) for v in np.unique(partmap) if v >= 0):
        votes = ref[partmap == part]
        votes = votes[votes >= 0]
        if votes.size:
            vals, counts = np.unique(votes, return_counts=True)
            mapping[part] = int(vals[np.argmax(counts)])
    out = []
    for lab in result.labels:
        dst = np.full_like(lab, -1)
        for part, label in mapping.items():
            dst[lab == part] = label
        out.append(dst)
    return out, mapping


def cosegment_group(canvases, labeled_index: int, reference, spec,
                    model=None, weights=None, beams=None, triplet=None,
                    seed: int = 0, samples_per_part: int = 200,
                    queries_per_pixel: int = 5) -> CosegResult:
    """Segment every canvas of a group consistently with one labeled member.

    Without ``triplet`` the group explanation is inferred from ``model``;
    passing a ground-truth triplet bypasses inference and tests propagation
    alone.  Part maps are computed per member, then translated to the
    reference's label ids via majority overlap on the labeled member.
    """
    if triplet is None:
        if model is None:
            raise ValueError("need either a proposal model or a triplet")
        res = infer_group(canvases, model, weights=weights, beams=beams)
        triplet = res.triplet
    if not 0 <= labeled_index < len(triplet.programs):
        raise ValueError(f"labeled index {labeled_index} outside group")
    parts = cosegment(triplet.template, triplet.programs, spec, seed=seed,
                      samples_per_part=samples_per_part,
                      queries_per_pixel=queries_per_pixel)
    labels, mapping = transfer_labels(parts, labeled_index, reference)
    return CosegResult(parts=parts.parts, labels=labels,
                       meta={"part_to_label": mapping,
                             "template": triplet.template,
                             "part_maps": parts.labels})


def _label_layout(cells, payload, by_leaf, spec):
    scene = payload["instances"]
    prov = payload["provenance"]
    n = spec.canvas_size
    out = np.full((n, n), -1, dtype=np.int32)
    if not scene:
        return out
    inst_part = np.array([by_leaf[i.part] for i in scene], dtype=np.int32)
    painted = prov >= 0
    out[painted] = inst_part[prov[painted]]
    if bool((~painted).any()):
        shapes = np.array([_SHAPE_IDS[i.shape] for i in scene], dtype=np.int64)
        cx = np.array([i.cx for i in scene], dtype=np.float64)
        cy = np.array([i.cy for i in scene], dtype=np.float64)
        hw = np.array([i.hw for i in scene], dtype=np.float64)
        hh = np.array([i.hh for i in scene], dtype=np.float64)
        nearest = kernels.nearest_instance(shapes, cx, cy, hw, hh, n)
        out[~painted] = inst_part[nearest[~painted]]
    return out


def _label_stroke(cells, payload, by_rank, n_parts, rng,
                  samples_per_part, queries_per_pixel):
    n = cells.shape[0]
    out = np.full((n, n), -1, dtype=np.int32)
    inked = [pl for pl in payload["polylines"] if pl.inked]
    if not inked:
        return out
    # sample along each part's trajectories, proportional to arc length
    per_part: dict[int, list] = {}
    for pl in inked:
        per_part.setdefault(by_rank[pl.part], []).append(pl)
    pts, pts_part = [], []
    for part_i, pls in per_part.items():
        lengths = np.array([max(pl.arc_lengths().sum(), 1e-9) for pl in pls])
        quota = np.maximum(1, np.round(
            samples_per_part * lengths / lengths.sum()).astype(int))
        for pl, m in zip(pls, quota):
            ts = (np.arange(m) + 0.5) / m
            for t in ts:
                pts.append(pl.point_at_fraction(float(t)))
                pts_part.append(part_i)
    samples = np.asarray(pts, dtype=np.float64)
    sample_parts = np.asarray(pts_part, dtype=np.int32)

    ys, xs = np.nonzero(cells > 0)
    if len(ys) == 0:
        return out
    # several jittered queries per inked pixel, majority label wins
    centers = np.stack([(xs + 0.5) / n, (ys + 0.5) / n], axis=1)
    votes = np.zeros((len(ys), n_parts), dtype=np.int32)
    for q in range(queries_per_pixel):
        if q == 0:
            queries = centers
        else:
            jitter = (rng.random((len(ys), 2)) - 0.5) / n
            queries = centers + jitter
        lab = kernels.knn_vote(queries, samples, sample_parts, n_parts, k=3)
        votes[np.arange(len(ys)), lab] += 1
    out[ys, xs] = votes.argmax(axis=1)  # argmax ties -> smallest part id
    return out


def miou(pred: np.ndarray, true: np.ndarray) -> float:
    """Mean best-IoU over the parts present in ``true``.

    Parts carry no cross-labeling correspondence, so each true part is
    scored against its best-overlapping predicted part; unlabeled pixels
    (-1) participate only through the masks they belong to.
    """
    true_ids = [int(v) for v in np.unique(true) if v >= 0]
    if not true_ids:
        return 1.0 if not (pred >= 0).any() else 0.0
    pred_ids = [int(v) for v in np.unique(pred) if v >= 0]
    total = 0.0
    for t in true_ids:
        tm = true == t
        best = 0.0
        for p in pred_ids:
            pm = pred == p
            inter = int((tm & pm).sum())
            if inter == 0:
                continue
            union = int((tm | pm).sum())
            best = max(best, inter / union)
        total += best
    return total / len(true_ids)


# ------------------------------------------------------- few-shot generation

def few_shot_generate(template: Program, n: int, spec, seed: int = 0,
                      cfg: SamplerConfig | None = None) -> GroupTriplet:
    """Sample ``n`` fresh members of a template; conformance is checked."""
    cfg = cfg or SamplerConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xFE55]))
    programs, canvases = [], []
    for _ in range(n):
        z, cells = sample_member(template, cfg, rng, spec)
        if conforms(z, template) is None:
            raise ProgramError("generated member does not conform")
        programs.append(z)
        canvases.append(cells)
    return GroupTriplet(domain=spec.name, concept_id="few-shot",
                        template=template, programs=programs,
                        canvases=canvases, source="few_shot")


# -------------------------------------------------- unconditional generation

def unconditional_generate(gen_model, n: int, seed: int = 0,
                           group_size: int = 1, reference=None):
    """Sample concepts from a generative proposal model.

    Returns (triplets, report).  With ``reference`` canvases, the report
    carries each generated canvas's nearest-reference distance, a cheap
    novelty check against the training set.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD2EA]))
    triplets, stats = dream_concepts(gen_model, n, group_size, rng,
                                     set(), set(), concept_prefix="uncond")
    report = {"requested": n, "generated": len(triplets),
              "sample_stats": stats}
    if reference:
        spec = domains.get_domain(gen_model.domain)
        nearest = []
        for t in triplets:
            for cells in t.canvases:
                nearest.append(min(float(spec.metric_distance(cells, r))
                                   for r in reference))
        report["nearest_reference"] = nearest
        report["mean_nearest_reference"] = (float(np.mean(nearest))
                                            if nearest else None)
    return triplets, report


def generation_metrics(generated, reference, spec) -> dict:
    """Set-level fidelity/diversity.

    ``mmd``: mean over reference canvases of the distance to the closest
    generated canvas (lower is better).  ``coverage``: fraction of reference
    canvases that are the nearest reference of at least one generated canvas
    (higher is better).
    """
    if not generated or not reference:
        raise ValueError("need non-empty generated and reference sets")
    d = np.array([[float(spec.metric_distance(g, r)) for g in generated]
                  for r in reference])
    mmd = float(d.min(axis=1).mean())
    covered = set(int(i) for i in d.argmin(axis=0))
    coverage = len(covered) / len(reference)
    return {"mmd": mmd, "coverage": coverage}
