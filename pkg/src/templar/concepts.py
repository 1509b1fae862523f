"""Handcrafted concept generators for fixtures, demos, and evaluation.

Each generator draws a template with a fixed structural motif and
randomized pinned values, then samples a conforming group.  The motifs
lean on composition patterns (shared colors or shapes, pinned anchors,
wildcard slots, mirrored placement) that a uniform grammar sampler
produces only rarely, which makes these concepts a useful adaptation
target for fine-tuning runs and a stable corpus for tests.

Two tiers, both on the compact layout vocabulary (``layout-desk``):

* ``CORE`` motifs keep content centered (no spatial offsets), so search
  with a modestly trained proposal model reconstructs them at least
  partially — the right regime for demonstrating adaptation.
* ``HARD`` motifs move content around the canvas and demand much more
  from the proposal model; they suit stress tests and qualitative demos.
"""

from __future__ import annotations

import numpy as np

from . import domains
from .sampler import GroupTriplet, SamplerConfig, sample_group
from .sexpr import from_text


def _pick(rng, values):
    return values[int(rng.integers(len(values)))]


# ------------------------------------------------------------- core motifs

def _wildcard_pair(rng, vocab):
    """Two unconstrained chains side by side."""
    return "(UNION (HOLE 0) (HOLE 1))"


def _tinted_wildcards(rng, vocab):
    """A pinned color washing over two unconstrained chains."""
    c = _pick(rng, vocab.param_types["ctype"].values)
    return f"(Color ctype={c} (UNION (HOLE 0) (HOLE 1)))"


def _twin_shapes(rng, vocab):
    """Two prims forced to share a shape; the second gets a free tint."""
    return "(UNION (Prim ptype=V0) (Color ctype=?0 (Prim ptype=V0)))"


def _dressed_anchor(rng, vocab):
    """A pinned colored prim joined with one wildcard chain."""
    c = _pick(rng, vocab.param_types["ctype"].values)
    p = _pick(rng, vocab.param_types["ptype"].values)
    return f"(UNION (Color ctype={c} (Prim ptype={p})) (HOLE 0))"


def _free_tint(rng, vocab):
    """One wildcard chain under a color that varies per member."""
    return "(Color ctype=?0 (HOLE 0))"


def _matched_tints(rng, vocab):
    """Two prims of one pinned shape sharing a per-member color."""
    p = _pick(rng, vocab.param_types["ptype"].values)
    return (f"(UNION (Color ctype=V0 (Prim ptype={p}))"
            f" (Color ctype=V0 (HOLE 0)))")


# ------------------------------------------------------------- hard motifs

def _mirrored_pair(rng, vocab):
    """Two prims of one shared shape at mirrored horizontal offsets."""
    xt = _pick(rng, [0.25, 0.5, 0.75])
    yt = _pick(rng, vocab.param_types["yt"].values)
    return (f"(UNION"
            f" (Move xt={-xt} xf=?0 yt={yt} yf=?1 (Prim ptype=V0))"
            f" (Move xt={xt} xf=?2 yt={yt} yf=?3 (Prim ptype=V0)))")


def _colored_twins(rng, vocab):
    """Two prims sharing a color, shapes left to vary per member."""
    xt = _pick(rng, [0.25, 0.5, 0.75])
    return (f"(UNION"
            f" (Move xt={-xt} xf=?0 yt=0.0 yf=?1 (Color ctype=V0 (Prim ptype=?2)))"
            f" (Move xt={xt} xf=?3 yt=0.0 yf=?4 (Color ctype=V0 (Prim ptype=?5))))")


def _anchored_wildcard(rng, vocab):
    """A pinned anchor prim plus one wildcard subtree above it."""
    p = _pick(rng, vocab.param_types["ptype"].values)
    yt = _pick(rng, [0.5, 0.75])
    return (f"(UNION"
            f" (Move xt=0.0 xf=?0 yt={-yt} yf=?1 (Prim ptype={p}))"
            f" (Move xt=0.0 xf=?2 yt={yt} yf=?3 (HOLE 0)))")


def _diagonal_drifter(rng, vocab):
    """One prim whose x and y offsets share a value (diagonal placement)."""
    c = _pick(rng, vocab.param_types["ctype"].values)
    return f"(Move xt=V0 xf=?0 yt=V0 yf=?1 (Color ctype={c} (Prim ptype=?2)))"


def _tinted_stack(rng, vocab):
    """A pinned color applied to a vertical pair of same-shaped prims."""
    c = _pick(rng, vocab.param_types["ctype"].values)
    yt = _pick(rng, [0.25, 0.5])
    return (f"(Color ctype={c} (UNION"
            f" (Move xt=0.0 xf=?0 yt={-yt} yf=?1 (Prim ptype=V0))"
            f" (Move xt=0.0 xf=?2 yt={yt} yf=?3 (Prim ptype=V0))))")


CORE = {
    "wildcard-pair": _wildcard_pair,
    "tinted-wildcards": _tinted_wildcards,
    "twin-shapes": _twin_shapes,
    "dressed-anchor": _dressed_anchor,
    "free-tint": _free_tint,
    "matched-tints": _matched_tints,
}

HARD = {
    "mirrored-pair": _mirrored_pair,
    "colored-twins": _colored_twins,
    "anchored-wildcard": _anchored_wildcard,
    "diagonal-drifter": _diagonal_drifter,
    "tinted-stack": _tinted_stack,
}

GENERATORS = {**CORE, **HARD}


def build_concepts(domain: str = "layout-desk", n: int = 12, seed: int = 0,
                   group_size: int = 5, tier: str = "core",
                   names=None) -> list[GroupTriplet]:
    """n fixture concepts cycling through a tier's generators (or ``names``).

    ``tier`` is "core", "hard", or "all"; an explicit ``names`` list wins.
    """
    spec = domains.get_domain(domain)
    vocab = domains.get_vocab(domain)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF1C5]))
    if names:
        keys = list(names)
    else:
        pool = {"core": CORE, "hard": HARD, "all": GENERATORS}[tier]
        keys = sorted(pool)
    cfg = SamplerConfig(group_size=group_size)
    out = []
    for i in range(n):
        name = keys[i % len(keys)]
        text = GENERATORS[name](rng, vocab)
        template = from_text(text, vocab)
        out.append(sample_group(template, cfg, rng, spec,
                                concept_id=f"{name}-{i:03d}"))
    return out
