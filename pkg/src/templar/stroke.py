"""Pen-stroke domain: binary characters on a 28x28 canvas over [0,1]^2.

A program is a chain of pen commands (the chain is the tree's spine):

* ``ON s rest`` / ``OFF s rest``  set pen contact, run the ink block ``s``,
  continue with ``rest``;
* ``MOVE(si, mt, mf) rest``       teleport (no ink) to the point at fraction
  mt+mf (clamped to [0,1], by arc length) along recorded stroke ``si``;
* ``END``                         stop.

Ink blocks: ``DRAW(at,af,dt,df)`` moves the pen by distance dt+df
(canvas-width units) at heading at+af degrees (0 deg = +x, counterclockwise);
``BOW(bt,bf) draw`` curves its DRAW into a quadratic Bezier whose control
point sits at the chord midpoint, displaced along the left normal by
0.5*|chord|*tan(clamp(bt+bf, -80, 80)/2) — endpoints unchanged; ``EMPTY``
with the pen down inks the current cell (a dot) and records a single-point
stroke, with the pen up it is a no-op.

The pen starts at the canvas center (0.5, 0.5), up.  While down, the
committed trajectory polyline (arc steps <= 0.25 px; straight segments
exactly) is inked via its supercover, so re-sampling it at any finer step
never adds cells.  Pen positions leaving [0,1]^2 are clamped and flagged on
a warning channel.  Coarse/fine pairs are summed at execution; only coarse
slots are relatable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .program import Call, Hole, Pinned, Program
from .vocab import CAT, COARSE, FINE, FunctionSig, ParamType, SequenceCaps, Vocabulary

PEN = "PEN"     # command-chain nonterminal
INK = "INK"     # ink-block nonterminal
DRAWN = "DRAWN"  # the stroke a BOW wraps

CANVAS = 28
MAX_ARC_STEP = 0.25 / CANVAS  # trajectory sampling step, canvas units
BOW_CLAMP_DEG = 80.0


def make_vocabulary() -> Vocabulary:
    ptypes = {
        "si": ParamType("si", tuple(range(13)), CAT),
        "dt": ParamType("dt", tuple(round(k / 8, 9) for k in range(9)), COARSE),
        "at": ParamType("at", tuple(round(360.0 * k / 8, 9) for k in range(9)), COARSE),
        "bt": ParamType("bt", tuple(90.0 * k for k in range(-2, 3)), COARSE),
        "mt": ParamType("mt", tuple(round(k / 4, 9) for k in range(5)), COARSE),
        "df": ParamType("df", tuple(round(k / 40, 9) for k in range(-2, 3)), FINE),
        "af": ParamType("af", tuple(9.0 * k for k in range(-2, 3)), FINE),
        "bf": ParamType("bf", tuple(30.0 * k for k in range(-1, 2)), FINE),
        "mf": ParamType("mf", tuple(round(k / 12, 9) for k in range(-1, 2)), FINE),
    }
    functions = {
        "ON": FunctionSig("ON", (), (INK, PEN), PEN),
        "OFF": FunctionSig("OFF", (), (INK, PEN), PEN),
        "MOVE": FunctionSig("MOVE", ("si", "mt", "mf"), (PEN,), PEN),
        "END": FunctionSig("END", (), (), PEN),
        "DRAW": FunctionSig("DRAW", ("at", "af", "dt", "df"), (), DRAWN),
        "BOW": FunctionSig("BOW", ("bt", "bf"), (DRAWN,), INK),
        "EMPTY": FunctionSig("EMPTY", (), (), INK),
    }
    # DRAW is both a bare ink block and the stroke under a BOW
    categories = {
        PEN: ("ON", "OFF", "MOVE", "END"),
        INK: ("DRAW", "BOW", "EMPTY"),
        DRAWN: ("DRAW",),
    }
    return Vocabulary(
        domain="stroke",
        param_types=ptypes,
        functions=functions,
        categories=categories,
        root_category=PEN,
        caps=SequenceCaps(template=64, fill=16, param=64),
    )


# ------------------------------------------------------------------- executor

class ExecutionError(ValueError):
    pass


@dataclass
class StrokeCanvas:
    cells: np.ndarray  # uint8 (28,28), 0/1
    warnings: list[str] = field(default_factory=list)

    def digest(self) -> bytes:
        return self.cells.tobytes()


@dataclass
class Polyline:
    """A committed trajectory: (n,2) float points in [0,1]^2 + provenance."""

    points: np.ndarray
    part: int       # pre-order rank of the originating DRAW/EMPTY node
    inked: bool     # drawn with the pen down?

    def arc_lengths(self) -> np.ndarray:
        d = np.diff(self.points, axis=0)
        return np.sqrt((d * d).sum(axis=1))

    def point_at_fraction(self, t: float) -> np.ndarray:
        t = min(max(t, 0.0), 1.0)
        pts = self.points
        if len(pts) == 1:
            return pts[0].copy()
        seg = self.arc_lengths()
        total = seg.sum()
        if total == 0.0:
            return pts[0].copy()
        target = t * total
        acc = 0.0
        for i, s in enumerate(seg):
            if acc + s >= target or i == len(seg) - 1:
                u = 0.0 if s == 0.0 else (target - acc) / s
                return pts[i] + u * (pts[i + 1] - pts[i])
            acc += s
        return pts[-1].copy()


def _value(vocab, node, slot_i):
    ann = node.args[slot_i]
    if not isinstance(ann, Pinned):
        raise ExecutionError(f"{node.fn}: unbound param (execute concrete programs)")
    tname = vocab.functions[node.fn].params[slot_i]
    return vocab.param_types[tname].values[ann.index]


def _bezier_points(p0, p1, bow_deg):
    """Quadratic Bezier polyline from p0 to p1, control point displaced from
    the chord midpoint along the left normal; arc steps <= MAX_ARC_STEP."""
    chord = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    if chord == 0.0:
        return np.array([p0, p1], dtype=np.float64)
    beta = max(-BOW_CLAMP_DEG, min(BOW_CLAMP_DEG, bow_deg))
    offset = 0.5 * chord * math.tan(math.radians(beta) / 2.0)
    nx = -(p1[1] - p0[1]) / chord
    ny = (p1[0] - p0[0]) / chord
    ctrl = ((p0[0] + p1[0]) / 2.0 + nx * offset,
            (p0[1] + p1[1]) / 2.0 + ny * offset)
    # upper bound on arc length: chord + 2*|offset| (control polygon)
    approx_len = chord + 2.0 * abs(offset)
    n = max(2, int(math.ceil(approx_len / MAX_ARC_STEP)))
    t = np.linspace(0.0, 1.0, n + 1)
    omt = 1.0 - t
    xs = omt * omt * p0[0] + 2 * omt * t * ctrl[0] + t * t * p1[0]
    ys = omt * omt * p0[1] + 2 * omt * t * ctrl[1] + t * t * p1[1]
    return np.stack([xs, ys], axis=1)


def execute(program: Program) -> tuple[StrokeCanvas, list[Polyline]]:
    """Concrete stroke program -> (canvas, committed polylines).

    Every polyline is returned (pen-up travel included, flagged ``inked=
    False``); only pen-down ones are inked and recorded as MOVE-indexable
    strokes.
    """
    vocab = program.vocab
    grid = np.zeros((CANVAS, CANVAS), dtype=np.uint8)
    warnings: list[str] = []
    polylines: list[Polyline] = []
    strokes: list[Polyline] = []  # MOVE-indexable (pen-down) ones
    pos = np.array([0.5, 0.5])
    down = [False]
    rank = [0]  # pre-order rank over all nodes, for part ids

    def clamp(p):
        q = np.clip(p, 0.0, 1.0)
        if not np.array_equal(q, p):
            warnings.append(
                f"pen left the canvas at ({p[0]:.4f}, {p[1]:.4f}); clamped")
        return q

    def commit(points: np.ndarray, part: int):
        nonlocal pos
        points = np.clip(points, 0.0, 1.0)
        pl = Polyline(points=points, part=part, inked=down[0])
        polylines.append(pl)
        if down[0]:
            grid_or(kernels.ink_polyline(points, CANVAS))
            strokes.append(pl)
        pos = points[-1].copy()

    def grid_or(other):
        np.maximum(grid, other, out=grid)

    def ev(node):
        if isinstance(node, Hole):
            raise ExecutionError("cannot execute a program with holes")
        my_rank = rank[0]
        rank[0] += 1
        fn = node.fn
        if fn == "END":
            return
        if fn in ("ON", "OFF"):
            down[0] = fn == "ON"
            ev(node.kids[0])   # ink block
            ev(node.kids[1])   # continuation
            return
        if fn == "MOVE":
            si = _value(vocab, node, 0)
            if si >= len(strokes):
                raise ExecutionError(
                    f"MOVE references stroke {si}, only {len(strokes)} recorded")
            t = _value(vocab, node, 1) + _value(vocab, node, 2)
            nonlocal pos
            pos = strokes[si].point_at_fraction(t)
            ev(node.kids[0])
            return
        if fn == "DRAW":
            ang = math.radians(_value(vocab, node, 0) + _value(vocab, node, 1))
            dist = _value(vocab, node, 2) + _value(vocab, node, 3)
            target = clamp(np.array([pos[0] + dist * math.cos(ang),
                                     pos[1] + dist * math.sin(ang)]))
            commit(np.array([pos, target]), my_rank)
            return
        if fn == "BOW":
            bow = _value(vocab, node, 0) + _value(vocab, node, 1)
            draw = node.kids[0]
            drank = rank[0]
            rank[0] += 1
            ang = math.radians(_value(vocab, draw, 0) + _value(vocab, draw, 1))
            dist = _value(vocab, draw, 2) + _value(vocab, draw, 3)
            target = clamp(np.array([pos[0] + dist * math.cos(ang),
                                     pos[1] + dist * math.sin(ang)]))
            pts = _bezier_points(tuple(pos), tuple(target), bow)
            commit(pts, drank)
            return
        if fn == "EMPTY":
            if down[0]:
                commit(pos[None, :].copy(), my_rank)
            return
        raise ExecutionError(f"no stroke semantics for {fn}")

    ev(program.root)
    return StrokeCanvas(grid, warnings), polylines


# --------------------------------------------------------------------- metric

_DIAGONAL = math.sqrt(2.0) * (CANVAS - 1)


def edge_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean NN distance between on-cell centers, normalized by the
    canvas diagonal; both empty -> 0, exactly one empty -> 1."""
    if a.shape != b.shape:
        raise ValueError(f"canvas shapes differ: {a.shape} vs {b.shape}")
    pa = np.argwhere(a > 0).astype(np.float64)
    pb = np.argwhere(b > 0).astype(np.float64)
    if len(pa) == 0 and len(pb) == 0:
        return 0.0
    if len(pa) == 0 or len(pb) == 0:
        return 1.0
    return float(kernels.chamfer_mean(pa, pb)) / _DIAGONAL


def metric_distance(a: np.ndarray, b: np.ndarray) -> float:
    return edge_chamfer(a, b)


# -------------------------------------------------------------------- exports

def to_pgm(cells: np.ndarray) -> bytes:
    """P5 image, ink black on white, rows flipped so +y points up."""
    h, w = cells.shape
    img = np.where(cells > 0, 0, 255).astype(np.uint8)[::-1]
    return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()


def to_packed_bits(cells: np.ndarray) -> bytes:
    """Row-major bit dump (row 0 = y just above 0), one bit per cell."""
    return np.packbits((cells > 0).astype(np.uint8), axis=None).tobytes()


def from_packed_bits(data: bytes, size: int = CANVAS) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if bits.size < size * size:
        raise ValueError(f"expected at least {size * size} bits")
    return bits[: size * size].reshape(size, size).astype(np.uint8)


def to_symbolic(cells: np.ndarray) -> bytes:
    """One byte per cell (0/1), row-major; mirrors the layout dump format."""
    return (cells > 0).astype(np.uint8).tobytes()


def from_symbolic(data: bytes, size: int = CANVAS) -> np.ndarray:
    arr = np.frombuffer(data, dtype=np.uint8)
    if arr.size != size * size:
        raise ValueError(f"expected {size * size} bytes, got {arr.size}")
    if arr.max(initial=0) > 1:
        raise ValueError("cell value out of range 0..1")
    return arr.reshape(size, size).copy()


def ingest_image(path, threshold: float = 0.5) -> np.ndarray:
    """Load an external character image: grayscale, nearest-resize to 28x28,
    binarize at ``threshold`` (ink = darker than threshold), flip to y-up."""
    from PIL import Image

    img = Image.open(path).convert("L").resize((CANVAS, CANVAS),
                                               Image.NEAREST)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    cells = (arr < threshold).astype(np.uint8)
    return cells[::-1].copy()
