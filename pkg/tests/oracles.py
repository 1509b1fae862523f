"""Brute-force reference implementations used by the test suite.

Everything here is written straight from the documented conventions
(cell-center point-in-shape tests, continuous supercover via gridline
crossings, exhaustive grammar enumeration) without reusing the package's
kernels, cursors, or search code, so the tests compare two independent
derivations of each answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from templar import domains
from templar.program import FREE, Call, Hole, Pinned, Program, Shared

# ------------------------------------------------------------- layout oracle

_PALETTE = {"grey": 1, "red": 2, "green": 3, "blue": 4}


@dataclass
class Shape:
    """Hand-derived instance: kind, center, half extents, palette color."""
    kind: str
    cx: float
    cy: float
    hw: float
    hh: float
    color: int


def inside(s: Shape, x: float, y: float) -> bool:
    dx, dy = x - s.cx, y - s.cy
    if s.kind == "square":
        return abs(dx) <= s.hw and abs(dy) <= s.hh
    if s.kind == "circle":
        return (dx / s.hw) ** 2 + (dy / s.hh) ** 2 <= 1.0
    if s.kind == "triangle":
        if not (-s.hh <= dy <= s.hh):
            return False
        return abs(dx) <= s.hw * (s.hh - dy) / (2.0 * s.hh)
    raise ValueError(s.kind)


def layout_raster(shapes: list[Shape], size: int = 64) -> np.ndarray:
    """Painter's-algorithm raster from cell-center point-in-shape tests."""
    grid = np.zeros((size, size), dtype=np.uint8)
    for r in range(size):
        y = (r + 0.5) / (size / 2.0) - 1.0
        for c in range(size):
            x = (c + 0.5) / (size / 2.0) - 1.0
            for s in shapes:          # later shapes overwrite
                if inside(s, x, y):
                    grid[r, c] = s.color
    return grid


# ------------------------------------------------------------- stroke oracle

def cell_of(u: float, size: int) -> int:
    return min(int(math.floor(u * size)), size - 1)


def supercover_cells(points: np.ndarray, size: int = 28) -> set:
    """Exact cell set visited by the continuous point->cell map along a
    polyline: split every segment at its gridline crossings and take the
    cell of each sub-interval midpoint (plus every breakpoint's own cell)."""
    cells = set()
    pts = np.asarray(points, dtype=np.float64)
    for p in pts:
        cells.add((cell_of(p[1], size), cell_of(p[0], size)))
    for a, b in zip(pts[:-1], pts[1:]):
        ts = {0.0, 1.0}
        for axis in (0, 1):
            lo, hi = sorted((a[axis], b[axis]))
            k0 = math.ceil(lo * size)
            k1 = math.floor(hi * size)
            for k in range(k0, k1 + 1):
                denom = b[axis] - a[axis]
                if denom != 0.0:
                    ts.add((k / size - a[axis]) / denom)
        ts = sorted(t for t in ts if 0.0 <= t <= 1.0)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            tm = (t0 + t1) / 2.0
            x = a[0] + tm * (b[0] - a[0])
            y = a[1] + tm * (b[1] - a[1])
            cells.add((cell_of(y, size), cell_of(x, size)))
        for t in ts:
            x = a[0] + t * (b[0] - a[0])
            y = a[1] + t * (b[1] - a[1])
            cells.add((cell_of(y, size), cell_of(x, size)))
    return cells


def bezier_dense(p0, p1, bow_deg: float, step: float = 0.025 / 28.0):
    """Quadratic Bezier sampled at ~step arc spacing (10x finer than the
    executor's committed polyline)."""
    chord = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    if chord == 0.0:
        return np.array([p0, p1], dtype=np.float64)
    beta = max(-80.0, min(80.0, bow_deg))
    off = 0.5 * chord * math.tan(math.radians(beta) / 2.0)
    nx = -(p1[1] - p0[1]) / chord
    ny = (p1[0] - p0[0]) / chord
    ctrl = ((p0[0] + p1[0]) / 2.0 + nx * off,
            (p0[1] + p1[1]) / 2.0 + ny * off)
    n = max(2, int(math.ceil((chord + 2 * abs(off)) / step)))
    t = np.linspace(0.0, 1.0, n + 1)
    omt = 1.0 - t
    xs = omt * omt * p0[0] + 2 * omt * t * ctrl[0] + t * t * p1[0]
    ys = omt * omt * p0[1] + 2 * omt * t * ctrl[1] + t * t * p1[1]
    return np.stack([xs, ys], axis=1)


@dataclass
class PenStep:
    """One ink block of the simulated pen: the trajectory and whether the
    pen was down for it."""
    points: np.ndarray
    down: bool


def simulate_pen(steps: list[tuple]) -> list[PenStep]:
    """Independent pen simulation from a hand-written step list.

    Steps: ("on",) / ("off",) set contact; ("draw", angle_deg, dist) and
    ("bow", bow_deg, angle_deg, dist) advance the pen; ("empty",) holds it
    (a dot when down); ("teleport", x, y) stands in for MOVE at a known
    point.  Positions clamp to [0,1]^2 like the executor.
    """
    pos = np.array([0.5, 0.5])
    down = False
    out = []
    for st in steps:
        op = st[0]
        if op in ("on", "off"):
            down = op == "on"
        elif op == "teleport":
            pos = np.array([st[1], st[2]], dtype=np.float64)
        elif op == "empty":
            if down:
                out.append(PenStep(pos[None, :].copy(), True))
        else:
            if op == "draw":
                ang, dist = math.radians(st[1]), st[2]
                bow = 0.0
            else:
                bow, ang, dist = st[1], math.radians(st[2]), st[3]
            target = np.clip(np.array([pos[0] + dist * math.cos(ang),
                                       pos[1] + dist * math.sin(ang)]),
                             0.0, 1.0)
            if op == "draw":
                pts = np.stack([pos, target])
            else:
                pts = bezier_dense(tuple(pos), tuple(target), bow)
            out.append(PenStep(pts, down))
            pos = target
    return out


def stroke_raster(steps: list[tuple], size: int = 28) -> np.ndarray:
    grid = np.zeros((size, size), dtype=np.uint8)
    for step in simulate_pen(steps):
        if step.down:
            for r, c in supercover_cells(step.points, size):
                grid[r, c] = 1
    return grid


# --------------------------------------------------- toy grammar enumeration

def toy_templates() -> list[Program]:
    """Every template of the layout-toy vocabulary, derived from the
    documented rules: structures within the 4-token budget are (HOLE),
    (Prim s), (Color s (HOLE)) and (Color s (Prim s)); each categorical
    slot is Pinned to one of its 3 values, Free, or opens a fresh shared
    variable (slots of different value sets can never reuse a variable, so
    variables here are always fresh, numbered in slot order)."""
    vocab = domains.get_vocab("layout-toy")

    def slot_options(next_var):
        opts = [Pinned(i) for i in range(3)] + [FREE, Shared(next_var)]
        return opts

    out = [Program(Hole("CHAIN"), vocab)]
    for s in slot_options(0):
        out.append(Program(Call("Prim", (s,), ()), vocab))
        out.append(Program(Call("Color", (s,), (Hole("CHAIN"),)), vocab))
    for s1 in slot_options(0):
        nxt = 1 if isinstance(s1, Shared) else 0
        for s2 in slot_options(nxt):
            out.append(Program(
                Call("Color", (s1,), (Call("Prim", (s2,), ()),)), vocab))
    return out


def toy_instantiations(tp: Program) -> list[Program]:
    """Every concrete program conforming to a toy template.

    Holes admit exactly one structure within the 2-token fill cap, (Prim
    <free>); every Free slot and every shared variable then ranges over its
    3 values independently."""
    vocab = tp.vocab

    def expand_holes(node):
        if isinstance(node, Hole):
            return Call("Prim", (FREE,), ())
        if not node.kids:
            return node
        return Call(node.fn, node.args,
                    tuple(expand_holes(k) for k in node.kids))

    root = expand_holes(tp.root)

    # collect choice points: shared var ids and free-slot positions
    var_ids = set()
    n_free = [0]

    def count(node):
        for a in node.args:
            if isinstance(a, Shared):
                var_ids.add(a.var)
            elif a is FREE:
                n_free[0] += 1
        for k in node.kids:
            count(k)

    count(root)
    var_ids = sorted(var_ids)

    out = []
    choices = [range(3)] * (len(var_ids) + n_free[0])

    def assign(node, var_val, free_vals, pos):
        args = []
        for a in node.args:
            if isinstance(a, Shared):
                args.append(Pinned(var_val[a.var]))
            elif a is FREE:
                args.append(Pinned(free_vals[pos[0]]))
                pos[0] += 1
            else:
                args.append(a)
        kids = tuple(assign(k, var_val, free_vals, pos) for k in node.kids)
        return Call(node.fn, tuple(args), kids)

    import itertools
    for combo in itertools.product(*choices) if choices else [()]:
        var_val = {v: combo[i] for i, v in enumerate(var_ids)}
        free_vals = combo[len(var_ids):]
        out.append(Program(
            assign(root, var_val, list(free_vals), [0]), vocab))
    return out


def toy_brute_force(canvases, weights) -> tuple[float, list]:
    """Exhaustive argmin of the group objective over the whole toy space.

    Returns (best objective, list of templates achieving it)."""
    from templar.program import description_length
    spec = domains.get_domain("layout-toy")
    best_val, best_tps = math.inf, []
    for tp in toy_templates():
        dl_tp = description_length(tp)
        total = 0.0
        for x in canvases:
            m_best = math.inf
            for z in toy_instantiations(tp):
                cells, _ = spec.execute(z)
                score = (weights.w_rec * spec.metric_distance(x, cells)
                         + weights.w_len
                         * (description_length(z) - dl_tp))
                m_best = min(m_best, score)
            total += m_best
        if total < best_val - 1e-12:
            best_val, best_tps = total, [tp]
        elif abs(total - best_val) <= 1e-12:
            best_tps.append(tp)
    return best_val, best_tps
