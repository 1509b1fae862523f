"""2D layout domain: colored primitives on a 64x64 five-valued canvas.

Functions (post-order scene semantics; operators are unary except UNION):

* ``Prim(ptype)``       emit one grey unit instance (half-extent 0.1) at the origin
* ``Scale(wt,wf,ht,hf)`` multiply sub-scene positions and extents about the origin
* ``Move(xt,xf,yt,yf)``  translate the sub-scene
* ``Color(ctype)``       recolor every instance in the sub-scene
* ``SymReflect(axis)``   append a copy mirrored in the named coordinate
* ``SymRotate(n)``       n copies rotated about the origin at 360/n increments
* ``SymTranslate(n,...)`` n copies stepped by the given offset
* ``UNION``              left scene then right scene (right paints on top)

Coarse/fine pairs (xt+xf etc.) are summed at execution; only coarse slots are
relatable.  Instances carry no orientation: mirrored/rotated squares and
triangles are re-fit axis-aligned inside the transformed footprint's
bounding box (exact where the footprint is symmetric; a documented visual
approximation otherwise).  Scenes of more than 20 instances are an error.

Grammar categories mirror the two source nonterminals: SCENE (union or
chain) and CHAIN (operator chains; UNION may not be a direct UNION child).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .program import Call, Hole, Pinned, Program, ProgramError, walk
from .vocab import CAT, COARSE, FINE, FunctionSig, ParamType, SequenceCaps, Vocabulary

SCENE = "SCENE"
CHAIN = "CHAIN"

CANVAS = 64
EMPTY, GREY, RED, GREEN, BLUE = 0, 1, 2, 3, 4
_COLOR_INDEX = {"grey": GREY, "red": RED, "green": GREEN, "blue": BLUE}

# palette for PPM export
PALETTE = {
    EMPTY: (0xFF, 0xFF, 0xFF),
    GREY: (0x80, 0x80, 0x80),
    RED: (0xE0, 0x30, 0x30),
    GREEN: (0x30, 0xB0, 0x30),
    BLUE: (0x30, 0x50, 0xE0),
}

_SHAPE_IDS = {"square": 0, "circle": 1, "triangle": 2}


def _frange(lo_num, step_den, count, offset=0.0, scale=1.0):
    return tuple(round(scale * (lo_num + i) / step_den + offset, 9)
                 for i in range(count))


def make_vocabulary() -> Vocabulary:
    ptypes = {
        "axis": ParamType("axis", ("X", "Y"), CAT),
        "ctype": ParamType("ctype", ("red", "green", "blue"), CAT),
        "ptype": ParamType("ptype", ("square", "circle", "triangle"), CAT),
        "n": ParamType("n", tuple(range(1, 7)), CAT),
        "xt": ParamType("xt", _frange(-3, 4, 7), COARSE),
        "yt": ParamType("yt", _frange(-3, 4, 7), COARSE),
        "wt": ParamType("wt", tuple(round(0.35 * k - 0.15, 9) for k in range(1, 7)), COARSE),
        "ht": ParamType("ht", tuple(round(0.35 * k - 0.15, 9) for k in range(1, 7)), COARSE),
        "xf": ParamType("xf", tuple(round(k / 20 - 0.025, 9) for k in range(-2, 4)), FINE),
        "yf": ParamType("yf", tuple(round(k / 20 - 0.025, 9) for k in range(-2, 4)), FINE),
        "wf": ParamType("wf", _frange(-3, 20, 7), FINE),
        "hf": ParamType("hf", _frange(-3, 20, 7), FINE),
    }
    chain_fns = ("SymReflect", "SymRotate", "SymTranslate", "Color", "Move",
                 "Scale", "Prim")
    functions = {
        "UNION": FunctionSig("UNION", (), (CHAIN, CHAIN), SCENE),
        "SymReflect": FunctionSig("SymReflect", ("axis",), (SCENE,), CHAIN),
        "SymRotate": FunctionSig("SymRotate", ("n",), (SCENE,), CHAIN),
        "SymTranslate": FunctionSig(
            "SymTranslate", ("n", "xt", "xf", "yt", "yf"), (SCENE,), CHAIN),
        "Color": FunctionSig("Color", ("ctype",), (SCENE,), CHAIN),
        "Move": FunctionSig("Move", ("xt", "xf", "yt", "yf"), (SCENE,), CHAIN),
        "Scale": FunctionSig("Scale", ("wt", "wf", "ht", "hf"), (SCENE,), CHAIN),
        "Prim": FunctionSig("Prim", ("ptype",), (), CHAIN),
    }
    return Vocabulary(
        domain="layout",
        param_types=ptypes,
        functions=functions,
        categories={SCENE: ("UNION",) + chain_fns, CHAIN: chain_fns},
        root_category=SCENE,
        caps=SequenceCaps(template=64, fill=16, param=72),
        max_instances=20,
    )


def make_toy_vocabulary() -> Vocabulary:
    """Tiny sub-domain (Color/Prim) whose caps bound the whole search space
    to a few hundred (template, program) combinations, small enough for
    exhaustive-enumeration oracles; executor semantics are the full domain's."""
    ptypes = {
        "ctype": ParamType("ctype", ("red", "green", "blue"), CAT),
        "ptype": ParamType("ptype", ("square", "circle", "triangle"), CAT),
    }
    functions = {
        "Color": FunctionSig("Color", ("ctype",), (CHAIN,), CHAIN),
        "Prim": FunctionSig("Prim", ("ptype",), (), CHAIN),
    }
    return Vocabulary(
        domain="layout-toy",
        param_types=ptypes,
        functions=functions,
        categories={CHAIN: ("Color", "Prim")},
        root_category=CHAIN,
        caps=SequenceCaps(template=6, fill=2, param=16),
        max_instances=20,
    )


def make_desk_vocabulary() -> Vocabulary:
    """Mid-size sub-domain for end-to-end fixtures: Move/Color/Prim/UNION with
    the full coarse/fine offset sets."""
    full = make_vocabulary()
    ptypes = {k: full.param_types[k]
              for k in ("ctype", "ptype", "xt", "yt", "xf", "yf")}
    chain_fns = ("Color", "Move", "Prim")
    functions = {
        "UNION": FunctionSig("UNION", (), (CHAIN, CHAIN), SCENE),
        "Color": FunctionSig("Color", ("ctype",), (SCENE,), CHAIN),
        "Move": FunctionSig("Move", ("xt", "xf", "yt", "yf"), (SCENE,), CHAIN),
        "Prim": FunctionSig("Prim", ("ptype",), (), CHAIN),
    }
    return Vocabulary(
        domain="layout-desk",
        param_types=ptypes,
        functions=functions,
        categories={SCENE: ("UNION",) + chain_fns, CHAIN: chain_fns},
        root_category=SCENE,
        caps=SequenceCaps(template=64, fill=8, param=72),
        max_instances=20,
    )


# ---------------------------------------------------------------------- scene

@dataclass(frozen=True)
class Instance:
    """One primitive occurrence: axis-aligned footprint + color + provenance."""

    shape: str            # square | circle | triangle
    cx: float
    cy: float
    hw: float             # half extents
    hh: float
    color: int            # palette index (GREY..BLUE)
    part: int             # pre-order rank of the originating Prim node
    order: int = 0        # draw order, assigned at scene completion


class ExecutionError(ValueError):
    """Executor rejection (scene overflow, bad references, ...)."""


def _value(vocab, node, slot_i):
    ann = node.args[slot_i]
    if not isinstance(ann, Pinned):
        raise ExecutionError(f"{node.fn}: unbound param (execute concrete programs)")
    tname = vocab.functions[node.fn].params[slot_i]
    return vocab.param_types[tname].values[ann.index]


def _rot_footprint(inst: Instance, theta: float) -> Instance:
    """Rotate an instance footprint about the origin; re-fit the bounding box."""
    cs, sn = math.cos(theta), math.sin(theta)
    if inst.shape == "circle":
        # circle footprint rotates to a circle at the rotated center
        cx = inst.cx * cs - inst.cy * sn
        cy = inst.cx * sn + inst.cy * cs
        return replace(inst, cx=cx, cy=cy)
    if inst.shape == "triangle":
        corners = [(inst.cx, inst.cy + inst.hh),
                   (inst.cx - inst.hw, inst.cy - inst.hh),
                   (inst.cx + inst.hw, inst.cy - inst.hh)]
    else:
        corners = [(inst.cx - inst.hw, inst.cy - inst.hh),
                   (inst.cx + inst.hw, inst.cy - inst.hh),
                   (inst.cx - inst.hw, inst.cy + inst.hh),
                   (inst.cx + inst.hw, inst.cy + inst.hh)]
    rx = [x * cs - y * sn for x, y in corners]
    ry = [x * sn + y * cs for x, y in corners]
    cx = (min(rx) + max(rx)) / 2.0
    cy = (min(ry) + max(ry)) / 2.0
    return replace(inst, cx=cx, cy=cy,
                   hw=(max(rx) - min(rx)) / 2.0, hh=(max(ry) - min(ry)) / 2.0)


def build_scene(program: Program) -> list[Instance]:
    """Post-order evaluation to a draw-ordered instance list."""
    vocab = program.vocab
    prim_rank = [0]

    def ev(node) -> list[Instance]:
        if isinstance(node, Hole):
            raise ExecutionError("cannot execute a program with holes")
        fn = node.fn
        if fn == "Prim":
            part = prim_rank[0]
            prim_rank[0] += 1
            return [Instance(_value(vocab, node, 0), 0.0, 0.0, 0.1, 0.1,
                             GREY, part)]
        if fn == "UNION":
            return ev(node.kids[0]) + ev(node.kids[1])
        sub = ev(node.kids[0])
        if fn == "Color":
            col = _COLOR_INDEX[_value(vocab, node, 0)]
            return [replace(i, color=col) for i in sub]
        if fn == "Move":
            dx = _value(vocab, node, 0) + _value(vocab, node, 1)
            dy = _value(vocab, node, 2) + _value(vocab, node, 3)
            return [replace(i, cx=i.cx + dx, cy=i.cy + dy) for i in sub]
        if fn == "Scale":
            sx = _value(vocab, node, 0) + _value(vocab, node, 1)
            sy = _value(vocab, node, 2) + _value(vocab, node, 3)
            return [replace(i, cx=i.cx * sx, cy=i.cy * sy,
                            hw=i.hw * sx, hh=i.hh * sy) for i in sub]
        if fn == "SymReflect":
            axis = _value(vocab, node, 0)
            if axis == "X":
                mirrored = [replace(i, cx=-i.cx) for i in sub]
            else:
                mirrored = [replace(i, cy=-i.cy) for i in sub]
            return sub + mirrored
        if fn == "SymRotate":
            n = _value(vocab, node, 0)
            out = []
            for k in range(n):
                theta = 2.0 * math.pi * k / n
                if k == 0:
                    out.extend(sub)
                else:
                    out.extend(_rot_footprint(i, theta) for i in sub)
            return out
        if fn == "SymTranslate":
            n = _value(vocab, node, 0)
            dx = _value(vocab, node, 1) + _value(vocab, node, 2)
            dy = _value(vocab, node, 3) + _value(vocab, node, 4)
            return [replace(i, cx=i.cx + k * dx, cy=i.cy + k * dy)
                    for k in range(n) for i in sub]
        raise ExecutionError(f"no layout semantics for {fn}")

    scene = ev(program.root)
    if len(scene) > vocab.max_instances:
        raise ExecutionError(
            f"scene has {len(scene)} instances, budget is {vocab.max_instances}")
    return [replace(i, order=k) for k, i in enumerate(scene)]


@dataclass
class LayoutCanvas:
    """64x64 palette-indexed grid plus per-cell instance provenance."""

    cells: np.ndarray       # uint8 (64,64), values 0..4
    provenance: np.ndarray  # int32 (64,64), painting instance index or -1

    def digest(self) -> bytes:
        return self.cells.tobytes()


def rasterize(scene: list[Instance]) -> LayoutCanvas:
    shapes = np.array([_SHAPE_IDS[i.shape] for i in scene], dtype=np.int64)
    cx = np.array([i.cx for i in scene], dtype=np.float64)
    cy = np.array([i.cy for i in scene], dtype=np.float64)
    hw = np.array([i.hw for i in scene], dtype=np.float64)
    hh = np.array([i.hh for i in scene], dtype=np.float64)
    colors = np.array([i.color for i in scene], dtype=np.uint8)
    cells, prov = kernels.paint_layout(shapes, cx, cy, hw, hh, colors, CANVAS)
    return LayoutCanvas(cells, prov)


def execute(program: Program) -> tuple[LayoutCanvas, list[Instance]]:
    """Concrete layout program -> (canvas, draw-ordered instances)."""
    scene = build_scene(program)
    return rasterize(scene), scene


# --------------------------------------------------------------------- metric

def color_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Occupied-and-same-color intersection over occupied union; empty/empty -> 1."""
    if a.shape != b.shape:
        raise ValueError(f"canvas shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero((a > 0) | (b > 0)))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero((a > 0) & (a == b)))
    return inter / union


def metric_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized [0,1] reconstruction distance used by the objective."""
    return 1.0 - color_iou(a, b)


# -------------------------------------------------------------------- exports

def to_ppm(cells: np.ndarray) -> bytes:
    """P6 image, rows flipped so +y points up."""
    h, w = cells.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    for v, c in PALETTE.items():
        rgb[cells == v] = c
    rgb = rgb[::-1]
    return b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes()


def to_symbolic(cells: np.ndarray) -> bytes:
    """One byte per cell, values 0-4, row-major (row 0 = y just above -1)."""
    return cells.astype(np.uint8).tobytes()


def from_symbolic(data: bytes, size: int = CANVAS) -> np.ndarray:
    arr = np.frombuffer(data, dtype=np.uint8)
    if arr.size != size * size:
        raise ValueError(f"expected {size * size} bytes, got {arr.size}")
    if arr.max(initial=0) > BLUE:
        raise ValueError("cell value out of range 0..4")
    return arr.reshape(size, size).copy()
