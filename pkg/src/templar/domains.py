"""Registry binding a vocabulary name to its executable semantics."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

from . import layout, stroke
from .program import Program


class NullContext:
    """Generation/decoding context for domains without sequential state."""

    __slots__ = ()

    def copy(self):
        return self

    def legal_functions(self, vocab, category):
        return vocab.categories[category]

    def legal_value_indices(self, pt):
        return range(len(pt.values))

    def after_function(self, fn: str) -> None:
        pass

    def after_hole(self, category: str) -> None:
        pass


class StrokeContext:
    """Tracks pen contact and recorded-stroke count along the pre-order walk
    so MOVE commands and stroke indices stay resolvable by construction.

    ``bonus`` counts passed ink-block holes (each may record at most one
    stroke), so template decoding stays permissive where fills are unknown;
    the executor still guards.
    """

    __slots__ = ("down", "count", "bonus")

    def __init__(self, down=False, count=0, bonus=0):
        self.down = down
        self.count = count
        self.bonus = bonus

    def copy(self):
        return StrokeContext(self.down, self.count, self.bonus)

    def legal_functions(self, vocab, category):
        fns = vocab.categories[category]
        if category == stroke.PEN and self.count + self.bonus == 0:
            fns = tuple(f for f in fns if f != "MOVE")
        return fns

    def legal_value_indices(self, pt):
        if pt.name == "si":
            return range(min(self.count + self.bonus, len(pt.values)))
        return range(len(pt.values))

    def after_function(self, fn: str) -> None:
        if fn == "ON":
            self.down = True
        elif fn == "OFF":
            self.down = False
        elif fn in ("DRAW", "EMPTY") and self.down:
            self.count += 1

    def after_hole(self, category: str) -> None:
        if category in (stroke.INK, stroke.DRAWN):
            self.bonus += 1
        # a PEN hole swallows the rest of its chain: nothing follows it there


@dataclass(frozen=True)
class DomainSpec:
    name: str
    make_vocab: Callable
    execute: Callable        # Program -> (cells ndarray, payload)
    metric_distance: Callable
    canvas_size: int
    palette_size: int        # symbolic cell value count
    context_factory: Callable
    render: Callable         # cells -> image bytes (PPM/PGM)
    to_symbolic: Callable
    from_symbolic: Callable
    execution_error: type
    content_fns: tuple = ()  # function names whose nodes own visible content


def _layout_exec(program: Program):
    canvas, scene = layout.execute(program)
    return canvas.cells, {"instances": scene, "provenance": canvas.provenance}


def _stroke_exec(program: Program):
    canvas, polylines = stroke.execute(program)
    return canvas.cells, {"polylines": polylines, "warnings": canvas.warnings}


_REGISTRY: dict[str, DomainSpec] = {}


def register(spec: DomainSpec) -> None:
    _REGISTRY[spec.name] = spec


def get_domain(name: str) -> DomainSpec:
    if name not in _REGISTRY:
        raise KeyError(
            f"unknown domain {name!r}; known: {', '.join(sorted(_REGISTRY))}")
    return _REGISTRY[name]


def domain_names() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


@lru_cache(maxsize=None)
def get_vocab(name: str):
    """Vocabulary for a registered domain (built once, shared)."""
    return get_domain(name).make_vocab()


for _name, _mk in (("layout", layout.make_vocabulary),
                   ("layout-toy", layout.make_toy_vocabulary),
                   ("layout-desk", layout.make_desk_vocabulary)):
    register(DomainSpec(
        name=_name,
        make_vocab=_mk,
        execute=_layout_exec,
        metric_distance=layout.metric_distance,
        canvas_size=layout.CANVAS,
        palette_size=5,
        context_factory=NullContext,
        render=layout.to_ppm,
        to_symbolic=layout.to_symbolic,
        from_symbolic=layout.from_symbolic,
        execution_error=layout.ExecutionError,
        content_fns=("Prim",),
    ))

register(DomainSpec(
    name="stroke",
    make_vocab=stroke.make_vocabulary,
    execute=_stroke_exec,
    metric_distance=stroke.metric_distance,
    canvas_size=stroke.CANVAS,
    palette_size=2,
    context_factory=StrokeContext,
    render=stroke.to_pgm,
    to_symbolic=stroke.to_symbolic,
    from_symbolic=stroke.from_symbolic,
    execution_error=stroke.ExecutionError,
    content_fns=("DRAW", "EMPTY"),
))
