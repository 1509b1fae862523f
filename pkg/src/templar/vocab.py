"""Token vocabulary shared by every domain.

A domain is described by a :class:`Vocabulary`: a set of param types (finite
value lists), function signatures (param slots + child categories), and the
category table that says which functions may fill which child slot.  On top of
that the vocabulary enumerates a flat integer token table used by the
sequence code and the models:

    Start, End,
    one token per function symbol,
    one token per (param type, value index),
    Hole 0..MAX_HOLES-1,
    param sentinel 0..MAX_SENTINELS-1,
    shared var 0..MAX_SHARED-1.

Caps are hard construction-time limits, never silent truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

MAX_HOLES = 5
MAX_SENTINELS = 64
MAX_SHARED = 4

# token kind tags
K_START = "start"
K_END = "end"
K_FUNC = "func"
K_VALUE = "value"
K_HOLE = "hole"
K_SENTINEL = "sentinel"
K_SHARED = "shared"

CAT = "cat"       # categorical: identity-valued symbols, small ints
COARSE = "coarse"  # quantized numeric, relatable
FINE = "fine"      # small continuous jitter, never relatable


@dataclass(frozen=True)
class ParamType:
    """A named finite value set.  ``kind`` drives relatability."""

    name: str
    values: tuple
    kind: str  # CAT | COARSE | FINE

    def __post_init__(self):
        assert self.kind in (CAT, COARSE, FINE), self.kind
        assert len(self.values) > 0

    @property
    def relatable(self) -> bool:
        return self.kind != FINE

    def index_of(self, value) -> int:
        """Value -> index, with tolerant float matching (1e-9)."""
        vals = self.values
        if isinstance(value, float):
            for i, v in enumerate(vals):
                if isinstance(v, (int, float)) and abs(float(v) - value) < 1e-9:
                    return i
            raise KeyError(f"{value!r} not in value set of {self.name}")
        try:
            return vals.index(value)
        except ValueError:
            raise KeyError(f"{value!r} not in value set of {self.name}") from None


@dataclass(frozen=True)
class FunctionSig:
    """A function symbol: ordered param slots and ordered child categories."""

    name: str
    params: tuple[str, ...]    # param-type names, one per slot
    children: tuple[str, ...]  # category names, one per child
    category: str              # category this function belongs to


@dataclass(frozen=True)
class SequenceCaps:
    template: int = 64   # linearized template length incl. Start/End
    fill: int = 16       # per-hole fill token count
    param: int = 72      # param-target length (prompt+value pairs)


@dataclass
class Vocabulary:
    """A domain grammar plus its flat token table."""

    domain: str
    param_types: dict[str, ParamType]
    functions: dict[str, FunctionSig]
    categories: dict[str, tuple[str, ...]]  # category -> admissible functions
    root_category: str
    caps: SequenceCaps = field(default_factory=SequenceCaps)
    max_instances: int = 20  # layout scene budget; unused by stroke

    def __post_init__(self):
        for fs in self.functions.values():
            for p in fs.params:
                assert p in self.param_types, f"{fs.name}: unknown param type {p}"
            for c in fs.children:
                assert c in self.categories, f"{fs.name}: unknown category {c}"
            assert fs.category in self.categories
        for cat, fns in self.categories.items():
            for fn in fns:
                assert fn in self.functions, f"category {cat}: unknown function {fn}"
        self._build_token_table()

    # ------------------------------------------------------------------ tokens
    def _build_token_table(self):
        toks: list[tuple] = [(K_START,), (K_END,)]
        for fname in self.functions:
            toks.append((K_FUNC, fname))
        for tname, pt in self.param_types.items():
            for i in range(len(pt.values)):
                toks.append((K_VALUE, tname, i))
        for h in range(MAX_HOLES):
            toks.append((K_HOLE, h))
        for s in range(MAX_SENTINELS):
            toks.append((K_SENTINEL, s))
        for v in range(MAX_SHARED):
            toks.append((K_SHARED, v))
        self._tokens = toks
        self._ids = {t: i for i, t in enumerate(toks)}

    @property
    def n_tokens(self) -> int:
        return len(self._tokens)

    @property
    def start_id(self) -> int:
        return 0

    @property
    def end_id(self) -> int:
        return 1

    def func_id(self, name: str) -> int:
        return self._ids[(K_FUNC, name)]

    def value_id(self, ptype: str, index: int) -> int:
        if not 0 <= index < len(self.param_types[ptype].values):
            raise KeyError(f"value index {index} out of range for {ptype}")
        return self._ids[(K_VALUE, ptype, index)]

    def hole_id(self, slot: int) -> int:
        if not 0 <= slot < MAX_HOLES:
            raise ValueError(f"hole slot {slot} out of range")
        return self._ids[(K_HOLE, slot)]

    def sentinel_id(self, slot: int) -> int:
        if not 0 <= slot < MAX_SENTINELS:
            raise ValueError(f"sentinel slot {slot} out of range")
        return self._ids[(K_SENTINEL, slot)]

    def shared_id(self, var: int) -> int:
        if not 0 <= var < MAX_SHARED:
            raise ValueError(f"shared var {var} out of range")
        return self._ids[(K_SHARED, var)]

    def token(self, tid: int) -> tuple:
        return self._tokens[tid]

    def token_str(self, tid: int) -> str:
        t = self._tokens[tid]
        k = t[0]
        if k == K_START:
            return "<s>"
        if k == K_END:
            return "</s>"
        if k == K_FUNC:
            return t[1]
        if k == K_VALUE:
            return f"{t[1]}={self.param_types[t[1]].values[t[2]]}"
        if k == K_HOLE:
            return f"HOLE{t[1]}"
        if k == K_SENTINEL:
            return f"?{t[1]}"
        if k == K_SHARED:
            return f"V{t[1]}"
        raise AssertionError(t)

    # ------------------------------------------------------------- conveniences
    def sig(self, name: str) -> FunctionSig:
        return self.functions[name]

    def ptype(self, name: str) -> ParamType:
        return self.param_types[name]

    def category_functions(self, cat: str) -> tuple[str, ...]:
        return self.categories[cat]

    def same_value_set(self, t1: str, t2: str) -> bool:
        """Shared vars may only join slots whose types carry identical values."""
        return self.param_types[t1].values == self.param_types[t2].values
