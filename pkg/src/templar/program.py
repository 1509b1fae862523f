"""Program trees with holes and parameter relations.

One value type, :class:`Program`, covers the three degrees of bindedness; the
classification is derived from the tree, never declared:

* ``template``  - at least one Hole node;
* ``expansion`` - hole-free but at least one Free/Shared slot;
* ``concrete``  - hole-free and every slot Pinned.

A zero-hole template is therefore structurally identical to its expansion,
which is exactly how parsing classifies it.

Param slot annotations are ``Pinned(index)`` (index into the type's value
set), ``Shared(var)`` (var id < 4), or ``FREE`` (None).  Non-relatable (fine)
slots may only be Free or Pinned: pinned in concrete programs, free anywhere a
free/shared/hole appears.  Annotation caps (5 holes / 4 shared vars) are
construction errors, never silent truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .vocab import FINE, MAX_HOLES, MAX_SHARED, Vocabulary

FREE = None


@dataclass(frozen=True)
class Pinned:
    index: int


@dataclass(frozen=True)
class Shared:
    var: int


Ann = Union[Pinned, Shared, None]


@dataclass(frozen=True)
class Hole:
    category: str


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple[Ann, ...]
    kids: tuple["Node", ...] = ()


Node = Union[Call, Hole]
Path = tuple[int, ...]


class ProgramError(ValueError):
    """Ill-formed program construction or operation."""


@dataclass(frozen=True)
class Program:
    """A well-typed tree; see module docstring for the kind classification."""

    root: Node
    vocab: Vocabulary = field(compare=False, repr=False)
    # where expand() put the fills; provenance only, excluded from equality
    fill_paths: Optional[tuple[Path, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        _validate(self.root, self.vocab)

    # ------------------------------------------------------------------ shape
    @property
    def kind(self) -> str:
        holes = free = shared = 0
        for node, _ in walk(self.root):
            if isinstance(node, Hole):
                holes += 1
            else:
                for a in node.args:
                    if a is FREE:
                        free += 1
                    elif isinstance(a, Shared):
                        shared += 1
        if holes:
            return "template"
        if free or shared:
            return "expansion"
        return "concrete"

    @property
    def n_holes(self) -> int:
        return sum(1 for n, _ in walk(self.root) if isinstance(n, Hole))

    def holes(self) -> list[tuple[Path, Hole]]:
        """(path, hole) in pre-order; list index == hole slot id."""
        return [(p, n) for n, p in walk(self.root) if isinstance(n, Hole)]

    def node_at(self, path: Path) -> Node:
        node = self.root
        for i in path:
            node = node.kids[i]
        return node

    def shared_vars(self) -> dict[int, list[tuple[Path, int]]]:
        """var id -> [(path, slot)] of every slot carrying it."""
        out: dict[int, list[tuple[Path, int]]] = {}
        for node, path in walk(self.root):
            if isinstance(node, Call):
                for si, a in enumerate(node.args):
                    if isinstance(a, Shared):
                        out.setdefault(a.var, []).append((path, si))
        return out


def walk(node: Node, path: Path = ()) -> Iterator[tuple[Node, Path]]:
    """Pre-order traversal yielding (node, path)."""
    yield node, path
    if isinstance(node, Call):
        for i, k in enumerate(node.kids):
            yield from walk(k, path + (i,))


def _validate(root: Node, vocab: Vocabulary) -> None:
    holes = 0
    shared_sets: dict[int, tuple] = {}  # var -> value tuple of its slots' type
    mixed = False  # any hole/free/shared anywhere?
    pinned_fine: list[str] = []
    for node, path in walk(root):
        if isinstance(node, Hole):
            holes += 1
            if node.category not in vocab.categories:
                raise ProgramError(f"unknown hole category {node.category!r}")
            continue
        sig = vocab.functions.get(node.fn)
        if sig is None:
            raise ProgramError(f"unknown function {node.fn!r}")
        if len(node.args) != len(sig.params):
            raise ProgramError(f"{node.fn}: expected {len(sig.params)} params")
        if len(node.kids) != len(sig.children):
            raise ProgramError(f"{node.fn}: expected {len(sig.children)} children")
        for kid, cat in zip(node.kids, sig.children):
            if isinstance(kid, Hole):
                if kid.category != cat:
                    raise ProgramError(
                        f"{node.fn}: hole category {kid.category!r} != slot {cat!r}")
            elif kid.fn not in vocab.categories[cat]:
                raise ProgramError(f"{node.fn}: child {kid.fn!r} not admissible in {cat!r}")
        for si, (a, tname) in enumerate(zip(node.args, sig.params)):
            pt = vocab.param_types[tname]
            if isinstance(a, Pinned):
                if not 0 <= a.index < len(pt.values):
                    raise ProgramError(f"{node.fn}.{tname}: value index {a.index} out of range")
                if pt.kind == FINE:
                    pinned_fine.append(f"{node.fn}.{tname}")
            elif isinstance(a, Shared):
                if not pt.relatable:
                    raise ProgramError(f"{node.fn}.{tname}: shared var on non-relatable slot")
                if not 0 <= a.var < MAX_SHARED:
                    raise ProgramError(f"shared var {a.var} exceeds cap {MAX_SHARED}")
                prev = shared_sets.get(a.var)
                if prev is not None and prev != pt.values:
                    raise ProgramError(
                        f"shared var V{a.var} spans slots with different value sets")
                shared_sets[a.var] = pt.values
                mixed = True
            elif a is FREE:
                mixed = True
            else:
                raise ProgramError(f"bad annotation {a!r}")
        # root-level checks happen below
    if holes:
        mixed = True
    if holes > MAX_HOLES:
        raise ProgramError(f"{holes} holes exceed cap {MAX_HOLES}")
    if mixed and pinned_fine:
        raise ProgramError(
            "fine (non-relatable) slots must stay Free in partial programs: "
            + ", ".join(pinned_fine))
    if isinstance(root, Call):
        if root.fn not in vocab.categories[vocab.root_category]:
            raise ProgramError(
                f"root {root.fn!r} not admissible in {vocab.root_category!r}")
    else:
        if root.category != vocab.root_category:
            raise ProgramError("root hole must carry the root category")


# --------------------------------------------------------------------- erase

def subtree_category(vocab: Vocabulary, fn: str) -> str:
    return vocab.functions[fn].category


def replace_at(root: Node, path: Path, repl: Node) -> Node:
    if not path:
        return repl
    assert isinstance(root, Call)
    i, rest = path[0], path[1:]
    kids = list(root.kids)
    kids[i] = replace_at(kids[i], rest, repl)
    return Call(root.fn, root.args, tuple(kids))


def erase_fills(program: Program, paths: tuple[Path, ...]) -> Program:
    """Replace the subtrees at ``paths`` with Holes of the slot's category."""
    root = program.root
    # apply deepest-last is irrelevant: paths are disjoint subtree roots
    for p in paths:
        node = program.node_at(p)
        if isinstance(node, Hole):
            raise ProgramError("cannot erase a hole")
        cat = _slot_category(program, p)
        root = replace_at(root, p, Hole(cat))
    return Program(root, program.vocab)


def _slot_category(program: Program, path: Path) -> str:
    """Category owned by the child slot at ``path`` (root slot = root category)."""
    if not path:
        return program.vocab.root_category
    parent = program.node_at(path[:-1])
    assert isinstance(parent, Call)
    return program.vocab.functions[parent.fn].children[path[-1]]


# --------------------------------------------------------------------- expand

def expand(template: Program, fills: list[Node]) -> Program:
    """Fill every hole (in slot order) with the given subtrees -> expansion.

    Fill params must be Free on relatable+fine slots alike (they are new,
    unconstrained structure); their categories must match the holes'.
    """
    holes = template.holes()
    if len(fills) != len(holes):
        raise ProgramError(f"expected {len(holes)} fills, got {len(fills)}")
    vocab = template.vocab
    root = template.root
    for (path, hole), fill in zip(holes, fills):
        if isinstance(fill, Hole):
            raise ProgramError("fill must be a concrete subtree, not a hole")
        if fill.fn not in vocab.categories[hole.category]:
            raise ProgramError(
                f"fill root {fill.fn!r} not admissible in hole category {hole.category!r}")
        n_tokens = _subtree_token_count(fill, vocab)
        if n_tokens > vocab.caps.fill:
            raise ProgramError(
                f"fill has {n_tokens} tokens, cap is {vocab.caps.fill}")
        for node, _ in walk(fill):
            if isinstance(node, Hole):
                raise ProgramError("fill contains a hole")
            for a, tname in zip(node.args, vocab.functions[node.fn].params):
                if a is not FREE:
                    raise ProgramError("fill params must be Free before instantiation")
        root = replace_at(root, path, fill)
    return Program(root, vocab, fill_paths=tuple(p for p, _ in holes))


def _subtree_token_count(node: Node, vocab: Vocabulary) -> int:
    if isinstance(node, Hole):
        return 1
    return (1 + len(node.args)
            + sum(_subtree_token_count(k, vocab) for k in node.kids))


# ----------------------------------------------------------------- instantiate

@dataclass
class Bindings:
    """Values (as value-set indices) for an expansion's open slots."""

    shared: dict[int, int]
    free: list[int]  # by sentinel order (pre-order over Free slots)


def free_slots(program: Program) -> list[tuple[Path, int, str]]:
    """(path, slot index, param type) of Free slots, linearization order."""
    out = []
    for node, path in walk(program.root):
        if isinstance(node, Call):
            sig = program.vocab.functions[node.fn]
            for si, a in enumerate(node.args):
                if a is FREE:
                    out.append((path, si, sig.params[si]))
    return out


def instantiate(expansion: Program, bindings: Bindings) -> Program:
    """Bind every Shared/Free slot -> concrete program."""
    if expansion.n_holes:
        raise ProgramError("cannot instantiate a program with holes")
    vocab = expansion.vocab
    frees = free_slots(expansion)
    if len(bindings.free) != len(frees):
        raise ProgramError(
            f"expected {len(frees)} free values, got {len(bindings.free)}")
    counter = [0]

    def rebuild(node: Node) -> Node:
        assert isinstance(node, Call)
        sig = vocab.functions[node.fn]
        args = []
        for a, tname in zip(node.args, sig.params):
            pt = vocab.param_types[tname]
            if isinstance(a, Pinned):
                args.append(a)
            elif isinstance(a, Shared):
                if a.var not in bindings.shared:
                    raise ProgramError(f"missing binding for shared var V{a.var}")
                idx = bindings.shared[a.var]
                if not 0 <= idx < len(pt.values):
                    raise ProgramError(f"V{a.var} value index {idx} not in {tname}")
                args.append(Pinned(idx))
            else:
                idx = bindings.free[counter[0]]
                counter[0] += 1
                if not 0 <= idx < len(pt.values):
                    raise ProgramError(f"free value index {idx} not in {tname}")
                args.append(Pinned(idx))
        return Call(node.fn, tuple(args), tuple(rebuild(k) for k in node.kids))

    return Program(rebuild(expansion.root), vocab)


# -------------------------------------------------------------------- conforms

@dataclass
class Witness:
    """Proof that a concrete program matches a template."""

    fills: list[Node]          # by hole slot id
    shared: dict[int, int]     # var -> value index
    free: list[int]            # free-slot values of the induced expansion


def conforms(concrete: Program, template: Program) -> Optional[Witness]:
    """Structural alignment check; returns a witness or None.

    The witness satisfies
    ``instantiate(expand(template, w.fills), Bindings(w.shared, w.free)) == concrete``.
    """
    if concrete.kind != "concrete":
        raise ProgramError("left argument must be a concrete program")
    vocab = template.vocab
    fills: list[Node] = []
    shared: dict[int, int] = {}

    def match(t: Node, z: Node) -> bool:
        if isinstance(t, Hole):
            assert isinstance(z, Call)
            if z.fn not in vocab.categories[t.category]:
                return False
            fills.append(_strip_values(z, vocab))
            return True
        if isinstance(z, Hole) or t.fn != z.fn:
            return False
        for a, b in zip(t.args, z.args):
            assert isinstance(b, Pinned)
            if isinstance(a, Pinned):
                if a.index != b.index:
                    return False
            elif isinstance(a, Shared):
                if shared.setdefault(a.var, b.index) != b.index:
                    return False
        return all(match(tk, zk) for tk, zk in zip(t.kids, z.kids))

    if not match(template.root, concrete.root):
        return None
    try:
        expansion = expand(template, fills)
    except ProgramError:
        # structurally aligned but a fill exceeds the length cap
        return None
    free = []
    pos = {p: n for n, p in walk(concrete.root)}
    for path, si, _ in free_slots(expansion):
        znode = pos[path]
        assert isinstance(znode, Call)
        ann = znode.args[si]
        assert isinstance(ann, Pinned)
        free.append(ann.index)
    return Witness(fills=fills, shared=shared, free=free)


def _strip_values(node: Call, vocab: Vocabulary) -> Call:
    """Copy of a concrete subtree with every param made Free (a fill)."""
    return Call(node.fn, tuple(FREE for _ in node.args),
                tuple(_strip_values(k, vocab) for k in node.kids))


# ---------------------------------------------------------------- description

def description_length(program: Program) -> int:
    """Function tokens + concretely-determined relatable param tokens.

    Pinned relatable slots count 1 each; a shared var counts once no matter
    how many slots carry it; Free slots, fine slots and Holes count 0.
    """
    vocab = program.vocab
    total = 0
    svars = set()
    for node, _ in walk(program.root):
        if isinstance(node, Hole):
            continue
        total += 1
        sig = vocab.functions[node.fn]
        for a, tname in zip(node.args, sig.params):
            if not vocab.param_types[tname].relatable:
                continue
            if isinstance(a, Pinned):
                total += 1
            elif isinstance(a, Shared):
                svars.add(a.var)
    return total + len(svars)
