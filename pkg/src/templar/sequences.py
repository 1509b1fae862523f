"""Linearize programs to flat token-id sequences and parse them back.

Depth-first pre-order prefix notation: each function emits its token, then
one token per param slot (Pinned -> value token, Shared -> shared-var token,
Free -> the next sentinel token, numbered left to right), then its children.
Holes emit hole tokens numbered in order of appearance.  The sequence is
framed by Start/End.

Length caps: templates must fit ``caps.template`` tokens; hole-free programs
may additionally spend up to ``MAX_HOLES * caps.fill`` tokens (a template at
cap whose fills are each at cap).  Violations raise, never truncate.
"""

from __future__ import annotations

from .program import (FREE, Call, Hole, Pinned, Program, ProgramError, Shared,
                      _subtree_token_count)
from .vocab import (K_END, K_FUNC, K_HOLE, K_SENTINEL, K_SHARED, K_START,
                    K_VALUE, MAX_HOLES, MAX_SENTINELS, Vocabulary)


class ParseError(ValueError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} (at token {pos})")
        self.pos = pos


def max_sequence_length(vocab: Vocabulary, kind: str) -> int:
    if kind == "template":
        return vocab.caps.template
    return vocab.caps.template + MAX_HOLES * vocab.caps.fill


def linearize(program: Program) -> tuple[int, ...]:
    """Program -> token ids, framed by Start/End."""
    vocab = program.vocab
    out = [vocab.start_id]
    holes = [0]
    sentinels = [0]

    def emit(node) -> None:
        if isinstance(node, Hole):
            out.append(vocab.hole_id(holes[0]))
            holes[0] += 1
            return
        sig = vocab.functions[node.fn]
        out.append(vocab.func_id(node.fn))
        for a, tname in zip(node.args, sig.params):
            if isinstance(a, Pinned):
                out.append(vocab.value_id(tname, a.index))
            elif isinstance(a, Shared):
                out.append(vocab.shared_id(a.var))
            else:
                if sentinels[0] >= MAX_SENTINELS:
                    raise ProgramError(
                        f"more than {MAX_SENTINELS} free slots in one sequence")
                out.append(vocab.sentinel_id(sentinels[0]))
                sentinels[0] += 1
        for k in node.kids:
            emit(k)

    emit(program.root)
    out.append(vocab.end_id)
    kind = program.kind
    cap = max_sequence_length(vocab, kind)
    if len(out) > cap:
        raise ProgramError(
            f"{kind} sequence has {len(out)} tokens, cap is {cap}")
    return tuple(out)


def parse(tokens, vocab: Vocabulary) -> Program:
    """Token ids -> Program.  Errors carry the offending position."""
    toks = list(tokens)
    if not toks or vocab.token(toks[0])[0] != K_START:
        raise ParseError("expected Start token", 0)
    pos = [1]
    holes = [0]
    sentinels = [0]
    shared_sets: dict[int, tuple] = {}

    def peek():
        if pos[0] >= len(toks):
            raise ParseError("unexpected end of sequence", pos[0])
        return vocab.token(toks[pos[0]])

    def take():
        t = peek()
        pos[0] += 1
        return t

    def parse_node(category: str):
        t = take()
        here = pos[0] - 1
        if t[0] == K_HOLE:
            if t[1] != holes[0]:
                raise ParseError(
                    f"hole slot {t[1]} out of order (expected {holes[0]})", here)
            holes[0] += 1
            if holes[0] > MAX_HOLES:
                raise ParseError("too many holes", here)
            return Hole(category)
        if t[0] != K_FUNC:
            raise ParseError(
                f"expected function or hole, got {vocab.token_str(toks[here])}", here)
        fn = t[1]
        if fn not in vocab.categories[category]:
            raise ParseError(f"{fn} not admissible in category {category}", here)
        sig = vocab.functions[fn]
        args = []
        for tname in sig.params:
            pt = vocab.param_types[tname]
            vt = take()
            vhere = pos[0] - 1
            if vt[0] == K_VALUE:
                if vt[1] != tname:
                    raise ParseError(f"expected {tname} value, got {vt[1]}", vhere)
                args.append(Pinned(vt[2]))
            elif vt[0] == K_SHARED:
                if not pt.relatable:
                    raise ParseError(f"shared var on non-relatable slot {tname}", vhere)
                prev = shared_sets.get(vt[1])
                if prev is not None and prev != pt.values:
                    raise ParseError(
                        f"shared var V{vt[1]} reused across different value sets", vhere)
                shared_sets[vt[1]] = pt.values
                args.append(Shared(vt[1]))
            elif vt[0] == K_SENTINEL:
                if vt[1] != sentinels[0]:
                    raise ParseError(
                        f"sentinel {vt[1]} out of order (expected {sentinels[0]})", vhere)
                sentinels[0] += 1
                args.append(FREE)
            else:
                raise ParseError(f"expected a param token for {tname}", vhere)
        kids = [parse_node(c) for c in sig.children]
        return Call(fn, tuple(args), tuple(kids))

    root = parse_node(vocab.root_category)
    t = take()
    if t[0] != K_END:
        raise ParseError("expected End token", pos[0] - 1)
    if pos[0] != len(toks):
        raise ParseError("trailing tokens after End", pos[0])
    try:
        return Program(root, vocab)
    except ProgramError as e:
        raise ParseError(str(e), len(toks) - 1) from e


def fill_tokens(fill, vocab: Vocabulary) -> tuple[int, ...]:
    """Structure tokens of a single fill subtree (params are implicit Free).

    The fill's *linearized* size (functions + param slots) is what the fill
    length cap bounds; the returned sequence is the function tokens only,
    which is what the expansion head predicts (arity recovers the tree).
    """
    size = _subtree_token_count(fill, vocab)
    if size > vocab.caps.fill:
        raise ProgramError(f"fill has {size} tokens, cap is {vocab.caps.fill}")
    out: list[int] = []

    def emit(node) -> None:
        if isinstance(node, Hole):
            raise ProgramError("fill contains a hole")
        for a in node.args:
            if a is not FREE:
                raise ProgramError("fill params must be Free")
        out.append(vocab.func_id(node.fn))
        for k in node.kids:
            emit(k)

    emit(fill)
    return tuple(out)


def parse_fill(tokens, category: str, vocab: Vocabulary):
    """Inverse of :func:`fill_tokens`: function tokens -> all-Free subtree."""
    toks = list(tokens)
    pos = [0]

    def parse_node(cat: str):
        if pos[0] >= len(toks):
            raise ParseError("unexpected end of fill", pos[0])
        t = vocab.token(toks[pos[0]])
        here = pos[0]
        pos[0] += 1
        if t[0] != K_FUNC:
            raise ParseError("expected function token in fill", here)
        fn = t[1]
        if fn not in vocab.categories[cat]:
            raise ParseError(f"{fn} not admissible in category {cat}", here)
        sig = vocab.functions[fn]
        kids = tuple(parse_node(c) for c in sig.children)
        return Call(fn, tuple(FREE for _ in sig.params), kids)

    node = parse_node(category)
    if pos[0] != len(toks):
        raise ParseError("trailing tokens in fill", pos[0])
    return node
