"""Textual program format: prefix S-expressions.

Grammar (bit-exact; whitespace separates atoms):

    program  := node
    node     := "(" FName item* ")" | "(" "HOLE" INT ")"
    item     := param | node
    param    := NAME "=" pvalue        named form (canonical writer output)
              | pvalue                 bare positional form (reader only)
    pvalue   := VALUE | "V" INT | "?" INT

Params come before children and follow the signature's slot order.  ``Vk`` is
a shared var, ``?n`` a free-slot sentinel whose number mirrors linearization
order (sequential left-to-right; validated).  The writer always emits the
named form for params and sentinels for Free slots, e.g.::

    (Move xt=0.5 xf=-0.025 yt=0.0 yf=0.025 (Prim ptype=square))
    (SymReflect axis=X (HOLE 0))

Floats are written with ``repr`` and matched back against the value set with
a 1e-9 tolerance.
"""

from __future__ import annotations

import re

from .program import FREE, Call, Hole, Pinned, Program, ProgramError, Shared
from .vocab import Vocabulary

_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


def _fmt_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def to_text(program: Program) -> str:
    vocab = program.vocab
    sentinel = [0]

    def fmt(node) -> str:
        if isinstance(node, Hole):
            # hole numbering is positional (pre-order), same as linearization
            return f"(HOLE {holes.pop(0)})"
        sig = vocab.functions[node.fn]
        parts = [node.fn]
        for a, tname in zip(node.args, sig.params):
            if isinstance(a, Pinned):
                val = vocab.param_types[tname].values[a.index]
                parts.append(f"{tname}={_fmt_value(val)}")
            elif isinstance(a, Shared):
                parts.append(f"{tname}=V{a.var}")
            else:
                parts.append(f"{tname}=?{sentinel[0]}")
                sentinel[0] += 1
        parts.extend(fmt(k) for k in node.kids)
        return "(" + " ".join(parts) + ")"

    holes = list(range(program.n_holes))
    return fmt(program.root)


class TextParseError(ValueError):
    pass


def from_text(text: str, vocab: Vocabulary) -> Program:
    toks = _TOKEN_RE.findall(text)
    if not toks:
        raise TextParseError("empty program text")
    pos = [0]
    holes = [0]
    sentinels = [0]

    def take() -> str:
        if pos[0] >= len(toks):
            raise TextParseError("unexpected end of text")
        t = toks[pos[0]]
        pos[0] += 1
        return t

    def peek() -> str:
        if pos[0] >= len(toks):
            raise TextParseError("unexpected end of text")
        return toks[pos[0]]

    def parse_pvalue(tname: str, raw: str):
        pt = vocab.param_types[tname]
        if re.fullmatch(r"V\d+", raw):
            return Shared(int(raw[1:]))
        if re.fullmatch(r"\?\d+", raw):
            n = int(raw[1:])
            if n != sentinels[0]:
                raise TextParseError(
                    f"sentinel ?{n} out of order (expected ?{sentinels[0]})")
            sentinels[0] += 1
            return FREE
        # literal value
        if all(isinstance(v, str) for v in pt.values):
            try:
                return Pinned(pt.index_of(raw))
            except KeyError as e:
                raise TextParseError(str(e)) from None
        try:
            num = float(raw)
        except ValueError:
            raise TextParseError(f"bad value {raw!r} for {tname}") from None
        if all(isinstance(v, int) for v in pt.values):
            if num != int(num):
                raise TextParseError(f"bad value {raw!r} for {tname}")
            try:
                return Pinned(pt.index_of(int(num)))
            except KeyError as e:
                raise TextParseError(str(e)) from None
        try:
            return Pinned(pt.index_of(num))
        except KeyError as e:
            raise TextParseError(str(e)) from None

    def parse_node(category: str):
        if take() != "(":
            raise TextParseError("expected '('")
        head = take()
        if head == "HOLE":
            n = take()
            if not n.isdigit() or int(n) != holes[0]:
                raise TextParseError(f"hole number {n} out of order")
            holes[0] += 1
            if take() != ")":
                raise TextParseError("expected ')' after HOLE")
            return Hole(category)
        if head not in vocab.functions:
            raise TextParseError(f"unknown function {head!r}")
        if head not in vocab.categories[category]:
            raise TextParseError(f"{head} not admissible in category {category}")
        sig = vocab.functions[head]
        args = []
        for tname in sig.params:
            raw = take()
            if raw in ("(", ")"):
                raise TextParseError(f"{head}: missing param {tname}")
            if "=" in raw:
                name, _, val = raw.partition("=")
                if name != tname:
                    raise TextParseError(
                        f"{head}: expected param {tname}, got {name}")
                args.append(parse_pvalue(tname, val))
            else:
                args.append(parse_pvalue(tname, raw))
        kids = [parse_node(c) for c in sig.children]
        if take() != ")":
            raise TextParseError(f"{head}: expected ')'")
        return Call(head, tuple(args), tuple(kids))

    root = parse_node(vocab.root_category)
    if pos[0] != len(toks):
        raise TextParseError("trailing text after program")
    try:
        return Program(root, vocab)
    except ProgramError as e:
        raise TextParseError(str(e)) from e
