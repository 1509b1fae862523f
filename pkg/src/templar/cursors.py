"""Role cursors: incremental grammar-legal token admission for decoding.

Three decoding roles share one token table but admit different streams:

* template  — full program syntax: functions, holes, pinned values, shared
  variables, free-slot sentinels; bounded by the template sequence cap.
* expansion — hole fills for a given template: forced hole prompts, each
  followed by function tokens spelling the fill subtree in pre-order (fill
  parameters are implicitly free, so no value tokens appear); every fill is
  bounded by the fill cap measured in linearized units.
* param     — value bindings for a hole-free program: forced slot prompts
  (a sentinel for each free slot, the variable token at each shared
  variable's first occurrence) alternating with value tokens.

Every cursor exposes the same surface: ``legal()`` giving the admissible
next-token ids, ``advance(tok)``, ``done()``, ``result()``, ``copy()`` and
``slot_kind()`` describing the pending decision so priors can assign
probabilities by slot type.  Streams exclude the Start token (that is the
decode prompt, not a prediction) and terminate with the End token.

Budget admission is exact: a token is admissible only if some completion of
the stream stays within the applicable cap, judged with per-category minimum
completion sizes.  Decoded streams therefore always parse and always respect
the caps, with no truncation path.

Ordering canons enforced here (and produced by the synthetic sampler):
sentinels appear in slot order ``?0, ?1, ...``, holes in appearance order,
and shared variables are numbered by first use ``V0, V1, ...``.
"""

from __future__ import annotations

from .program import (FREE, Bindings, Call, Hole, Pinned, Program,
                      ProgramError, Shared, walk)
from .vocab import (K_END, K_FUNC, K_HOLE, K_SENTINEL, K_SHARED, K_VALUE,
                    MAX_HOLES, MAX_SENTINELS, MAX_SHARED, Vocabulary)


class DecodeError(Exception):
    """A token outside the admissible set was offered to a cursor."""


class _NullContext:
    __slots__ = ()

    def copy(self):
        return self

    def legal_functions(self, vocab, category):
        return vocab.categories[category]

    def legal_value_indices(self, pt):
        return range(len(pt.values))

    def after_function(self, fn):
        pass

    def after_hole(self, category):
        pass


_NULL = _NullContext()


def min_completion_costs(vocab: Vocabulary):
    """Smallest linearized subtree size per category and per function.

    Sizes count one unit per function token plus one per parameter slot,
    matching both the template sequence accounting and the fill cap units.
    """
    inf = 1 << 30
    min_cat = {c: inf for c in vocab.categories}
    changed = True
    while changed:
        changed = False
        # a category's floor comes from its member list, not from the
        # members' home categories (functions can appear in several lists)
        for cat, fns in vocab.categories.items():
            for name in fns:
                sig = vocab.functions[name]
                cost = 1 + len(sig.params)
                dead = False
                for ch in sig.children:
                    if min_cat[ch] >= inf:
                        dead = True
                        break
                    cost += min_cat[ch]
                if not dead and cost < min_cat[cat]:
                    min_cat[cat] = cost
                    changed = True
    stuck = [c for c, v in min_cat.items() if v >= inf]
    if stuck:
        raise ValueError(f"categories with no finite production: {stuck}")
    min_fn = {
        name: 1 + len(sig.params) + sum(min_cat[c] for c in sig.children)
        for name, sig in vocab.functions.items()
    }
    return min_cat, min_fn


class _Frame:
    __slots__ = ("fn", "args", "kids")

    def __init__(self, fn, args, kids):
        self.fn = fn
        self.args = args
        self.kids = kids

    def copy(self):
        return _Frame(self.fn, list(self.args), list(self.kids))


class TemplateCursor:
    """Admits full program syntax within the template cap."""

    role = "template"

    def __init__(self, vocab: Vocabulary, context=None, allow_holes=True,
                 cap=None, _blank=False):
        self.vocab = vocab
        if _blank:
            return
        self.ctx = context if context is not None else _NULL
        self.allow_holes = allow_holes
        self.cap = vocab.caps.template if cap is None else cap
        self.min_cat, self.min_fn = min_completion_costs(vocab)
        self.frames: list[_Frame] = []
        self.root = None
        self.used = 1  # the Start token is part of the length budget
        self.n_holes = 0
        self.n_sent = 0
        self.shared_types: dict[int, str] = {}
        self.finished = False

    def copy(self):
        c = TemplateCursor(self.vocab, _blank=True)
        c.ctx = self.ctx.copy()
        c.allow_holes = self.allow_holes
        c.cap = self.cap
        c.min_cat = self.min_cat
        c.min_fn = self.min_fn
        c.frames = [f.copy() for f in self.frames]
        c.root = self.root
        c.used = self.used
        c.n_holes = self.n_holes
        c.n_sent = self.n_sent
        c.shared_types = dict(self.shared_types)
        c.finished = self.finished
        return c

    # -- expectation bookkeeping ------------------------------------------

    def _expect(self):
        if self.root is not None:
            return ("end",)
        if not self.frames:
            return ("node", self.vocab.root_category)
        top = self.frames[-1]
        sig = self.vocab.functions[top.fn]
        if len(top.args) < len(sig.params):
            return ("param", self.vocab.param_types[sig.params[len(top.args)]])
        return ("node", sig.children[len(top.kids)])

    def _floor_after(self):
        """Minimum tokens to finish everything beyond the pending slot."""
        total = 0
        last = len(self.frames) - 1
        for i, fr in enumerate(self.frames):
            sig = self.vocab.functions[fr.fn]
            if i == last and len(fr.args) < len(sig.params):
                total += len(sig.params) - len(fr.args) - 1
                rest = sig.children[len(fr.kids):]
            else:
                rest = sig.children[len(fr.kids) + 1:]
            for ch in rest:
                total += self.min_cat[ch]
        return total

    # -- public surface ----------------------------------------------------

    def done(self):
        return self.finished

    def slot_kind(self):
        exp = self._expect()
        if exp[0] == "param":
            return ("pslot", exp[1])
        if exp[0] == "node":
            return ("node", exp[1])
        return ("end",)

    def legal(self):
        if self.finished:
            return ()
        exp = self._expect()
        v = self.vocab
        if exp[0] == "end":
            return (v.end_id,)
        tail = self._floor_after() + 1  # reserve the End token
        out = []
        if exp[0] == "node":
            cat = exp[1]
            for fn in self.ctx.legal_functions(v, cat):
                if self.used + self.min_fn[fn] + tail <= self.cap:
                    out.append(v.func_id(fn))
            if (self.allow_holes and self.n_holes < MAX_HOLES
                    and self.used + 1 + tail <= self.cap):
                out.append(v.hole_id(self.n_holes))
        else:
            pt = exp[1]
            if pt.relatable:
                for i in self.ctx.legal_value_indices(pt):
                    out.append(v.value_id(pt.name, i))
                for var, tname in self.shared_types.items():
                    if v.same_value_set(tname, pt.name):
                        out.append(v.shared_id(var))
                if len(self.shared_types) < MAX_SHARED:
                    out.append(v.shared_id(len(self.shared_types)))
            if self.n_sent < MAX_SENTINELS:
                out.append(v.sentinel_id(self.n_sent))
        return tuple(sorted(out))

    def advance(self, tok):
        if tok not in self.legal():
            raise DecodeError(
                f"token {self.vocab.token_str(tok)} is not admissible here")
        exp = self._expect()
        info = self.vocab.token(tok)
        tag = info[0]
        self.used += 1
        if tag == K_END:
            self.finished = True
            return
        if exp[0] == "node":
            if tag == K_FUNC:
                self.ctx.after_function(info[1])
                self.frames.append(_Frame(info[1], [], []))
            else:
                self.ctx.after_hole(exp[1])
                self.n_holes += 1
                self._attach(Hole(exp[1]))
            self._reduce()
            return
        top = self.frames[-1]
        if tag == K_VALUE:
            top.args.append(Pinned(info[2]))
        elif tag == K_SENTINEL:
            self.n_sent += 1
            top.args.append(FREE)
        else:
            var = info[1]
            self.shared_types.setdefault(var, exp[1].name)
            top.args.append(Shared(var))
        self._reduce()

    def _attach(self, node):
        if self.frames:
            self.frames[-1].kids.append(node)
        else:
            self.root = node

    def _reduce(self):
        while self.frames:
            top = self.frames[-1]
            sig = self.vocab.functions[top.fn]
            if len(top.args) < len(sig.params) or len(top.kids) < len(sig.children):
                return
            self.frames.pop()
            self._attach(Call(top.fn, tuple(top.args), tuple(top.kids)))

    def result(self) -> Program:
        if not self.finished or self.root is None:
            raise DecodeError("cursor has not completed a program")
        return Program(self.root, self.vocab)


class _FillFrame:
    __slots__ = ("fn", "kids")

    def __init__(self, fn, kids):
        self.fn = fn
        self.kids = kids

    def copy(self):
        return _FillFrame(self.fn, list(self.kids))


class ExpansionCursor:
    """Admits hole prompts and fill function tokens for a fixed template."""

    role = "expansion"

    def __init__(self, vocab: Vocabulary, template: Program, context=None,
                 _blank=False):
        self.vocab = vocab
        if _blank:
            return
        self.ctx = (context if context is not None
                    else _NULL).copy()
        self.min_cat, self.min_fn = min_completion_costs(vocab)
        tape = []
        for node, _path in walk(template.root):
            if isinstance(node, Call):
                tape.append(node.fn)
            else:
                tape.append(node)  # Hole sentinel entries keep their category
        self.tape = tuple(tape)
        self.pos = 0
        self.k = 0
        self.frames: list[_FillFrame] = []
        self.fill_root_pending = False
        self.fill_cat = None
        self.fill_size = 0
        self.fills: list = []
        self.finished = False
        self._replay()

    def copy(self):
        c = ExpansionCursor(self.vocab, None, _blank=True)
        c.ctx = self.ctx.copy()
        c.min_cat = self.min_cat
        c.min_fn = self.min_fn
        c.tape = self.tape
        c.pos = self.pos
        c.k = self.k
        c.frames = [f.copy() for f in self.frames]
        c.fill_root_pending = self.fill_root_pending
        c.fill_cat = self.fill_cat
        c.fill_size = self.fill_size
        c.fills = list(self.fills)
        c.finished = self.finished
        return c

    def _replay(self):
        while self.pos < len(self.tape) and isinstance(self.tape[self.pos], str):
            self.ctx.after_function(self.tape[self.pos])
            self.pos += 1

    def _in_fill(self):
        return self.fill_root_pending or bool(self.frames)

    def _expect_cat(self):
        if self.frames:
            top = self.frames[-1]
            sig = self.vocab.functions[top.fn]
            return sig.children[len(top.kids)]
        return self.fill_cat

    def _floor_after(self):
        total = 0
        for fr in self.frames:
            sig = self.vocab.functions[fr.fn]
            for ch in sig.children[len(fr.kids) + 1:]:
                total += self.min_cat[ch]
        return total

    def done(self):
        return self.finished

    def slot_kind(self):
        if self.finished:
            return ("end",)
        if self._in_fill():
            return ("fill", self._expect_cat())
        if self.pos < len(self.tape):
            return ("forced", self.vocab.hole_id(self.k))
        return ("end",)

    def legal(self):
        if self.finished:
            return ()
        v = self.vocab
        if self._in_fill():
            cat = self._expect_cat()
            tail = self._floor_after()
            out = []
            for fn in self.ctx.legal_functions(v, cat):
                if self.fill_size + self.min_fn[fn] + tail <= v.caps.fill:
                    out.append(v.func_id(fn))
            return tuple(sorted(out))
        if self.pos < len(self.tape):
            return (v.hole_id(self.k),)
        return (v.end_id,)

    def advance(self, tok):
        if tok not in self.legal():
            raise DecodeError(
                f"token {self.vocab.token_str(tok)} is not admissible here")
        info = self.vocab.token(tok)
        tag = info[0]
        if tag == K_END:
            self.finished = True
            return
        if tag == K_HOLE:
            hole = self.tape[self.pos]
            self.fill_root_pending = True
            self.fill_cat = hole.category
            self.fill_size = 0
            return
        fn = info[1]
        sig = self.vocab.functions[fn]
        self.ctx.after_function(fn)
        self.fill_size += 1 + len(sig.params)
        self.fill_root_pending = False
        self.frames.append(_FillFrame(fn, []))
        self._reduce()

    def _reduce(self):
        while self.frames:
            top = self.frames[-1]
            sig = self.vocab.functions[top.fn]
            if len(top.kids) < len(sig.children):
                return
            self.frames.pop()
            node = Call(top.fn, tuple([FREE] * len(sig.params)), tuple(top.kids))
            if self.frames:
                self.frames[-1].kids.append(node)
            else:
                self.fills.append(node)
                self.fill_cat = None
                self.pos += 1
                self.k += 1
                self._replay()
                return

    def result(self) -> list:
        if not self.finished:
            raise DecodeError("cursor has not completed the fill stream")
        return list(self.fills)


class ParamCursor:
    """Admits slot prompts alternating with value tokens for a hole-free
    program.  The schedule fixes prompt order: free slots in pre-order
    (one sentinel each), shared variables at first occurrence; pinned and
    later shared occurrences emit nothing.
    """

    role = "param"

    def __init__(self, vocab: Vocabulary, expansion: Program, context=None,
                 _blank=False):
        self.vocab = vocab
        if _blank:
            return
        ctx = (context if context is not None else _NULL).copy()
        schedule = []           # (prompt_tok, ptype_name, kind, key)
        legal_map = {}          # schedule index -> sorted legal value indices
        shared_first: dict[int, int] = {}
        shared_legal: dict[int, set] = {}
        n_sent = 0
        for node, _path in walk(expansion.root):
            if isinstance(node, Hole):
                raise ProgramError("parameter decoding needs a hole-free program")
            ctx.after_function(node.fn)
            sig = vocab.functions[node.fn]
            for slot, pname in zip(node.args, sig.params):
                pt = vocab.param_types[pname]
                if isinstance(slot, Pinned):
                    continue
                here = set(ctx.legal_value_indices(pt))
                if slot is FREE:
                    idx = len(schedule)
                    schedule.append(
                        (vocab.sentinel_id(n_sent), pt.name, "free", n_sent))
                    legal_map[idx] = here
                    n_sent += 1
                else:
                    var = slot.var
                    if var not in shared_first:
                        shared_first[var] = len(schedule)
                        schedule.append(
                            (vocab.shared_id(var), pt.name, "shared", var))
                        shared_legal[var] = here
                    else:
                        shared_legal[var] &= here
        for var, idx in shared_first.items():
            legal_map[idx] = shared_legal[var]
            if not shared_legal[var]:
                raise ProgramError(
                    f"shared variable V{var} has no value satisfying all slots")
        if 2 * len(schedule) + 2 > vocab.caps.param:
            raise ProgramError(
                f"binding stream would need {2 * len(schedule) + 2} tokens, "
                f"cap is {vocab.caps.param}")
        self.schedule = tuple(schedule)
        self.legal_values = tuple(tuple(sorted(legal_map[i]))
                                  for i in range(len(schedule)))
        self.n_free = n_sent
        self.i = 0
        self.await_value = False
        self.free_vals: list = [None] * n_sent
        self.shared_vals: dict[int, int] = {}
        self.finished = False

    def copy(self):
        c = ParamCursor(self.vocab, None, _blank=True)
        c.schedule = self.schedule
        c.legal_values = self.legal_values
        c.n_free = self.n_free
        c.i = self.i
        c.await_value = self.await_value
        c.free_vals = list(self.free_vals)
        c.shared_vals = dict(self.shared_vals)
        c.finished = self.finished
        return c

    def done(self):
        return self.finished

    def slot_kind(self):
        if self.finished or self.i >= len(self.schedule):
            return ("end",)
        if self.await_value:
            _tok, tname, kind, _key = self.schedule[self.i]
            return ("bind", tname, kind)
        return ("forced", self.schedule[self.i][0])

    def legal(self):
        if self.finished:
            return ()
        if self.i >= len(self.schedule):
            return (self.vocab.end_id,)
        if self.await_value:
            _tok, tname, _kind, _key = self.schedule[self.i]
            return tuple(self.vocab.value_id(tname, j)
                         for j in self.legal_values[self.i])
        return (self.schedule[self.i][0],)

    def advance(self, tok):
        if tok not in self.legal():
            raise DecodeError(
                f"token {self.vocab.token_str(tok)} is not admissible here")
        info = self.vocab.token(tok)
        if info[0] == K_END:
            self.finished = True
            return
        if not self.await_value:
            self.await_value = True
            return
        _tok, _tname, kind, key = self.schedule[self.i]
        if kind == "free":
            self.free_vals[key] = info[2]
        else:
            self.shared_vals[key] = info[2]
        self.await_value = False
        self.i += 1

    def result(self) -> Bindings:
        if not self.finished:
            raise DecodeError("cursor has not completed the binding stream")
        return Bindings(shared=dict(self.shared_vals),
                        free=list(self.free_vals))


def legal_sets_along(cursor, stream):
    """Per-position admissible sets while replaying ``stream`` on a copy of
    ``cursor``; used to grammar-mask training targets."""
    cur = cursor.copy()
    sets = []
    for tok in stream:
        sets.append(cur.legal())
        cur.advance(tok)
    if not cur.done():
        raise DecodeError("stream ended before the cursor completed")
    return sets


def make_cursor(role, vocab, context, *, template=None, expansion=None,
                allow_holes=True):
    """Uniform constructor used by proposal models and the search."""
    if role == "template":
        return TemplateCursor(vocab, context, allow_holes=allow_holes)
    if role == "expansion":
        return ExpansionCursor(vocab, template, context)
    if role == "param":
        return ParamCursor(vocab, expansion, context)
    raise ValueError(f"unknown decode role {role!r}")
