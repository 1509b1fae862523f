"""Program IR: construction rules, expand/instantiate/conforms, DL counts."""

import numpy as np
import pytest

from conftest import DOMAINS
from templar import domains
from templar.program import (FREE, Bindings, Call, Hole, Pinned, Program,
                             ProgramError, Shared, conforms,
                             description_length, expand, instantiate)
from templar.sampler import SamplerConfig, sample_program
from templar.sexpr import from_text, to_text


def _toy():
    return domains.get_vocab("layout-toy")


def test_kind_classification():
    v = _toy()
    assert Program(Call("Prim", (Pinned(0),), ()), v).kind == "concrete"
    assert Program(Call("Prim", (FREE,), ()), v).kind == "expansion"
    assert Program(Call("Prim", (Shared(0),), ()), v).kind == "expansion"
    assert Program(Hole("CHAIN"), v).kind == "template"


def test_bad_arity_rejected():
    v = _toy()
    with pytest.raises(ProgramError):
        Program(Call("Color", (Pinned(0),), ()), v)        # missing child
    with pytest.raises(ProgramError):
        Program(Call("Prim", (), ()), v)                   # missing param


def test_bad_category_rejected():
    v = _toy()
    prim = Call("Prim", (Pinned(0),), ())
    with pytest.raises(ProgramError):
        Program(Call("Prim", (Pinned(9),), ()), v)         # value out of range
    with pytest.raises(ProgramError):
        Program(Call("Color", (Pinned(0),), (Hole("SCENE"),)), v)


def test_fine_slots_must_stay_free_in_partial_programs():
    v = domains.get_vocab("layout-desk")
    args = (Pinned(0), Pinned(0), Pinned(0), Pinned(0))  # xt xf yt yf
    move = Call("Move", args, (Call("Prim", (Pinned(0),), ()),))
    Program(move, v)  # concrete: pinned fine slots fine
    with_hole = Call("Move", args, (Hole("SCENE"),))
    with pytest.raises(ProgramError):
        Program(with_hole, v)  # partial with pinned fine slots: rejected
    free_fine = (Pinned(0), FREE, Pinned(0), FREE)
    Program(Call("Move", free_fine, (Hole("SCENE"),)), v)


def test_shared_variable_rules():
    v = _toy()
    # ctype and ptype have different value sets: one var cannot span both
    bad = Call("Color", (Shared(0),), (Call("Prim", (Shared(0),), ()),))
    with pytest.raises(ProgramError):
        Program(bad, v)
    ok = Call("Color", (Shared(0),), (Call("Prim", (Shared(1),), ()),))
    assert Program(ok, v).kind == "expansion"


def test_expand_instantiate_conforms_witness_identity():
    v = _toy()
    tp = Program(Call("Color", (Shared(0),), (Hole("CHAIN"),)), v)
    fills = [Call("Prim", (FREE,), ())]
    expansion = expand(tp, fills)
    assert expansion.kind == "expansion"
    z = instantiate(expansion, Bindings(shared={0: 2}, free=[1]))
    assert z.kind == "concrete"
    assert to_text(z) == "(Color ctype=blue (Prim ptype=circle))"

    w = conforms(z, tp)
    assert w is not None
    z2 = instantiate(expand(tp, w.fills), Bindings(w.shared, w.free))
    assert z2 == z


def test_conforms_rejects_structure_mismatch():
    v = _toy()
    tp = Program(Call("Prim", (Pinned(0),), ()), v)
    z = Program(Call("Color", (Pinned(0),),
                     (Call("Prim", (Pinned(0),), ()),)), v)
    assert conforms(z, tp) is None
    # pinned value mismatch
    z2 = Program(Call("Prim", (Pinned(1),), ()), v)
    assert conforms(z2, tp) is None
    assert conforms(Program(Call("Prim", (Pinned(0),), ()), v), tp) is not None


def test_expand_wrong_fill_count():
    v = _toy()
    tp = Program(Call("Color", (Pinned(0),), (Hole("CHAIN"),)), v)
    with pytest.raises(ProgramError):
        expand(tp, [])
    with pytest.raises(ProgramError):
        expand(tp, [Call("Prim", (FREE,), ()), Call("Prim", (FREE,), ())])


def test_expand_requires_free_fill_params():
    v = _toy()
    tp = Program(Call("Color", (Pinned(0),), (Hole("CHAIN"),)), v)
    with pytest.raises(ProgramError):
        expand(tp, [Call("Prim", (Pinned(1),), ())])


def test_description_length_hand_counts():
    v = domains.get_vocab("layout-desk")
    # fn tokens: Color + Prim = 2; relatable: ctype pinned + ptype pinned = 2
    z = from_text("(Color ctype=red (Prim ptype=square))", v)
    assert description_length(z) == 4
    # all-free: only the 2 fn tokens count
    tp = from_text("(Color ctype=?0 (Prim ptype=?1))", v)
    assert description_length(tp) == 2
    # a shared var counts once however many slots carry it
    tp2 = from_text("(UNION (Prim ptype=V0) (Prim ptype=V0))", v)
    assert description_length(tp2) == 3 + 1
    # fine slots never count: Move adds 1 fn + xt,yt pinned (xf,yf excluded)
    z3 = from_text(
        "(Move xt=0.5 xf=0.025 yt=0.0 yf=-0.025 (Prim ptype=circle))", v)
    assert description_length(z3) == 2 + 2 + 1


def test_text_roundtrip_all_kinds():
    v = domains.get_vocab("layout-desk")
    texts = [
        "(Prim ptype=square)",
        "(Color ctype=?0 (HOLE 0))",
        "(UNION (Prim ptype=V0) (Color ctype=red (Prim ptype=V0)))",
        "(Move xt=0.25 xf=?0 yt=-0.5 yf=?1 (Prim ptype=?2))",
    ]
    for s in texts:
        assert to_text(from_text(s, v)) == s


@pytest.mark.parametrize("domain", DOMAINS)
def test_sampled_tree_text_roundtrip(domain):
    spec = domains.get_domain(domain)
    vocab = domains.get_vocab(domain)
    rng = np.random.default_rng(3)
    cfg = SamplerConfig()
    for _ in range(100):
        z = sample_program(vocab, cfg, rng, spec.context_factory())
        assert from_text(to_text(z), vocab) == z
