"""Token streams, caps, synthetic sampling, collapse, training targets."""

import numpy as np
import pytest

from conftest import DOMAINS, triplets_equal
from templar import domains
from templar.program import Bindings, conforms, expand, instantiate
from templar.cursors import ExpansionCursor, ParamCursor
from templar.sampler import (SamplerConfig, collapse, format_targets,
                             load_triplets, make_dataset, sample_concept,
                             sample_group, sample_program, save_triplets)
from templar.sequences import ParseError, linearize, parse
from templar.sexpr import to_text


@pytest.mark.parametrize("domain", DOMAINS)
def test_linearize_parse_roundtrip(domain):
    spec = domains.get_domain(domain)
    vocab = domains.get_vocab(domain)
    rng = np.random.default_rng(11)
    cfg = SamplerConfig()
    for _ in range(200):
        z = sample_program(vocab, cfg, rng, spec.context_factory())
        toks = linearize(z)
        assert parse(toks, vocab) == z
        assert tuple(linearize(parse(toks, vocab))) == tuple(toks)


@pytest.mark.parametrize("domain", DOMAINS)
def test_linearize_respects_template_cap(domain):
    spec = domains.get_domain(domain)
    vocab = domains.get_vocab(domain)
    rng = np.random.default_rng(5)
    cfg = SamplerConfig()
    for _ in range(200):
        z = sample_program(vocab, cfg, rng, spec.context_factory())
        assert len(linearize(z)) <= vocab.caps.template


def test_parse_rejects_malformed_streams():
    vocab = domains.get_vocab("layout-toy")
    z = sample_program(vocab, SamplerConfig(), np.random.default_rng(0))
    toks = list(linearize(z))
    with pytest.raises(ParseError):
        parse(toks[:-1], vocab)            # truncated
    with pytest.raises(ParseError):
        parse(toks[1:], vocab)             # missing start
    with pytest.raises(ParseError):
        parse(toks + [toks[-2]], vocab)    # trailing garbage


@pytest.mark.parametrize("domain", DOMAINS)
def test_collapse_soundness(domain):
    spec = domains.get_domain(domain)
    vocab = domains.get_vocab(domain)
    rng = np.random.default_rng(23)
    cfg = SamplerConfig()
    for _ in range(200):
        z = sample_program(vocab, cfg, rng, spec.context_factory())
        tp = collapse(z, cfg, rng)
        assert conforms(z, tp) is not None


def test_collapse_frees_fine_slots_alongside_holes():
    """Hole-bearing collapses of Move-carrying programs must stay legal
    (fine slots go Free before validation, whatever the hole lottery did)."""
    vocab = domains.get_vocab("layout-desk")
    spec = domains.get_domain("layout-desk")
    rng = np.random.default_rng(2)
    cfg = SamplerConfig(hole_prob=1.0)
    seen_hole_and_move = 0
    for _ in range(300):
        z = sample_program(vocab, cfg, rng, spec.context_factory())
        if "Move" not in to_text(z):
            continue
        tp = collapse(z, cfg, rng)
        assert conforms(z, tp) is not None
        if tp.n_holes:
            seen_hole_and_move += 1
    assert seen_hole_and_move > 10


def test_collapse_distribution_not_skewed_against_operators():
    """Regression: Move-rooted programs survive collapse as often as others
    (an old validation bug silently resampled them away)."""
    spec = domains.get_domain("layout-desk")
    roots = {"Move": 0, "Color": 0, "UNION": 0, "Prim": 0}
    for t in make_dataset("layout-desk", 80, SamplerConfig(), seed=17):
        fn = to_text(t.programs[0]).split()[0].lstrip("(")
        roots[fn] = roots.get(fn, 0) + 1
    assert roots["Move"] > 0


@pytest.mark.parametrize("domain", DOMAINS)
def test_sample_group_members_conform(domain):
    spec = domains.get_domain(domain)
    rng = np.random.default_rng(31)
    cfg = SamplerConfig(group_size=4)
    for i in range(20):
        t = sample_concept(spec, cfg, rng, f"c{i}")
        assert len(t.programs) == len(t.canvases) == 4
        for z, x in zip(t.programs, t.canvases):
            assert conforms(z, t.template) is not None
            cells, _ = spec.execute(z)
            assert (cells == x).all()


@pytest.mark.parametrize("domain", DOMAINS)
def test_target_roundtrip(domain):
    spec = domains.get_domain(domain)
    vocab = domains.get_vocab(domain)
    rng = np.random.default_rng(41)
    cfg = SamplerConfig(group_size=3)
    for i in range(30):
        t = sample_concept(spec, cfg, rng, f"c{i}")
        examples = format_targets(t, rng)
        assert examples[0].role == "template"
        assert parse((vocab.start_id,) + examples[0].target, vocab) == t.template
        member_ex = examples[1:]
        for m, program in enumerate(t.programs):
            exp_ex, par_ex = member_ex[2 * m], member_ex[2 * m + 1]
            assert exp_ex.role == "expansion" and par_ex.role == "param"
            ec = ExpansionCursor(vocab, t.template, spec.context_factory())
            for tok in exp_ex.target:
                ec.advance(tok)
            assert ec.done()
            expansion = expand(t.template, ec.result())
            assert tuple(par_ex.prefix) == tuple(linearize(expansion))
            pc = ParamCursor(vocab, expansion, spec.context_factory())
            for tok in par_ex.target:
                pc.advance(tok)
            assert pc.done()
            assert instantiate(expansion, pc.result()) == program


def test_make_dataset_deterministic():
    a = make_dataset("layout-desk", 6, SamplerConfig(), seed=99)
    b = make_dataset("layout-desk", 6, SamplerConfig(), seed=99)
    assert all(triplets_equal(x, y) for x, y in zip(a, b))
    c = make_dataset("layout-desk", 6, SamplerConfig(), seed=100)
    assert not all(triplets_equal(x, y) for x, y in zip(a, c))


def test_triplets_save_load_roundtrip(tmp_path):
    for domain in DOMAINS:
        data = make_dataset(domain, 4, SamplerConfig(), seed=8)
        p = tmp_path / f"{domain}.jsonl"
        save_triplets(p, data)
        back = load_triplets(p)
        assert len(back) == len(data)
        assert all(triplets_equal(x, y) for x, y in zip(data, back))
        # serialization is canonical: a second save is byte-identical
        p2 = tmp_path / f"{domain}-2.jsonl"
        save_triplets(p2, back)
        assert p.read_bytes() == p2.read_bytes()
