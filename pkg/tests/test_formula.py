import pytest
from hypothesis import given, settings, strategies as st

from canevo.analysis import run_test
from canevo.errors import FormulaSyntaxError, MissingIsum, UnknownAtom
from canevo.formula import CorpusEvaluator, atoms, builtin, eval_formula, parse_formula, read_formula_file
from canevo.gen import GenParams, generate_sets
from canevo.grammar import DEFAULT_GRAMMAR, Genotype, map_genotype
from canevo.errors import MappingIncomplete

import oracles
from conftest import make_set


def test_builtin_render():
    assert builtin(1).render() == "(rt (+ (+ (max Bi Ci) Ji) Ci) (isum (+ (- (- Ri Ji) Ci) Jk) 1))"


def test_builtin_atoms():
    assert atoms(builtin(3).num) == {"Di", "Jk"}
    assert {"Ri", "Ti"} <= atoms(builtin(4).num)
    assert builtin(1).self_referential and builtin(4).self_referential
    assert not builtin(2).self_referential and not builtin(3).self_referential


def test_minimal_word():
    f = parse_formula("(rt Ji (isum Dk 0))")
    assert f.k01 == 0 and not f.self_referential


@pytest.mark.parametrize("text,exc", [
    ("(rt Ji Ji)", MissingIsum),
    ("(rt Qi (isum Dk 0))", UnknownAtom),
    ("(rt Ri (isum Dk 0))", UnknownAtom),  # Ri is not allowed in the base
    ("(rt Ji (isum Dk 2))", FormulaSyntaxError),
    ("(rt Ji (isum Dk 0)", FormulaSyntaxError),
    ("(rt Ji (isum (- Dk) 0))", FormulaSyntaxError),
    ("(rt Ji (isum (min Dk Tk) 0)) extra", FormulaSyntaxError),
])
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse_formula(text)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_round_trip(k):
    assert parse_formula(builtin(k).render()) == builtin(k)


def test_eval_matches_s1(micro):
    out = eval_formula(builtin(1), micro, "m2")
    assert out.value == 5 == run_test("s1", micro, "m2").r


def test_eval_minimal_singleton():
    ms = make_set(("a", 1, 1, 4, 4, 3))
    assert eval_formula(parse_formula("(rt Ji (isum Dk 0))"), ms, "a").value == 3


def test_eq4_against_hand_iteration(micro):
    plain = oracles.as_dicts(micro)
    assert oracles.eq4(plain, 1) == 2
    assert eval_formula(builtin(4), micro, "m2").value == 2
    assert eval_formula(builtin(4), micro, "m1").value == oracles.eq4(plain, 0) == 3


def test_divergent_formula():
    ms = make_set(("a", 1, 3, 4, 4), ("b", 2, 2, 4, 4), ("c", 3, 1, 50, 50))
    assert eval_formula(builtin(1), ms, "c").divergent


def test_read_formula_file():
    text = "; best so far\n(rt Ji (isum Dk 0))\n\n" + builtin(2).render() + "\n"
    assert read_formula_file(text) == [parse_formula("(rt Ji (isum Dk 0))"), builtin(2)]


@pytest.fixture(scope="module")
def small_corpus():
    return generate_sets(GenParams(n_sets=6, msgs_per_set=12, target_util=0.7, seed=4))


codons = st.lists(st.integers(0, 2**16 - 1), min_size=8, max_size=40)


@settings(max_examples=200, deadline=None)
@given(codons)
def test_batch_equals_scalar(small_corpus, cs):
    try:
        f = map_genotype(Genotype(tuple(cs)), DEFAULT_GRAMMAR)
    except MappingIncomplete:
        return
    ev = CorpusEvaluator(small_corpus)
    values, divergent = ev.evaluate(f)
    n = 0
    for ms in small_corpus:
        for m in ms:
            out = eval_formula(f, ms, m.id)
            assert bool(divergent[n]) == out.divergent
            if not out.divergent:
                assert int(values[n]) == out.value
            n += 1
