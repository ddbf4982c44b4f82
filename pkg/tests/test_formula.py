import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coco.errors import FormulaSyntaxError, MissingMonitorError, UnknownVariableError, VariableLimitError
from coco.formula import (
    And,
    Complement,
    Conjunction,
    Implies,
    Monitor,
    Not,
    Or,
    Var,
    compile_formula,
    evaluate,
    evaluate_unclamped,
    format_expr,
    parse_formula,
    to_dnf,
    truth,
    truth_array,
)
from formula_oracle import formulas_up_to, independent_joint, prob_from_joint, random_formula

A1, A2, A3, A4 = (Var(i) for i in range(4))


@pytest.mark.parametrize("text, ast", [
    ("A1 & A2", And(A1, A2)),
    ("A1 -> A2 -> A3", Implies(A1, Implies(A2, A3))),
    ("!A1 | A2 & A3", Or(Not(A1), And(A2, A3))),
    ("  ( A1|A2 )&A3", And(Or(A1, A2), A3)),
    ("A1 | A2 -> A3", Implies(Or(A1, A2), A3)),
    ("!!A2", Not(Not(A2))),
])
def test_parse(text, ast):
    assert parse_formula(text) == ast


def test_round_trip_through_str():
    for f in formulas_up_to(2):
        assert parse_formula(str(f)) == f


@pytest.mark.parametrize("text, pos", [("A1 &", 5), ("A1 & & A2", 6), ("(A1", 4), ("A1 A2", 4), ("A1 $ A2", 4)])
def test_syntax_error_position(text, pos):
    with pytest.raises(FormulaSyntaxError, match=f"position {pos}") as exc:
        parse_formula(text)
    assert exc.value.position == pos


@pytest.mark.parametrize("text", ["B1", "A0", "A1 & x"])
def test_unknown_variable(text):
    with pytest.raises((UnknownVariableError, FormulaSyntaxError)):
        parse_formula(text)


def test_variable_beyond_monitor_count():
    with pytest.raises(UnknownVariableError):
        parse_formula("A1 & A3", n_vars=2)


@pytest.mark.parametrize("f, dnf", [
    (Not(Or(A1, A2)), And(Not(A1), Not(A2))),
    (Implies(A1, A2), Or(Not(A1), A2)),
    (And(A1, Or(A2, A3)), Or(And(A1, A2), And(A1, A3))),
])
def test_to_dnf_examples(f, dnf):
    assert to_dnf(f) == dnf


def _is_dnf(f, inside=None):
    if isinstance(f, Var):
        return True
    if isinstance(f, Not):
        return isinstance(f.operand, Var)
    if isinstance(f, And):
        return inside != "and_done" and all(_is_dnf(x, "and") for x in (f.left, f.right)) and \
            not any(isinstance(x, Or) for x in (f.left, f.right))
    if isinstance(f, Or):
        return inside is None and all(_is_dnf(x) for x in (f.left, f.right))
    return False


def test_to_dnf_truth_tables_exhaustive():
    rng = np.random.default_rng(3)
    fs = formulas_up_to(2, n_vars=3) + [random_formula(rng, 3, n_vars=4) for _ in range(300)]
    for f in fs:
        d = to_dnf(f)
        assert _is_dnf(d), str(d)
        for a in itertools.product((False, True), repeat=4):
            assert truth(f, a) == truth(d, a)


@pytest.mark.parametrize("text, shown", [
    ("A1 | A2", "m1 + m2 - C(m1,m2)"),
    ("!A1", "1 - m1"),
    ("A1 & A2", "C(m1,m2)"),
    ("A1 & A1", "m1"),
])
def test_compile_shapes(text, shown):
    assert format_expr(compile_formula(parse_formula(text))) == shown


def test_compile_leaf_types():
    assert compile_formula(parse_formula("A1 & A2")) == Conjunction((0, 1))
    assert compile_formula(parse_formula("!A2")) == Complement(Monitor(1))


@pytest.mark.parametrize("text, ms, expected", [
    ("A1 | A2", (0.5, 0.5), 0.75),
    ("!A1", (0.3, 0.9), 0.7),
    ("A1 & A2", (0.9, 0.8), 0.72),
    ("A1 & !A2", (0.9, 0.8), 0.9 - 0.72),
])
def test_evaluate_examples(text, ms, expected):
    assert evaluate(compile_formula(parse_formula(text)), ms) == pytest.approx(expected, abs=1e-12)


def test_evaluate_clamps():
    e = compile_formula(parse_formula("A1 | A2"))
    assert evaluate_unclamped(e, (0.9, 0.9), lambda idx, ms: 0.0) == pytest.approx(1.8)
    assert evaluate(e, (0.9, 0.9), lambda idx, ms: 0.0) == 1.0


def test_evaluate_vectorised():
    e = compile_formula(parse_formula("A1 | A2"))
    ms = np.array([[0.5, 0.5], [0.0, 1.0]])
    assert np.allclose(evaluate(e, ms), [0.75, 1.0])


def test_missing_monitor():
    with pytest.raises(MissingMonitorError):
        evaluate(compile_formula(parse_formula("A1 & A3")), (0.5, 0.5))


def test_variable_limit():
    f = parse_formula(" & ".join(f"A{i}" for i in range(1, 8)))
    with pytest.raises(VariableLimitError):
        compile_formula(f)
    assert compile_formula(f, variable_limit=7) == Conjunction(tuple(range(7)))


def test_tautology_and_contradiction():
    assert evaluate(compile_formula(parse_formula("A1 | !A1")), (0.3,)) == pytest.approx(1.0)
    assert evaluate(compile_formula(parse_formula("A1 & !A1")), (0.3,)) == 0.0


def test_truth_array_matches_truth():
    f = parse_formula("A1 -> (A2 | !A3)")
    flags = np.array(list(itertools.product((False, True), repeat=3)))
    assert truth_array(f, flags).tolist() == [truth(f, a) for a in flags]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_semantic_equivalence_under_independence(seed, ms):
    f = random_formula(np.random.default_rng(seed), 3)
    got = evaluate_unclamped(compile_formula(f), ms)
    assert got == pytest.approx(prob_from_joint(f, independent_joint(ms), 3), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_conjunction_monotone_under_product(ms, bump):
    e = compile_formula(parse_formula("A1 & A2 & A3"))
    higher = np.maximum(ms, bump)
    assert evaluate(e, higher) >= evaluate(e, ms) - 1e-15
