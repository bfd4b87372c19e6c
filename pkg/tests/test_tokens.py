"""Tokens, terms, and equation invariants (direct checks)."""

import numpy as np
import pytest

from eqdisco.dataio import DataSet
from eqdisco.errors import (
    EvaluationError,
    SingularityError,
    ValidationError,
)
from eqdisco.tokens import (
    Equation,
    Term,
    TermCache,
    const,
    deriv,
    equation_residual,
    evaluate_term,
    evaluate_token,
    inverse,
    make_equation,
    parse_term,
    parse_token,
    raw,
)


@pytest.fixture
def data():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    u = np.array([1.0, 4.0, 9.0, 16.0])
    v = np.array([2.0, 3.0, 5.0, 7.0])
    du = np.array([2.0, 4.0, 6.0, 8.0])
    return DataSet(
        grid=t,
        channels={"u": u, "v": v},
        time_name="t",
        derivatives={("u", 1): du},
    )


def test_token_keys():
    assert raw("u").key == "u"
    assert deriv("u", 1).key == "d1_u"
    assert deriv("v", 2).key == "d2_v"
    assert inverse("t").key == "inv_t"
    assert const().key == "const"


def test_parse_token_round_trip():
    for tok in (raw("u"), deriv("v", 2), inverse("t"), const()):
        assert parse_token(tok.key) == tok


def test_token_validation():
    with pytest.raises(ValidationError):
        evaluate_token  # keep linters quiet about the import
        deriv("", 1)
    with pytest.raises(ValidationError):
        Term(())


def test_term_key_is_factor_order_independent():
    a = Term((raw("u"), raw("v")))
    b = Term((raw("v"), raw("u")))
    assert a == b
    assert a.key == b.key == "u*v"


def test_term_properties():
    t = Term((raw("u"), deriv("u", 1)))
    assert t.power == 1
    assert t.max_derivative_order == 1
    assert t.has_derivative(variable="u")
    assert not t.has_derivative(variable="v")
    assert parse_term(t.key).key == t.key


def test_equation_invariants():
    u = Term((raw("u"),), 0.5)
    du = Term((deriv("u", 1),), 1.0)
    eq = Equation((du, u), 0)
    assert eq.target is du
    assert eq.complexity == 2
    assert eq.coefficients() == {"d1_u": 1.0, "u": 0.5}
    # target coefficient must be exactly 1
    with pytest.raises(ValidationError):
        Equation((du.with_coefficient(2.0), u), 0)
    # no duplicate canonical keys
    with pytest.raises(ValidationError):
        Equation((du, u, Term((raw("u"),), 0.1)), 0)
    # at least one derivative term somewhere
    with pytest.raises(ValidationError):
        Equation((Term((raw("u"),), 1.0), Term((raw("v"),), 0.2)), 0)


def test_make_equation_renormalizes_target():
    terms = [Term((deriv("u", 1),), 3.0), Term((raw("u"),), 0.5)]
    eq = make_equation(terms, "d1_u")
    assert eq.target.coefficient == 1.0


def test_evaluate_token_and_term(data):
    np.testing.assert_allclose(evaluate_token(const(), data), np.ones(4))
    np.testing.assert_allclose(
        evaluate_token(inverse("t"), data), 1.0 / data.grid
    )
    np.testing.assert_allclose(
        evaluate_term(Term((raw("u"), raw("v")), 7.0), data),
        data.channels["u"] * data.channels["v"],  # coefficient excluded
    )


def test_inverse_token_errors(data):
    with pytest.raises(EvaluationError):
        evaluate_token(inverse("x"), data)
    zero_grid = DataSet(
        grid=np.array([0.0, 1.0, 2.0]),
        channels={"u": np.ones(3)},
    )
    with pytest.raises(SingularityError):
        evaluate_token(inverse("t"), zero_grid)


def test_missing_derivative_raises(data):
    with pytest.raises(EvaluationError):
        evaluate_token(deriv("v", 1), data)


def test_equation_residual(data):
    # du/dt = 2*u residual computed against the stored fields
    eq = make_equation(
        [Term((deriv("u", 1),), 1.0), Term((raw("u"),), 2.0)], "d1_u"
    )
    expected = data.derivatives[("u", 1)] - 2.0 * data.channels["u"]
    np.testing.assert_allclose(equation_residual(eq, data), expected)


def test_term_cache_reuses_arrays(data):
    cache = TermCache(data)
    a = cache.evaluate(Term((raw("u"), raw("v"))))
    b = cache.evaluate(Term((raw("v"), raw("u")), 5.0))
    assert a is b  # same canonical key, coefficient not part of the cache
