"""Tokens, terms, and equations.

A token is an atomic building block: a derivative of a data field (order 0
meaning the raw field), the inverse of the time coordinate, or a constant.
A term is a product of tokens with a real coefficient; an equation is a
collection of terms where one designated target term carries coefficient 1
and equals the coefficient-weighted sum of the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, SingularityError, ValidationError

DERIVATIVE = "derivative"
INVERSE = "inverse_coordinate"
CONSTANT = "constant"


@dataclass(frozen=True, order=True)
class Token:
    family: str
    variable: str = ""
    order: int = 0
    axis: str = ""

    def __post_init__(self):
        if self.family == DERIVATIVE:
            if not self.variable or self.axis:
                raise ValidationError("derivative token needs a variable and no axis")
            if self.order < 0:
                raise ValidationError("derivative order must be non-negative")
        elif self.family == INVERSE:
            if not self.axis or self.variable or self.order:
                raise ValidationError("inverse-coordinate token needs only an axis")
        elif self.family == CONSTANT:
            if self.variable or self.order or self.axis:
                raise ValidationError("constant token takes no parameters")
        else:
            raise ValidationError(f"unknown token family {self.family!r}")

    @property
    def key(self):
        if self.family == DERIVATIVE:
            return self.variable if self.order == 0 else f"d{self.order}_{self.variable}"
        if self.family == INVERSE:
            return f"inv_{self.axis}"
        return "const"

    def pretty(self):
        if self.family == DERIVATIVE:
            if self.order == 0:
                return self.variable
            if self.order == 1:
                return f"d{self.variable}/dt"
            return f"d{self.order}{self.variable}/dt{self.order}"
        if self.family == INVERSE:
            return f"1/{self.axis}"
        return "1"


def raw(variable):
    return Token(DERIVATIVE, variable=variable, order=0)


def deriv(variable, order=1):
    return Token(DERIVATIVE, variable=variable, order=order)


def inverse(axis):
    return Token(INVERSE, axis=axis)


def const():
    return Token(CONSTANT)


def parse_token(key):
    if key == "const":
        return const()
    if key.startswith("inv_"):
        return inverse(key[4:])
    if key.startswith("d") and "_" in key:
        head, _, var = key.partition("_")
        if head[1:].isdigit():
            return Token(DERIVATIVE, variable=var, order=int(head[1:]))
    return raw(key)


@dataclass(frozen=True)
class Term:
    """A product of tokens with a real coefficient.

    The token tuple is stored sorted, so two terms with the same factor
    multiset compare equal regardless of construction order.
    """

    tokens: tuple[Token, ...]
    coefficient: float = 1.0

    def __post_init__(self):
        if not self.tokens:
            raise ValidationError("a term needs at least one token factor")
        object.__setattr__(self, "tokens", tuple(sorted(self.tokens)))

    @property
    def key(self):
        return "*".join(t.key for t in self.tokens)

    @property
    def power(self):
        """Total polynomial power in raw (order-0) fields."""
        return sum(1 for t in self.tokens if t.family == DERIVATIVE and t.order == 0)

    @property
    def max_derivative_order(self):
        return max((t.order for t in self.tokens if t.family == DERIVATIVE), default=0)

    def has_derivative(self, variable=None, min_order=1):
        return any(
            t.family == DERIVATIVE
            and t.order >= min_order
            and (variable is None or t.variable == variable)
            for t in self.tokens
        )

    def with_coefficient(self, coefficient):
        return Term(self.tokens, float(coefficient))

    def pretty(self):
        return "*".join(t.pretty() for t in self.tokens)


def parse_term(key, coefficient=1.0):
    return Term(tuple(parse_token(k) for k in key.split("*")), coefficient)


def canonical_key(term):
    """Deterministic, factor-order-independent term key."""
    return term.key


@dataclass(frozen=True)
class Equation:
    """Terms plus a designated target term with coefficient fixed at 1.

    Semantics: ``target = sum(coefficient_j * term_j)`` over the remaining
    terms, i.e. coefficients are stored in right-hand-side convention.
    """

    terms: tuple[Term, ...]
    target_index: int

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not (0 <= self.target_index < len(self.terms)):
            raise ValidationError("target index out of range")
        if self.terms[self.target_index].coefficient != 1.0:
            raise ValidationError("target term must carry coefficient exactly 1")
        keys = [t.key for t in self.terms]
        if len(set(keys)) != len(keys):
            raise ValidationError("duplicate terms (by canonical key) in equation")
        if not any(t.has_derivative() for t in self.terms):
            raise ValidationError("equation contains no derivative of order >= 1")

    @property
    def target(self):
        return self.terms[self.target_index]

    @property
    def complexity(self):
        return len(self.terms)

    @property
    def rhs_terms(self):
        return tuple(t for i, t in enumerate(self.terms) if i != self.target_index)

    def coefficients(self):
        """Mapping canonical key -> coefficient (target maps to 1)."""
        return {t.key: t.coefficient for t in self.terms}

    def pretty(self):
        parts = []
        for t in self.rhs_terms:
            c = t.coefficient
            if not parts:
                parts.append(f"{c:g}*{t.pretty()}")
            else:
                sign = "-" if c < 0 else "+"
                parts.append(f"{sign} {abs(c):g}*{t.pretty()}")
        rhs = " ".join(parts) if parts else "0"
        return f"{self.target.pretty()} = {rhs}"


def make_equation(terms, target_key):
    """Build an Equation designating the term with ``target_key`` as target."""
    terms = tuple(terms)
    for i, t in enumerate(terms):
        if t.key == target_key:
            if t.coefficient != 1.0:
                terms = terms[:i] + (t.with_coefficient(1.0),) + terms[i + 1 :]
            return Equation(terms, i)
    raise ValidationError(f"target key {target_key!r} not among the equation terms")


def evaluate_token(token, data):
    """Evaluate a token on the data grid; constant tokens give all ones."""
    if token.family == CONSTANT:
        return np.ones(len(data))
    if token.family == INVERSE:
        if token.axis != data.time_name:
            raise EvaluationError(
                f"inverse-coordinate axis {token.axis!r} is not the data time axis "
                f"{data.time_name!r}"
            )
        if np.any(data.grid == 0):
            raise SingularityError("inverse-coordinate token over a grid containing zero")
        return 1.0 / data.grid
    try:
        return data.derivatives[(token.variable, token.order)]
    except KeyError:
        raise EvaluationError(
            f"derivative ({token.variable!r}, order {token.order}) missing from data"
        ) from None


def evaluate_term(term, data):
    """Element-wise product of the factor evaluations (coefficient excluded)."""
    out = evaluate_token(term.tokens[0], data)
    for token in term.tokens[1:]:
        out = out * evaluate_token(token, data)
    return out


def equation_residual(equation, data):
    """target evaluation minus the coefficient-weighted sum of the rest."""
    res = np.array(evaluate_term(equation.target, data), dtype=float)
    for t in equation.rhs_terms:
        res = res - t.coefficient * evaluate_term(t, data)
    return res


class TermCache:
    """Memoizes term evaluations on a fixed DataSet, keyed by canonical key."""

    def __init__(self, data):
        self.data = data
        self._cache = {}

    def evaluate(self, term):
        key = term.key
        hit = self._cache.get(key)
        if hit is None:
            hit = evaluate_term(term, self.data)
            self._cache[key] = hit
        return hit
