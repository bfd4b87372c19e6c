"""Sparse regression for the memetic fitness step.

A randomly chosen derivative-containing term is treated as the target and
balanced against the remaining terms of the candidate equation with an
l1-penalized least-squares fit; coefficients below a relative threshold are
filtered as insignificant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateEquationError, NumericError
from .tokens import Equation, TermCache

LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso(design, response, lam, max_sweeps=10000, tol=1e-8):
    """Cyclic coordinate descent for 0.5*||y - Xc||^2 + lam*sum(s_j*|c_j|).

    Columns are scaled to unit l2 norm internally (s_j is the original
    column norm), so for unit-norm designs the penalty is the plain l1
    norm. Coefficients are returned in the original scale. All-zero
    columns get coefficient 0 by convention.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise NumericError("design and response shapes are incompatible")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericError("non-finite entries in design or response")
    if lam < 0:
        raise NumericError("lambda must be non-negative")
    n, p = X.shape
    norms = np.linalg.norm(X, axis=0)
    live = norms > 0
    Xs = np.where(live, X / np.where(live, norms, 1.0), 0.0)
    c = np.zeros(p)
    r = y.copy()
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            if not live[j]:
                continue
            xj = Xs[:, j]
            old = c[j]
            rho = xj @ r + old
            new = _soft(rho, lam)
            if new != old:
                r -= (new - old) * xj
                c[j] = new
                delta = max(delta, abs(new - old))
        if delta < tol:
            break
    else:
        raise ConvergenceError(
            f"lasso did not converge in {max_sweeps} sweeps (last delta {delta:.3e})",
            last_iterate=np.where(live, c / np.where(live, norms, 1.0), 0.0),
        )
    return np.where(live, c / np.where(live, norms, 1.0), 0.0)


def lasso_objective(design, response, coefficients, lam):
    """Objective value matching :func:`lasso`'s scaling convention."""
    X = np.asarray(design, dtype=float)
    c = np.asarray(coefficients, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    misfit = 0.5 * float(np.sum((np.asarray(response) - X @ c) ** 2))
    return misfit + lam * float(np.sum(norms * np.abs(c)))


def select_lambda(design, response, grid=LAMBDA_GRID, folds=5, **lasso_kw):
    """Pick lambda from a grid by blocked cross-validated residual."""
    n = len(response)
    folds = min(folds, n)
    bounds = np.linspace(0, n, folds + 1).astype(int)
    best = None
    best_lam = grid[0]
    for lam in grid:
        total = 0.0
        for k in range(folds):
            lo, hi = bounds[k], bounds[k + 1]
            mask = np.ones(n, dtype=bool)
            mask[lo:hi] = False
            if mask.sum() < 2:
                continue
            c = lasso(design[mask], response[mask], lam, **lasso_kw)
            held = response[~mask] - design[~mask] @ c
            total += float(held @ held)
        if best is None or total < best - 1e-15:
            best = total
            best_lam = lam
    return best_lam


@dataclass(frozen=True)
class FitResult:
    """Fitted coefficients (canonical key -> value; target maps to 1),
    the residual norm used as the quality objective, and the keys pruned
    as insignificant."""

    coefficients: dict[str, float]
    residual_norm: float
    pruned: tuple[str, ...]
    target_key: str
    lam: float
    equation: Equation

    @property
    def n_terms(self):
        return len(self.coefficients)


def fit_equation(
    equation,
    data,
    lam="auto",
    epsilon=1e-6,
    rng=None,
    target_variable=None,
    cache=None,
    max_sweeps=10000,
    tol=1e-8,
):
    """Fit an equation by regressing a random target term on the rest.

    The target is drawn uniformly among terms containing a derivative of
    order >= 1 (restricted to ``target_variable`` when given, so every
    equation of a system stays a differential equation in its own state
    variable). Coefficients with magnitude below ``epsilon`` relative to
    the largest fitted magnitude are pruned. ``lam="auto"`` selects the
    penalty per fit by blocked cross-validation over a log grid.
    """
    if len(equation.terms) < 2:
        raise DegenerateEquationError("fit needs at least two terms")
    rng = rng or np.random.default_rng()
    cache = cache or TermCache(data)
    eligible = [
        i
        for i, t in enumerate(equation.terms)
        if t.has_derivative(variable=target_variable)
    ]
    if not eligible:
        raise DegenerateEquationError(
            "no derivative-containing term available as regression target"
        )
    target_index = int(eligible[rng.integers(len(eligible))])
    target = equation.terms[target_index]
    rest = [t for i, t in enumerate(equation.terms) if i != target_index]
    response = np.asarray(cache.evaluate(target), dtype=float)
    design = np.column_stack([cache.evaluate(t) for t in rest])
    if lam == "auto":
        lam_value = select_lambda(design, response, max_sweeps=max_sweeps, tol=tol)
    else:
        lam_value = float(lam)
    coef = lasso(design, response, lam_value, max_sweeps=max_sweeps, tol=tol)
    scale = np.max(np.abs(coef)) if coef.size else 0.0
    cut = epsilon * scale
    kept = []
    pruned = []
    for t, c in zip(rest, coef):
        if c != 0.0 and abs(c) >= cut:
            kept.append(t.with_coefficient(float(c)))
        else:
            pruned.append(t.key)
    residual = response.copy()
    for t in kept:
        residual -= t.coefficient * cache.evaluate(t)
    fitted = Equation(
        (target.with_coefficient(1.0), *kept),
        0,
    )
    coefficients = {t.key: t.coefficient for t in kept}
    coefficients[target.key] = 1.0
    return FitResult(
        coefficients=coefficients,
        residual_norm=float(np.linalg.norm(residual)),
        pruned=tuple(pruned),
        target_key=target.key,
        lam=lam_value,
        equation=fitted,
    )
