"""Numerical solution of sampled equation systems with uncertainty bands.

Sampled equations may contain their derivatives nonlinearly (products such
as u'*v or u'*v'), so the system is not in explicit ODE form. The resolver
treats each step's derivative vector as the unknown of a small algebraic
system, solved by damped Newton iteration with an analytic Jacobian derived
from the term structure. Integration uses an adaptive Dormand-Prince 5(4)
scheme with dense output; envelopes are pointwise min/max/mean bands over a
set of sampled trajectories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    ContractError,
    ConvergenceError,
    DivergenceError,
    StiffnessError,
    ValidationError,
)
from .tokens import CONSTANT, DERIVATIVE, INVERSE


def _token_value(token, t, state, derivs):
    if token.family == CONSTANT:
        return 1.0
    if token.family == INVERSE:
        if t == 0:
            raise ValidationError("inverse-coordinate token evaluated at t = 0")
        return 1.0 / t
    if token.order == 0:
        return state[token.variable]
    return derivs[token.variable]


def _term_value(term, t, state, derivs):
    out = term.coefficient
    for token in term.tokens:
        out *= _token_value(token, t, state, derivs)
    return out


def _term_grad(term, t, state, derivs, variables):
    """Gradient of the term value w.r.t. the derivative vector."""
    grad = {v: 0.0 for v in variables}
    vals = [_token_value(tok, t, state, derivs) for tok in term.tokens]
    for i, token in enumerate(term.tokens):
        if token.family == DERIVATIVE and token.order == 1:
            partial = term.coefficient
            for j, v in enumerate(vals):
                if j != i:
                    partial *= v
            grad[token.variable] += partial
    return grad


@dataclass(frozen=True)
class ResolvedSystem:
    """Equations in resolver form: one per state variable, each containing
    that variable's first derivative, with no derivative above order 1."""

    variables: tuple[str, ...]
    equations: dict
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def residual(self, t, state_vec, deriv_vec):
        state = dict(zip(self.variables, state_vec))
        derivs = dict(zip(self.variables, deriv_vec))
        out = np.empty(len(self.variables))
        for i, v in enumerate(self.variables):
            eq = self.equations[v]
            r = _term_value(eq.target, t, state, derivs)
            for term in eq.rhs_terms:
                r -= _term_value(term, t, state, derivs)
            out[i] = r
        return out

    def jacobian(self, t, state_vec, deriv_vec):
        state = dict(zip(self.variables, state_vec))
        derivs = dict(zip(self.variables, deriv_vec))
        J = np.zeros((len(self.variables), len(self.variables)))
        for i, v in enumerate(self.variables):
            eq = self.equations[v]
            g = _term_grad(eq.target, t, state, derivs, self.variables)
            for term in eq.rhs_terms:
                tg = _term_grad(term, t, state, derivs, self.variables)
                for k in g:
                    g[k] -= tg[k]
            for k, var in enumerate(self.variables):
                J[i, k] = g[var]
        return J

    def derivatives(self, t, state_vec, guess=None):
        """Solve the algebraic system for the derivative vector."""
        m = len(self.variables)
        d = np.zeros(m) if guess is None else np.array(guess, dtype=float)
        f = self.residual(t, state_vec, d)
        norm = float(np.linalg.norm(f))
        for _ in range(self.newton_max_iter):
            if norm < self.newton_tol:
                return d
            J = self.jacobian(t, state_vec, d)
            try:
                step = np.linalg.solve(J, f)
            except np.linalg.LinAlgError:
                raise ConvergenceError(
                    "singular Jacobian while resolving derivatives",
                    last_iterate=d,
                ) from None
            scale = 1.0
            for _ in range(25):
                trial = d - scale * step
                ft = self.residual(t, state_vec, trial)
                nt = float(np.linalg.norm(ft))
                if nt < norm:
                    d, f, norm = trial, ft, nt
                    break
                scale *= 0.5
            else:
                raise ConvergenceError(
                    "damped Newton made no progress resolving derivatives",
                    last_iterate=d,
                )
        if norm < self.newton_tol:
            return d
        raise ConvergenceError(
            f"Newton did not reach tolerance (residual {norm:.3e})",
            last_iterate=d,
        )


def resolve(system):
    """Build a ResolvedSystem from a SampledSystem (or mapping of
    variable -> Equation). Rejects second-order terms and equations
    missing their own first derivative."""
    equations = getattr(system, "equations", system)
    variables = tuple(sorted(equations))
    for v in variables:
        eq = equations[v]
        for term in eq.terms:
            if term.max_derivative_order > 1:
                raise ValidationError(
                    f"equation for {v!r} contains a derivative of order "
                    f"{term.max_derivative_order}; only first-order systems "
                    f"can be integrated"
                )
        if not any(t.has_derivative(variable=v) for t in eq.terms):
            raise ValidationError(
                f"equation for {v!r} does not contain d{v}/dt"
            )
    return ResolvedSystem(variables=variables, equations=dict(equations))


@dataclass(frozen=True)
class Trajectory:
    variables: tuple[str, ...]
    times: np.ndarray
    states: np.ndarray  # shape (len(times), len(variables))

    def channel(self, variable):
        return self.states[:, self.variables.index(variable)]


def integrate(rs, y0, t_span, report_points=200, rtol=1e-7, atol=1e-9):
    """Adaptive Dormand-Prince integration onto a uniform report grid."""
    t0, t1 = t_span
    if not t1 > t0:
        raise ValidationError("t_span must satisfy t1 > t0")
    y0 = np.asarray(y0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise ValidationError("initial state contains non-finite values")
    last_guess = {"d": None, "t": t0}

    def rhs(t, y):
        if not np.all(np.isfinite(y)):
            raise DivergenceError(
                "state became non-finite during integration",
                last_good_time=last_guess["t"],
            )
        d = rs.derivatives(t, y, guess=last_guess["d"])
        last_guess["d"] = d
        last_guess["t"] = t
        return d

    try:
        sol = solve_ivp(
            rhs,
            (t0, t1),
            y0,
            method="RK45",
            rtol=rtol,
            atol=atol,
            dense_output=True,
        )
    except (DivergenceError, ConvergenceError):
        raise
    if not sol.success:
        if sol.t.size and not np.all(np.isfinite(sol.y[:, -1])):
            raise DivergenceError(
                "integration diverged", last_good_time=float(sol.t[-1])
            )
        raise StiffnessError(f"integration failed: {sol.message}")
    grid = np.linspace(t0, t1, int(report_points))
    states = sol.sol(grid).T
    if not np.all(np.isfinite(states)):
        raise DivergenceError(
            "dense output contains non-finite values",
            last_good_time=float(sol.t[-1]),
        )
    return Trajectory(variables=rs.variables, times=grid, states=states)


@dataclass(frozen=True)
class Envelope:
    variables: tuple[str, ...]
    times: np.ndarray
    low: np.ndarray
    high: np.ndarray
    mean: np.ndarray
    excluded: int = 0

    def band(self, variable):
        j = self.variables.index(variable)
        return self.low[:, j], self.high[:, j], self.mean[:, j]


def envelope(trajectories, excluded=0):
    """Pointwise min/max/mean band over trajectories on a shared grid."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ContractError("envelope of an empty trajectory set")
    first = trajectories[0]
    for tr in trajectories[1:]:
        if tr.variables != first.variables or not np.array_equal(
            tr.times, first.times
        ):
            raise ContractError("trajectories do not share a report grid")
    stack = np.stack([tr.states for tr in trajectories])
    return Envelope(
        variables=first.variables,
        times=first.times,
        low=stack.min(axis=0),
        high=stack.max(axis=0),
        mean=stack.mean(axis=0),
        excluded=excluded,
    )


def integrate_samples(samples, y0, t_span, report_points=200, rtol=1e-7,
                      atol=1e-9, warn=None):
    """Integrate each sampled system; failed samples are excluded from the
    envelope with a warning rather than failing the whole band."""
    trajectories = []
    failed = 0
    for s in samples:
        try:
            rs = resolve(s)
            trajectories.append(
                integrate(rs, y0, t_span, report_points, rtol, atol)
            )
        except (ValidationError, ConvergenceError, StiffnessError,
                DivergenceError) as exc:
            failed += 1
            if warn is not None:
                warn(f"sample {getattr(s, 'index', '?')} excluded: {exc}")
    if not trajectories:
        raise ContractError("every sampled system failed to integrate")
    return envelope(trajectories, excluded=failed), trajectories


def lv_first_integral(u, v, alpha, beta, gamma, delta):
    """Conserved quantity of the ideal Lotka-Volterra system
    u' = alpha*u - beta*u*v, v' = -gamma*v + delta*u*v."""
    return delta * u - gamma * np.log(u) + beta * v - alpha * np.log(v)


def write_trajectory_csv(trajectory, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *trajectory.variables])
        for i, t in enumerate(trajectory.times):
            w.writerow([repr(float(t)), *(repr(float(x)) for x in trajectory.states[i])])


def write_envelope_csv(env, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["t"]
        for v in env.variables:
            header += [f"{v}_min", f"{v}_mean", f"{v}_max"]
        w.writerow(header)
        for i, t in enumerate(env.times):
            row = [repr(float(t))]
            for j in range(len(env.variables)):
                row += [
                    repr(float(env.low[i, j])),
                    repr(float(env.mean[i, j])),
                    repr(float(env.high[i, j])),
                ]
            w.writerow(row)


def plot_envelope(env, path, data=None):
    """SVG overlay: shaded band, dashed mean, observed data in red."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(
        len(env.variables), 1, figsize=(8, 3 * len(env.variables)),
        sharex=True, squeeze=False,
    )
    for j, v in enumerate(env.variables):
        ax = axes[j][0]
        low, high, mean = env.band(v)
        ax.fill_between(env.times, low, high, alpha=0.3, label="min/max band")
        ax.plot(env.times, mean, "--", label="mean solution")
        if data is not None and v in data.channels:
            ax.plot(data.grid, data.channels[v], "r.", label="data")
        ax.set_ylabel(v)
        ax.legend(loc="best", fontsize=8)
    axes[-1][0].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
