"""Fixed-library sparse-regression baseline with library bootstrapping.

The comparison method fits each state derivative against a fixed 10-term
polynomial library with sequential thresholded least squares (STLSQ),
repeated over many trials in which library columns are randomly pruned
and grid rows resampled. Aggregation keeps the most frequent exact
retained support (the modal model) and reports conditional coefficient
statistics over the trials that produced it, plus per-term marginal
distributions over all trials where the term survived.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tokens import Term, const, parse_term, raw

# Fixed library column order per equation: u, uv, v, u^2, v^2, 1, uv^2,
# vu^2, u^3, v^3 (with u, v the two state variables in sorted order).
LIBRARY_PATTERN = (
    ("A",),
    ("A", "B"),
    ("B",),
    ("A", "A"),
    ("B", "B"),
    (),
    ("A", "B", "B"),
    ("B", "A", "A"),
    ("A", "A", "A"),
    ("B", "B", "B"),
)


@dataclass(frozen=True)
class FixedLibrary:
    """Ordered polynomial terms shared by both equations, evaluated on the
    data grid."""

    variables: tuple[str, str]
    terms: tuple[Term, ...]
    keys: tuple[str, ...]
    matrix: np.ndarray

    @property
    def n_terms(self):
        return len(self.terms)


def build_library(data):
    """Evaluate the fixed 10-term library on the data grid."""
    variables = tuple(sorted(data.channels))
    if len(variables) != 2:
        raise ValidationError(
            f"the fixed library needs exactly 2 state variables, got {variables}"
        )
    a, b = variables
    substitution = {"A": a, "B": b}
    terms = []
    for pattern in LIBRARY_PATTERN:
        if not pattern:
            terms.append(Term((const(),)))
        else:
            terms.append(Term(tuple(raw(substitution[x]) for x in pattern)))
    columns = []
    for term in terms:
        col = np.ones(len(data))
        for token in term.tokens:
            if token.key != "const":
                col = col * data.channels[token.variable]
        columns.append(col)
    matrix = np.column_stack(columns)
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("library evaluations contain non-finite values")
    return FixedLibrary(
        variables=variables,
        terms=tuple(terms),
        keys=tuple(t.key for t in terms),
        matrix=matrix,
    )


def stlsq(design, response, threshold, normalize=True, max_iter=30):
    """Sequential thresholded least squares.

    With ``normalize`` (default) a coefficient's importance is
    ``|c_j| * std(col_j) / std(response)`` — its dispersion-scaled
    contribution — so the threshold is unit-free; constant columns get
    scale 1. Iterated to a fixpoint; an empty support returns all zeros.
    """
    A = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    p = A.shape[1]
    if normalize:
        scale = A.std(axis=0)
        scale[scale < 1e-12] = 1.0
        y_scale = y.std() or 1.0
    else:
        scale = np.ones(p)
        y_scale = 1.0
    keep = np.ones(p, dtype=bool)
    coef = np.zeros(p)
    for _ in range(max_iter):
        coef = np.zeros(p)
        coef[keep] = np.linalg.lstsq(A[:, keep], y, rcond=None)[0]
        importance = np.abs(coef) * scale / y_scale
        new_keep = importance >= threshold
        if not new_keep.any():
            return np.zeros(p)
        if np.array_equal(new_keep, keep):
            return coef
        keep = new_keep
    return coef


@dataclass(frozen=True)
class TermStats:
    mean: float
    sd: float
    half_width: float  # 1.96 * sd, the Eq-8-style band
    rate: float  # fraction of trials retaining the term


@dataclass(frozen=True)
class BaselineResult:
    """Bootstrap outcome for one equation (one state derivative)."""

    variable: str
    keys: tuple[str, ...]
    support: tuple[str, ...]  # modal retained support
    support_rate: float
    coefficients: dict  # modal support key -> TermStats (conditional)
    marginals: dict  # key -> TermStats over all trials retaining it
    n_trials: int
    n_skipped: int

    def equation_terms(self):
        """The modal model as coefficient-bearing Terms."""
        return tuple(
            parse_term(k, self.coefficients[k].mean) for k in self.support
        )


def _stats(values, n_trials):
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return TermStats(
        mean=mean, sd=sd, half_width=1.96 * sd, rate=len(values) / n_trials
    )


def bootstrap_discover(
    data,
    n_boot=1000,
    keep_fraction=0.5,
    threshold=0.2,
    rng=None,
    resample_rows=True,
    normalize=True,
):
    """Library-bootstrapped STLSQ for every state derivative.

    Each trial keeps every library column independently with probability
    ``keep_fraction`` (at least one), optionally resamples grid rows with
    replacement, and runs STLSQ on the reduced problem. Returns one
    BaselineResult per state variable.
    """
    if n_boot < 1:
        raise ValidationError("n_boot must be >= 1")
    if not 0 < keep_fraction <= 1:
        raise ValidationError("keep_fraction must be in (0, 1]")
    rng = rng if rng is not None else np.random.default_rng()
    library = build_library(data)
    n = len(data)
    p = library.n_terms
    results = {}
    for variable in library.variables:
        response = data.derivatives.get((variable, 1))
        if response is None:
            raise ValidationError(
                f"derivative of {variable!r} missing; differentiate first"
            )
        trials = np.zeros((n_boot, p))
        supports = []
        skipped = 0
        for trial in range(n_boot):
            keep = rng.random(p) < keep_fraction
            if not keep.any():
                keep[int(rng.integers(p))] = True
            rows = rng.integers(0, n, n) if resample_rows else np.arange(n)
            try:
                coef = np.zeros(p)
                coef[keep] = stlsq(
                    library.matrix[rows][:, keep],
                    np.asarray(response)[rows],
                    threshold,
                    normalize=normalize,
                )
            except np.linalg.LinAlgError:
                skipped += 1
                supports.append(None)
                continue
            trials[trial] = coef
            supports.append(
                tuple(k for k, c in zip(library.keys, coef) if c != 0.0)
            )
        counted = Counter(s for s in supports if s is not None)
        if not counted:
            raise ValidationError("every bootstrap trial failed")
        modal, modal_count = sorted(
            counted.items(), key=lambda kv: (-kv[1], kv[0])
        )[0]
        modal_mask = np.array([s == modal for s in supports])
        conditional = {}
        for key in modal:
            j = library.keys.index(key)
            conditional[key] = _stats(trials[modal_mask, j], n_boot)
        marginals = {}
        for j, key in enumerate(library.keys):
            col = trials[:, j]
            retained = col[col != 0.0]
            if len(retained):
                marginals[key] = _stats(retained, n_boot)
        results[variable] = BaselineResult(
            variable=variable,
            keys=library.keys,
            support=modal,
            support_rate=modal_count / max(1, n_boot - skipped),
            coefficients=conditional,
            marginals=marginals,
            n_trials=n_boot,
            n_skipped=skipped,
        )
    return results


def format_result(result):
    """Eq-8-style "(mean ± half-width)*term" rendering of the modal model."""
    parts = [
        f"({result.coefficients[k].mean:.4f} ± "
        f"{result.coefficients[k].half_width:.4f})*{k}"
        for k in result.support
    ]
    return f"d{result.variable}/dt = " + " + ".join(parts)


def result_to_json(result):
    return {
        "variable": result.variable,
        "support": list(result.support),
        "support_rate": result.support_rate,
        "coefficients": {
            k: {
                "mean": s.mean,
                "sd": s.sd,
                "half_width": s.half_width,
                "rate": s.rate,
            }
            for k, s in sorted(result.coefficients.items())
        },
        "marginals": {
            k: {
                "mean": s.mean,
                "sd": s.sd,
                "half_width": s.half_width,
                "rate": s.rate,
            }
            for k, s in sorted(result.marginals.items())
        },
        "n_trials": result.n_trials,
        "n_skipped": result.n_skipped,
    }
