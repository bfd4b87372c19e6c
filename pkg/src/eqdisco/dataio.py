"""Observational data handling: CSV loading, derivatives, grid refinement.

A :class:`DataSet` couples a strictly increasing time grid with named
observation channels and any derivative fields computed from them. All
operations return new instances; arrays are marked read-only so a DataSet
can be shared freely between concurrent discovery runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, UnivariateSpline

from .errors import (
    ConfigError,
    LoadError,
    ParseError,
    StencilError,
    ValidationError,
)

DIFF_METHODS = ("central", "smoothed", "spline")


def _readonly(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataSet:
    """Immutable container of a time grid, channels, and derivative fields.

    ``derivatives`` maps ``(variable, order)`` to a sequence aligned with
    ``grid``. Order-0 derivatives are the channel values themselves and are
    materialized on construction.
    """

    grid: np.ndarray
    channels: dict[str, np.ndarray]
    time_name: str = "t"
    derivatives: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        grid = _readonly(self.grid)
        object.__setattr__(self, "grid", grid)
        if grid.ndim != 1 or len(grid) < 3:
            raise ValidationError("grid must be one-dimensional with length >= 3")
        if not np.all(np.isfinite(grid)):
            raise ValidationError("grid contains non-finite values")
        if not np.all(np.diff(grid) > 0):
            raise ValidationError("grid values must be strictly increasing")
        channels = {}
        for name, values in self.channels.items():
            values = _readonly(values)
            if values.shape != grid.shape:
                raise ValidationError(
                    f"channel {name!r} has length {len(values)}, grid has {len(grid)}"
                )
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"channel {name!r} contains non-finite values")
            channels[name] = values
        object.__setattr__(self, "channels", channels)
        derivs = {}
        for (name, order), values in self.derivatives.items():
            values = _readonly(values)
            if values.shape != grid.shape:
                raise ValidationError(f"derivative ({name}, {order}) misaligned with grid")
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"derivative ({name}, {order}) contains non-finite values")
            derivs[(name, order)] = values
        for name, values in channels.items():
            derivs[(name, 0)] = values
        object.__setattr__(self, "derivatives", derivs)

    def __len__(self):
        return len(self.grid)

    def derivative(self, variable, order):
        try:
            return self.derivatives[(variable, order)]
        except KeyError:
            raise KeyError(f"derivative ({variable!r}, order {order}) not computed") from None

    def with_derivative(self, variable, order, values):
        derivs = dict(self.derivatives)
        derivs[(variable, order)] = values
        return DataSet(self.grid, self.channels, self.time_name, derivs)


def load_csv(path, time_column, value_columns, time_alias=None, aliases=None):
    """Load a DataSet from a headered CSV file.

    ``aliases`` optionally renames CSV columns to channel names
    (e.g. ``{"Hare": "u"}``); ``time_alias`` renames the time axis.
    """
    aliases = aliases or {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot open data file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"data file {path} is empty") from None
        header = [h.strip() for h in header]
        for col in [time_column, *value_columns]:
            if col not in header:
                raise LoadError(f"column {col!r} not found in {path} (header: {header})")
        idx = {col: header.index(col) for col in [time_column, *value_columns]}
        rows = {col: [] for col in idx}
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            for col, j in idx.items():
                cell = row[j].strip()
                try:
                    rows[col].append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"non-numeric cell {cell!r} in column {col!r} at row {rownum}"
                    ) from None
    grid = np.asarray(rows[time_column])
    if len(grid) >= 2 and not np.all(np.diff(grid) > 0):
        raise ValidationError(f"time column {time_column!r} is not strictly increasing")
    channels = {aliases.get(col, col): np.asarray(rows[col]) for col in value_columns}
    return DataSet(grid, channels, time_name=time_alias or time_column)


def _central_first(values, grid):
    """Second-order first derivative on a possibly non-uniform grid.

    One-sided second-order three-point stencils at the endpoints.
    """
    n = len(values)
    out = np.empty(n)
    h1 = grid[1:-1] - grid[:-2]
    h2 = grid[2:] - grid[1:-1]
    out[1:-1] = (
        -h2 / (h1 * (h1 + h2)) * values[:-2]
        + (h2 - h1) / (h1 * h2) * values[1:-1]
        + h1 / (h2 * (h1 + h2)) * values[2:]
    )
    for i, sign in ((0, 1), (n - 1, -1)):
        j = i + sign
        k = i + 2 * sign
        a = grid[j] - grid[i]
        b = grid[k] - grid[i]
        out[i] = (
            values[i] * (-(a + b)) / (a * b)
            + values[j] * b / (a * (b - a))
            + values[k] * a / (b * (a - b))
        )
    return out


def _quadratic_window_derivs(values, grid, window):
    """Local quadratic least-squares fit per window; returns (d1, d2)."""
    n = len(values)
    half = window // 2
    d1 = np.empty(n)
    d2 = np.empty(n)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        if hi - lo < window:
            lo = max(0, hi - window)
            hi = min(n, lo + window)
        x = grid[lo:hi] - grid[i]
        A = np.column_stack([x * x, x, np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(A, values[lo:hi], rcond=None)
        d1[i] = coef[1]
        d2[i] = 2.0 * coef[0]
    return d1, d2


def differentiate(
    data,
    variable,
    order,
    method="smoothed",
    window=5,
    max_order=2,
    smoothing=0.0,
):
    """Return a new DataSet with the (variable, order) derivative added.

    Methods:

    ``central``
        second-order central differences (one-sided at the endpoints),
        applied iteratively for orders above one;
    ``smoothed``
        local quadratic least-squares fit over an odd ``window``, then
        analytic differentiation of the fit;
    ``spline``
        cubic smoothing spline through the channel (``smoothing`` is the
        residual budget passed to the spline fit; zero interpolates) and
        analytic derivative of the spline. Useful for noisy field data
        where local stencils are badly biased.
    """
    if order < 1:
        raise ConfigError("derivative order must be >= 1")
    if order > max_order:
        raise ConfigError(f"derivative order {order} exceeds configured maximum {max_order}")
    if method not in DIFF_METHODS:
        raise ConfigError(f"unknown differentiation method {method!r}")
    if variable not in data.channels:
        raise KeyError(f"variable {variable!r} not in data")
    grid = data.grid
    values = data.channels[variable]
    if method == "central":
        if len(grid) < 2 * order + 1:
            raise StencilError(
                f"grid length {len(grid)} too short for order-{order} central stencil"
            )
        out = values
        for _ in range(order):
            out = _central_first(out, grid)
        return data.with_derivative(variable, order, out)
    if method == "smoothed":
        if window % 2 == 0 or window < 3:
            raise ConfigError("smoothing window must be odd and >= 3")
        if len(grid) < window or len(grid) < 2 * order + 1:
            raise StencilError(
                f"grid length {len(grid)} too short for window-{window} smoothing"
            )
        if order <= 2:
            d1, d2 = _quadratic_window_derivs(values, grid, window)
            out = d1 if order == 1 else d2
        else:
            out = values
            for _ in range(order):
                out, _ = _quadratic_window_derivs(out, grid, window)
        return data.with_derivative(variable, order, out)
    # spline
    if smoothing and smoothing > 0:
        spl = UnivariateSpline(grid, values, k=3, s=float(smoothing))
        out = spl(grid, order)
    else:
        spl = CubicSpline(grid, values)
        out = spl(grid, order)
    return data.with_derivative(variable, order, np.asarray(out))


def refine(data, points, smoothing=0.0, derivative_orders=()):
    """Resample all channels onto a uniform grid with ``points`` nodes.

    Channels are re-evaluated from a cubic (smoothing) spline fit of the
    originals on the source grid. ``derivative_orders`` lists derivative
    orders to evaluate from that same spline on the refined grid; other
    derivative fields are discarded and must be recomputed.
    """
    if points < 3:
        raise ConfigError("refined grid needs at least 3 points")
    grid = np.linspace(data.grid[0], data.grid[-1], int(points))
    channels = {}
    derivs = {}
    for name, values in data.channels.items():
        if smoothing and smoothing > 0:
            spl = UnivariateSpline(data.grid, values, k=3, s=float(smoothing))
        else:
            spl = CubicSpline(data.grid, values)
        channels[name] = np.asarray(spl(grid))
        for order in derivative_orders:
            derivs[(name, int(order))] = np.asarray(spl(grid, int(order)))
    return DataSet(grid, channels, time_name=data.time_name, derivatives=derivs)


def normalize(data):
    """Divide every channel (and its derivatives) by its standard deviation.

    Returns the rescaled DataSet and the per-channel factors, which the
    report records so results can be mapped back to raw units.
    """
    factors = {name: float(np.std(values)) for name, values in data.channels.items()}
    for name, f in factors.items():
        if f == 0:
            raise ValidationError(f"channel {name!r} has zero dispersion")
    channels = {name: values / factors[name] for name, values in data.channels.items()}
    derivs = {
        (name, order): values / factors[name]
        for (name, order), values in data.derivatives.items()
        if order > 0
    }
    return DataSet(data.grid, channels, data.time_name, derivs), factors
