"""Aggregation of equations from repeated discovery runs.

Every level-0 Pareto member from each run is collected and aligned by
canonical term key into a table whose cells are coefficient values with a
parallel presence indicator — the input random variables for the joint
distribution learned by :mod:`eqdisco.bayesnet`.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import EqDiscoError, ValidationError
from .evolution import evolve, top_per_complexity
from .tokens import Equation, parse_term


@dataclass(frozen=True)
class EquationEnsemble:
    """Per-run collections of fitted equations for one state variable."""

    variable: str
    runs: tuple[tuple[Equation, ...], ...]
    skipped: int = 0

    def __post_init__(self):
        for front in self.runs:
            for eq in front:
                if not eq.target.has_derivative(variable=self.variable):
                    raise ValidationError(
                        f"equation target {eq.target.key!r} does not involve a "
                        f"derivative of {self.variable!r}"
                    )

    @property
    def equations(self):
        return tuple(eq for front in self.runs for eq in front)


@dataclass(frozen=True)
class TermTable:
    """Equations as rows aligned on lexicographically ordered term columns.

    ``values[i, j]`` is the coefficient of term ``columns[j]`` in equation
    ``i`` (exactly 0 when absent); ``presence`` is the parallel 0/1
    indicator; ``targets[i]`` records which column was the row's target.
    """

    columns: tuple[str, ...]
    values: np.ndarray
    presence: np.ndarray
    targets: tuple[str, ...]
    variable: str = ""
    dropped: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        presence = np.asarray(self.presence, dtype=int)
        if values.shape != presence.shape or values.shape[1] != len(self.columns):
            raise ValidationError("term table shapes are inconsistent")
        if np.any((presence == 0) & (values != 0)):
            raise ValidationError("absent cells must hold exact zero")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "presence", presence)

    @property
    def n_rows(self):
        return self.values.shape[0]

    def decode_row(self, i):
        """Rebuild the source Equation from row ``i``."""
        terms = [
            parse_term(key, float(self.values[i, j]))
            for j, key in enumerate(self.columns)
            if self.presence[i, j]
        ]
        target_key = self.targets[i]
        for j, t in enumerate(terms):
            if t.key == target_key:
                return Equation(tuple(terms), j)
        raise ValidationError(f"row {i} lost its target column {target_key!r}")


def collect(data, n_runs, config, evolve_fn=evolve, top_l=3):
    """Run the evolutionary search ``n_runs`` times (seeds seed+0..n-1)
    and keep the top ``top_l`` front members at every complexity value
    (level-0 members are always among them). A failed run is retried once
    with a fresh seed, then counted as skipped."""
    if n_runs < 1:
        raise ValidationError("n_runs must be >= 1")
    runs = []
    skipped = 0
    retry_base = config.seed + n_runs
    for k in range(n_runs):
        front = None
        for seed in (config.seed + k, retry_base + k):
            cfg = dataclasses.replace(config, seed=seed)
            try:
                front = evolve_fn(data, cfg)
                break
            except EqDiscoError:
                front = None
        if front is None:
            skipped += 1
            continue
        equations = tuple(
            ind.fit.equation for ind in top_per_complexity(front, top_l)
        )
        runs.append(equations)
    return EquationEnsemble(
        variable=config.target_variable or "", runs=tuple(runs), skipped=skipped
    )


def tabulate(ensemble):
    """Align all collected equations into a TermTable."""
    equations = ensemble.equations
    if not equations:
        raise ValidationError("cannot tabulate an empty ensemble")
    columns = sorted({t.key for eq in equations for t in eq.terms})
    index = {key: j for j, key in enumerate(columns)}
    values = np.zeros((len(equations), len(columns)))
    presence = np.zeros_like(values, dtype=int)
    targets = []
    for i, eq in enumerate(equations):
        for t in eq.terms:
            j = index[t.key]
            values[i, j] = t.coefficient
            presence[i, j] = 1
        targets.append(eq.target.key)
    return TermTable(
        columns=tuple(columns),
        values=values,
        presence=presence,
        targets=tuple(targets),
        variable=ensemble.variable,
    )


def filter_support(table, min_support=2):
    """Drop columns present in fewer than ``min_support`` rows.

    Dropped keys are recorded on the table as noise candidates. Rows whose
    target column would be dropped keep it regardless.
    """
    counts = table.presence.sum(axis=0)
    protected = set(table.targets)
    keep = [
        j
        for j, key in enumerate(table.columns)
        if counts[j] >= min_support or key in protected
    ]
    dropped = tuple(
        key for j, key in enumerate(table.columns) if j not in set(keep)
    )
    values = table.values[:, keep].copy()
    presence = table.presence[:, keep].copy()
    return TermTable(
        columns=tuple(table.columns[j] for j in keep),
        values=values,
        presence=presence,
        targets=table.targets,
        variable=table.variable,
        dropped=dropped,
    )


def write_csv(table, path):
    """Write the coefficient table and a parallel ``.presence.csv``."""
    path = str(path)
    presence_path = (
        path[: -len(".csv")] + ".presence.csv" if path.endswith(".csv")
        else path + ".presence.csv"
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["target", *table.columns])
        for i in range(table.n_rows):
            w.writerow(
                [table.targets[i], *(repr(float(v)) for v in table.values[i])]
            )
    with open(presence_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["target", *table.columns])
        for i in range(table.n_rows):
            w.writerow([table.targets[i], *map(int, table.presence[i])])
    return presence_path


def read_csv(path, variable=""):
    """Read a TermTable pair written by :func:`write_csv`."""
    path = str(path)
    presence_path = (
        path[: -len(".csv")] + ".presence.csv" if path.endswith(".csv")
        else path + ".presence.csv"
    )
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    with open(presence_path, newline="", encoding="utf-8") as fh:
        prows = list(csv.reader(fh))
    columns = tuple(rows[0][1:])
    targets = tuple(r[0] for r in rows[1:])
    values = np.array([[float(c) for c in r[1:]] for r in rows[1:]])
    presence = np.array([[int(c) for c in r[1:]] for r in prows[1:]])
    if values.size == 0:
        values = values.reshape(0, len(columns))
        presence = presence.reshape(0, len(columns))
    return TermTable(
        columns=columns,
        values=values,
        presence=presence,
        targets=targets,
        variable=variable,
    )
