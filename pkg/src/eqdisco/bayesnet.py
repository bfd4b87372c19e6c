"""Joint distribution over equation terms via a Bayesian network.

Each term variable is hybrid: a Bernoulli presence indicator whose
conditional distribution depends on the parents' presence configuration,
plus a Gaussian coefficient-value model per configuration fitted only on
rows where the term is present (so structural zeros never contaminate the
value statistics). Structure is learned on the presence indicators alone
by greedy hill climbing under a BIC score. Sampling is ancestral in
topological order, conditioned on per-equation anchor terms fixed present
with coefficient 1, and decoded back into equation systems.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .ensemble import TermTable
from .errors import (
    ContractError,
    InsufficientDataError,
    SamplingError,
    ValidationError,
)
from .tokens import Equation, parse_term

VAR_FLOOR = 1e-12


def node_name(key, variable):
    """Pooled-table node name: term key suffixed by its equation's variable."""
    return f"{key}_{variable}"


def split_node(name):
    """Inverse of :func:`node_name`."""
    key, _, variable = name.rpartition("_")
    return key, variable


def pool(tables):
    """Merge per-variable TermTables into one pooled table.

    ``tables`` maps state-variable name to its TermTable. Row blocks are
    paired positionally (row i of each table joins row i); tables must
    have equal row counts — the CLI guarantees this by pairing each run's
    front members before pooling.
    """
    variables = sorted(tables)
    if not variables:
        raise ValidationError("no tables to pool")
    n_rows = {tables[v].n_rows for v in variables}
    if len(n_rows) != 1:
        raise ValidationError(
            f"pooled tables need equal row counts, got {sorted(n_rows)}"
        )
    (rows,) = n_rows
    columns = []
    values = []
    presence = []
    for v in variables:
        t = tables[v]
        columns.extend(node_name(k, v) for k in t.columns)
        values.append(t.values)
        presence.append(t.presence)
    targets = tuple(
        "|".join(node_name(tables[v].targets[i], v) for v in variables)
        for i in range(rows)
    )
    return TermTable(
        columns=tuple(columns),
        values=np.hstack(values) if values else np.zeros((0, 0)),
        presence=np.hstack(presence) if presence else np.zeros((0, 0), dtype=int),
        targets=targets,
        variable="|".join(variables),
    )


def pair_runs(ensembles):
    """Cartesian-pair front members run by run across variables.

    Returns per-variable TermTables with aligned rows: for each run index,
    every combination of one equation per variable becomes one joint row.
    """
    from .ensemble import EquationEnsemble, tabulate

    variables = sorted(ensembles)
    n_runs = {len(ensembles[v].runs) for v in variables}
    if len(n_runs) != 1:
        raise ValidationError("ensembles have differing run counts")
    paired = {v: [] for v in variables}
    for r in range(n_runs.pop()):
        fronts = {v: ensembles[v].runs[r] for v in variables}
        if any(len(fronts[v]) == 0 for v in variables):
            continue
        index = [0] * len(variables)
        sizes = [len(fronts[v]) for v in variables]
        while True:
            for k, v in enumerate(variables):
                paired[v].append(fronts[v][index[k]])
            for k in reversed(range(len(variables))):
                index[k] += 1
                if index[k] < sizes[k]:
                    break
                index[k] = 0
            else:
                break
    tables = {}
    for v in variables:
        ens = EquationEnsemble(variable=v, runs=(tuple(paired[v]),))
        tables[v] = tabulate(ens)
    return tables


def _bernoulli_ll(successes, total):
    if total == 0 or successes in (0, total):
        return 0.0
    p = successes / total
    return successes * math.log(p) + (total - successes) * math.log(1 - p)


def _node_score(presence, j, parents, n_rows):
    """BIC contribution of node j given a parent index tuple."""
    if parents:
        # encode each row's parent-presence configuration as an integer
        codes = presence[:, list(parents)] @ (1 << np.arange(len(parents)))
        totals = np.bincount(codes, minlength=1 << len(parents))
        successes = np.bincount(
            codes, weights=presence[:, j], minlength=1 << len(parents)
        )
        ll = sum(
            _bernoulli_ll(int(s), int(t))
            for s, t in zip(successes, totals)
            if t
        )
    else:
        ll = _bernoulli_ll(int(presence[:, j].sum()), n_rows)
    penalty = 0.5 * (2 ** len(parents)) * math.log(n_rows)
    return ll - penalty


def _has_path(parents, src, dst):
    """True if dst is reachable from src following child links."""
    children = {}
    for child, ps in parents.items():
        for p in ps:
            children.setdefault(p, []).append(child)
    stack = [src]
    seen = set()
    while stack:
        node = stack.pop()
        if node == dst:
            return True
        if node in seen:
            continue
        seen.add(node)
        stack.extend(children.get(node, []))
    return False


def learn_structure(table, max_parents=3):
    """Greedy hill climbing (add/remove/reverse) on presence indicators.

    Returns a dag as a mapping node name -> sorted tuple of parent names.
    Deterministic: candidate moves are tried in lexicographic node order
    and only a strictly better BIC total is accepted.
    """
    n_rows = table.n_rows
    nodes = list(table.columns)
    if n_rows < 10:
        raise InsufficientDataError(
            f"structure learning needs at least 10 rows, got {n_rows}"
        )
    if len(nodes) < 2:
        raise InsufficientDataError("structure learning needs at least 2 columns")
    presence = np.asarray(table.presence, dtype=int)
    idx = {name: j for j, name in enumerate(nodes)}
    parents = {name: () for name in nodes}
    score = {
        name: _node_score(presence, idx[name], (), n_rows) for name in nodes
    }

    score_cache = {}

    def rescored(name, new_parents):
        key = (name, new_parents)
        hit = score_cache.get(key)
        if hit is None:
            hit = _node_score(
                presence, idx[name], tuple(idx[p] for p in new_parents), n_rows
            )
            score_cache[key] = hit
        return hit

    while True:
        best = None  # (delta, description)
        for a in nodes:
            for b in nodes:
                if a == b:
                    continue
                if a in parents[b]:
                    # remove a -> b
                    np_b = tuple(p for p in parents[b] if p != a)
                    delta = rescored(b, np_b) - score[b]
                    cand = ("remove", a, b, np_b, None)
                    if best is None or delta > best[0] + 1e-12:
                        if delta > 1e-9:
                            best = (delta, *cand)
                    # reverse a -> b  (becomes b -> a)
                    if len(parents[a]) < max_parents:
                        trial = {
                            n: tuple(p for p in ps if not (n == b and p == a))
                            for n, ps in parents.items()
                        }
                        if not _has_path(trial, a, b):
                            np_a = tuple(sorted((*parents[a], b)))
                            d = (
                                rescored(b, np_b)
                                - score[b]
                                + rescored(a, np_a)
                                - score[a]
                            )
                            cand = ("reverse", a, b, np_b, np_a)
                            if d > 1e-9 and (best is None or d > best[0] + 1e-12):
                                best = (d, *cand)
                else:
                    # add a -> b
                    if len(parents[b]) >= max_parents:
                        continue
                    if _has_path(parents, b, a):
                        continue
                    np_b = tuple(sorted((*parents[b], a)))
                    delta = rescored(b, np_b) - score[b]
                    if delta > 1e-9 and (best is None or delta > best[0] + 1e-12):
                        best = (delta, "add", a, b, np_b, None)
        if best is None:
            break
        _, move, a, b, np_b, np_a = best
        parents[b] = np_b
        score[b] = rescored(b, np_b)
        if move == "reverse":
            parents[a] = np_a
            score[a] = rescored(a, np_a)
    return {name: tuple(sorted(ps)) for name, ps in parents.items()}


def topological_order(parents):
    """Kahn's algorithm with sorted tie-breaking; raises on cycles."""
    remaining = {n: set(ps) for n, ps in parents.items()}
    order = []
    while remaining:
        ready = sorted(n for n, ps in remaining.items() if not ps)
        if not ready:
            raise ValidationError("graph contains a cycle")
        for n in ready:
            order.append(n)
            del remaining[n]
        for ps in remaining.values():
            ps.difference_update(ready)
    return order


@dataclass(frozen=True)
class NodeModel:
    """Presence probability and value Gaussian per parent configuration.

    ``configs`` maps a parent-presence tuple to (p, mean, var); ``marginal``
    is the unconditional fallback used for configurations never observed.
    """

    parents: tuple[str, ...]
    configs: dict
    marginal: tuple[float, float, float]

    def lookup(self, config):
        return self.configs.get(config, self.marginal)


@dataclass(frozen=True)
class BayesianNetwork:
    nodes: tuple[str, ...]
    parents: dict
    models: dict

    def __post_init__(self):
        topological_order(self.parents)


def _value_stats(values):
    if len(values) == 0:
        return 0.0, VAR_FLOOR
    mean = float(np.mean(values))
    var = float(np.var(values)) if len(values) > 1 else 0.0
    return mean, max(var, VAR_FLOOR)


def fit_parameters(dag, table):
    """Maximum-likelihood parameters for every node of ``dag``."""
    presence = np.asarray(table.presence, dtype=int)
    values = np.asarray(table.values, dtype=float)
    idx = {name: j for j, name in enumerate(table.columns)}
    models = {}
    for name in table.columns:
        j = idx[name]
        parents = dag.get(name, ())
        pj = presence[:, j]
        present_vals = values[pj == 1, j]
        m_mean, m_var = _value_stats(present_vals)
        marginal = (float(pj.mean()), m_mean, m_var)
        configs = {}
        if parents:
            pcols = presence[:, [idx[p] for p in parents]]
            for c in sorted({tuple(row) for row in pcols}):
                mask = np.all(pcols == np.array(c), axis=1)
                p = float(pj[mask].mean())
                vals = values[mask & (pj == 1), j]
                if len(vals):
                    mean, var = _value_stats(vals)
                else:
                    mean, var = m_mean, m_var
                configs[c] = (p, mean, var)
        models[name] = NodeModel(
            parents=tuple(parents), configs=configs, marginal=marginal
        )
    return BayesianNetwork(
        nodes=tuple(table.columns), parents=dict(dag), models=models
    )


@dataclass(frozen=True)
class SampledSystem:
    equations: dict
    index: int
    anchors: dict

    @property
    def variables(self):
        return tuple(sorted(self.equations))


def _decode_sample(present, value, anchors):
    """Turn sampled node states into one Equation per state variable."""
    per_var = {v: [] for v in anchors}
    for name, flag in present.items():
        if not flag:
            continue
        key, variable = split_node(name)
        if variable not in per_var:
            continue
        per_var[variable].append((key, value[name]))
    equations = {}
    for variable, anchor_key in anchors.items():
        terms = []
        target_index = None
        for key, coeff in sorted(per_var[variable]):
            if key == anchor_key:
                target_index = len(terms)
                terms.append(parse_term(key, 1.0))
            else:
                terms.append(parse_term(key, float(coeff)))
        if target_index is None or len(terms) < 2:
            return None
        try:
            equations[variable] = Equation(tuple(terms), target_index)
        except Exception:
            return None
    return equations


def sample_systems(bn, anchors, n, rng=None):
    """Ancestral sampling conditioned on each anchor present with value 1.

    Samples that decode into an invalid equation (for instance when every
    non-anchor term comes out absent) are rejected; the total attempt
    budget is 100*n, after which a sampling error reports diagnostics.
    """
    if n < 1:
        raise ValidationError("sample count must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    anchor_nodes = {}
    for variable, key in anchors.items():
        node = node_name(key, variable)
        if node not in bn.models:
            raise ValidationError(f"anchor node {node!r} is not in the network")
        anchor_nodes[node] = variable
    order = topological_order(bn.parents)
    samples = []
    attempts = 0
    budget = 100 * n
    rejected = 0
    while len(samples) < n:
        if attempts >= budget:
            raise SamplingError(
                f"rejection budget {budget} exhausted after {rejected} "
                f"rejections; the network may concentrate on degenerate "
                f"equations"
            )
        attempts += 1
        present = {}
        value = {}
        for name in order:
            model = bn.models[name]
            if name in anchor_nodes:
                present[name] = 1
                value[name] = 1.0
                continue
            config = tuple(present[p] for p in model.parents)
            p, mean, var = model.lookup(config)
            flag = int(rng.random() < p)
            present[name] = flag
            value[name] = (
                mean + math.sqrt(var) * rng.standard_normal() if flag else 0.0
            )
        equations = _decode_sample(present, value, anchors)
        if equations is None:
            rejected += 1
            continue
        samples.append(
            SampledSystem(
                equations=equations, index=len(samples), anchors=dict(anchors)
            )
        )
    return samples


def summarize(samples):
    """Per-term mean, 95% interval (mean +/- 1.96*sd), and presence rate.

    Returns {variable: {term key: {mean, half_width, presence, count}}}.
    Terms never present are reported with presence 0 and no interval.
    """
    if len(samples) < 2:
        raise ValidationError("summaries need at least 2 samples")
    n = len(samples)
    variables = sorted({v for s in samples for v in s.equations})
    out = {}
    for variable in variables:
        per_term = {}
        for s in samples:
            eq = s.equations.get(variable)
            if eq is None:
                continue
            for t in eq.terms:
                per_term.setdefault(t.key, []).append(t.coefficient)
        stats = {}
        for key in sorted(per_term):
            vals = np.asarray(per_term[key])
            mean = float(vals.mean())
            sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            stats[key] = {
                "mean": mean,
                "half_width": 1.96 * sd,
                "presence": len(vals) / n,
                "count": len(vals),
            }
        out[variable] = stats
    return out


def _support_rows(table):
    """Map exact presence support -> row indices of a TermTable."""
    rows = {}
    for i in range(table.n_rows):
        support = frozenset(
            key for j, key in enumerate(table.columns) if table.presence[i, j]
        )
        rows.setdefault(support, []).append(i)
    return rows


def _coeff_stats(vals):
    vals = np.asarray(vals, dtype=float)
    sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return {"mean": float(vals.mean()), "half_width": 1.96 * sd}


def extract_bases(samples, tables=None):
    """Group samples by the exact support of each equation.

    A "base" is a recurring sub-process: the same retained term set across
    many sampled equations. For each variable, supports are listed by
    frequency with conditional coefficient statistics (mean and
    1.96*sd half-width).

    When ``tables`` (variable -> TermTable of the source ensemble) is
    given, a base's coefficients are the conditional statistics over the
    ensemble equations with exactly that support — the network decides
    which structures are plausible, the ensemble fits report their values.
    Supports never seen in the ensemble fall back to the sampled values.
    """
    variables = sorted({v for s in samples for v in s.equations})
    out = {}
    n = len(samples)
    for variable in variables:
        table = (tables or {}).get(variable)
        by_support = _support_rows(table) if table is not None else {}
        groups = {}
        for s in samples:
            eq = s.equations.get(variable)
            if eq is None:
                continue
            support = tuple(sorted(t.key for t in eq.terms))
            groups.setdefault(support, []).append(eq)
        bases = []
        for support, eqs in sorted(
            groups.items(), key=lambda kv: (-len(kv[1]), kv[0])
        ):
            rows = by_support.get(frozenset(support))
            if rows:
                source = "ensemble"
                coeffs = {
                    key: _coeff_stats(
                        table.values[rows, table.columns.index(key)]
                    )
                    for key in support
                }
            else:
                source = "sampled"
                coeffs = {
                    key: _coeff_stats(
                        [
                            t.coefficient
                            for eq in eqs
                            for t in eq.terms
                            if t.key == key
                        ]
                    )
                    for key in support
                }
            bases.append(
                {
                    "support": list(support),
                    "count": len(eqs),
                    "rate": len(eqs) / n,
                    "source": source,
                    "coefficients": coeffs,
                }
            )
        out[variable] = bases
    return out


def format_summary(summary, anchors=None):
    """Render a summary in "value +/- half-width" per-term text form."""
    lines = []
    for variable in sorted(summary):
        parts = []
        for key, s in summary[variable].items():
            parts.append(
                f"({s['mean']:.4g} ± {s['half_width']:.2g})*{key}"
                f" [presence {s['presence']:.0%}]"
            )
        anchor = anchors.get(variable, "?") if anchors else "?"
        lines.append(f"{variable}: {anchor} balanced by " + " + ".join(parts))
    return "\n".join(lines)


def to_json(bn):
    """Serializable {nodes, edges, parameters} description."""
    edges = sorted(
        (p, child) for child, ps in bn.parents.items() for p in ps
    )
    params = {}
    for name in bn.nodes:
        m = bn.models[name]
        params[name] = {
            "parents": list(m.parents),
            "marginal": {
                "p": m.marginal[0],
                "mean": m.marginal[1],
                "var": m.marginal[2],
            },
            "configs": [
                {
                    "config": list(c),
                    "p": v[0],
                    "mean": v[1],
                    "var": v[2],
                }
                for c, v in sorted(m.configs.items())
            ],
        }
    return {"nodes": list(bn.nodes), "edges": [list(e) for e in edges],
            "parameters": params}


def from_json(obj):
    parents = {n: () for n in obj["nodes"]}
    for p, child in obj["edges"]:
        parents[child] = tuple(sorted((*parents[child], p)))
    models = {}
    for name, spec in obj["parameters"].items():
        configs = {
            tuple(c["config"]): (c["p"], c["mean"], c["var"])
            for c in spec["configs"]
        }
        marginal = (
            spec["marginal"]["p"],
            spec["marginal"]["mean"],
            spec["marginal"]["var"],
        )
        models[name] = NodeModel(
            parents=tuple(spec["parents"]), configs=configs, marginal=marginal
        )
    return BayesianNetwork(
        nodes=tuple(obj["nodes"]), parents=parents, models=models
    )


def to_dot(bn):
    """GraphViz rendering of the learned structure."""
    lines = ["digraph terms {", "  rankdir=LR;"]
    for name in bn.nodes:
        lines.append(f'  "{name}";')
    for p, child in sorted(
        (p, c) for c, ps in bn.parents.items() for p in ps
    ):
        lines.append(f'  "{p}" -> "{child}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
