"""Bayesian network learning, sampling, and base extraction.

Sanity simulations (independent columns, duplicated columns) follow
acceptance criterion 7; this file also covers structural helpers.
"""

import numpy as np
import pytest

from eqdisco.bayesnet import (
    BayesianNetwork,
    extract_bases,
    fit_parameters,
    from_json,
    learn_structure,
    node_name,
    pair_runs,
    pool,
    sample_systems,
    split_node,
    summarize,
    to_dot,
    to_json,
    topological_order,
)
from eqdisco.ensemble import EquationEnsemble, TermTable, tabulate
from eqdisco.errors import (
    InsufficientDataError,
    SamplingError,
    ValidationError,
)
from eqdisco.tokens import make_equation, parse_term


def make_table(presence, columns, targets=None, values=None, variable="u"):
    presence = np.asarray(presence, dtype=int)
    if values is None:
        rng = np.random.default_rng(0)
        values = presence * rng.normal(1.0, 0.1, size=presence.shape)
    targets = targets or tuple([columns[0]] * presence.shape[0])
    return TermTable(
        columns=tuple(columns),
        values=np.asarray(values, dtype=float),
        presence=presence,
        targets=tuple(targets),
        variable=variable,
    )


def test_node_name_round_trip():
    assert split_node(node_name("u*v", "u")) == ("u*v", "u")
    assert split_node(node_name("d1_v", "v")) == ("d1_v", "v")


def test_independent_columns_give_empty_graph():
    rng = np.random.default_rng(0)
    presence = np.column_stack(
        [np.ones(500, dtype=int)]
        + [rng.integers(0, 2, size=500) for _ in range(4)]
    )
    table = make_table(presence, ("d1_u", "a", "b", "c", "d"))
    dag = learn_structure(table)
    assert all(parents == () for parents in dag.values())


def test_duplicated_column_gets_an_edge():
    rng = np.random.default_rng(1)
    col = rng.integers(0, 2, size=500)
    presence = np.column_stack(
        [np.ones(500, dtype=int), col, col, rng.integers(0, 2, size=500)]
    )
    table = make_table(presence, ("d1_u", "a", "b", "c"))
    dag = learn_structure(table)
    assert ("a" in dag["b"]) or ("b" in dag["a"])


def test_learn_structure_needs_data():
    table = make_table(np.ones((3, 2), dtype=int), ("d1_u", "u"))
    with pytest.raises(InsufficientDataError):
        learn_structure(table)


def test_topological_order_detects_cycles():
    order = topological_order({"a": ("b",), "b": (), "c": ("a",)})
    assert order.index("b") < order.index("a") < order.index("c")
    with pytest.raises(ValidationError):
        topological_order({"a": ("b",), "b": ("a",)})


def test_network_rejects_cycles():
    with pytest.raises(ValidationError):
        BayesianNetwork(
            nodes=("a", "b"),
            parents={"a": ("b",), "b": ("a",)},
            models={},
        )


def fitted_network():
    """Small pooled-style table with a deterministic co-occurrence."""
    rng = np.random.default_rng(2)
    n = 400
    a = rng.integers(0, 2, size=n)
    presence = np.column_stack([np.ones(n, dtype=int), a, a ^ 1])
    values = presence * np.column_stack(
        [np.ones(n), rng.normal(0.5, 0.01, n), rng.normal(-0.8, 0.01, n)]
    )
    table = make_table(
        presence,
        ("d1_u_u", "u_u", "u*v_u"),
        targets=("d1_u_u",) * n,
        values=values,
    )
    dag = learn_structure(table)
    return fit_parameters(dag, table), table


def test_sampling_is_reproducible_and_anchored():
    bn, _ = fitted_network()
    anchors = {"u": "d1_u"}
    s1 = sample_systems(bn, anchors, 20, np.random.default_rng(0))
    s2 = sample_systems(bn, anchors, 20, np.random.default_rng(0))
    for a, b in zip(s1, s2):
        assert a.equations["u"].coefficients() == b.equations["u"].coefficients()
    for s in s1:
        assert s.equations["u"].coefficients()["d1_u"] == 1.0
        assert s.equations["u"].target.key == "d1_u"


def test_sampling_rejects_unknown_anchor():
    bn, _ = fitted_network()
    with pytest.raises(ValidationError):
        sample_systems(bn, {"w": "d1_w"}, 5, np.random.default_rng(0))


def test_sampling_budget_error():
    # a network whose only non-anchor term is never present can never
    # decode a two-term equation, exhausting the rejection budget
    n = 50
    presence = np.column_stack(
        [np.ones(n, dtype=int), np.zeros(n, dtype=int)]
    )
    table = make_table(
        presence,
        ("d1_u_u", "u_u"),
        targets=("d1_u_u",) * n,
        values=presence.astype(float),
    )
    dag = learn_structure(table)
    bn = fit_parameters(dag, table)
    with pytest.raises(SamplingError):
        sample_systems(bn, {"u": "d1_u"}, 5, np.random.default_rng(0))


def test_summarize_and_extract_bases():
    bn, _ = fitted_network()
    samples = sample_systems(bn, {"u": "d1_u"}, 40, np.random.default_rng(3))
    summary = summarize(samples)
    assert "d1_u" in summary["u"]
    assert summary["u"]["d1_u"]["presence"] == 1.0
    bases = extract_bases(samples)
    assert bases["u"]
    counts = [b["count"] for b in bases["u"]]
    assert counts == sorted(counts, reverse=True)
    assert abs(sum(b["rate"] for b in bases["u"]) - 1.0) < 1e-9


def test_extract_bases_grounds_coefficients_in_table():
    bn, table = fitted_network()
    # strip the pooled suffix so supports match equations sampled for "u"
    plain = TermTable(
        columns=tuple(k.rsplit("_", 1)[0] for k in table.columns),
        values=table.values,
        presence=table.presence,
        targets=("d1_u",) * table.n_rows,
        variable="u",
    )
    samples = sample_systems(bn, {"u": "d1_u"}, 40, np.random.default_rng(3))
    bases = extract_bases(samples, {"u": plain})
    grounded = [b for b in bases["u"] if b["source"] == "ensemble"]
    assert grounded
    for b in grounded:
        if "u" in b["coefficients"]:
            assert b["coefficients"]["u"]["mean"] == pytest.approx(
                0.5, abs=0.02
            )


def test_json_round_trip_and_dot():
    bn, _ = fitted_network()
    back = from_json(to_json(bn))
    assert back.nodes == bn.nodes
    assert back.parents == bn.parents
    s1 = sample_systems(bn, {"u": "d1_u"}, 10, np.random.default_rng(5))
    s2 = sample_systems(back, {"u": "d1_u"}, 10, np.random.default_rng(5))
    for a, b in zip(s1, s2):
        assert a.equations["u"].coefficients() == b.equations["u"].coefficients()
    dot = to_dot(bn)
    assert dot.startswith("digraph") and "d1_u_u" in dot


def eq(coeffs, target):
    terms = [parse_term(k, c) for k, c in coeffs.items()]
    return make_equation(terms, target)


def test_pool_and_pair_runs():
    ens_u = EquationEnsemble(
        variable="u",
        runs=(
            (
                eq({"d1_u": 1.0, "u": 0.5}, "d1_u"),
                eq({"d1_u": 1.0, "u*v": -0.02}, "d1_u"),
            ),
        ),
    )
    ens_v = EquationEnsemble(
        variable="v",
        runs=((eq({"d1_v": 1.0, "v": -0.8}, "d1_v"),),),
    )
    tables = pair_runs({"u": ens_u, "v": ens_v})
    # cartesian pairing: 2 u-equations x 1 v-equation = 2 aligned rows
    assert tables["u"].n_rows == tables["v"].n_rows == 2
    pooled = pool(tables)
    assert pooled.n_rows == 2
    assert "u_u" in pooled.columns and "v_v" in pooled.columns
    with pytest.raises(ValidationError):
        pair_runs({"u": ens_u, "v": EquationEnsemble(variable="v", runs=())})
