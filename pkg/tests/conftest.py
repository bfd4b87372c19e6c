"""Shared fixtures: repo paths and synthetic Lotka-Volterra data."""

import csv
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from eqdisco.dataio import DataSet, differentiate

REPO = Path(__file__).resolve().parents[1]

# Reference coefficients of the ideal hare-lynx system:
# du/dt = 0.55 u - 0.028 uv ; dv/dt = -0.84 v + 0.026 uv
LV_PARAMS = dict(alpha=0.55, beta=0.028, gamma=0.84, delta=0.026)
LV_REF = {"u": {"u": 0.55, "u*v": -0.028}, "v": {"v": -0.84, "u*v": 0.026}}


def lv_rhs(t, y):
    u, v = y
    return [
        LV_PARAMS["alpha"] * u - LV_PARAMS["beta"] * u * v,
        -LV_PARAMS["gamma"] * v + LV_PARAMS["delta"] * u * v,
    ]


def make_lv_grid(n_points=2001, t_end=20.0, y0=(30.0, 4.0)):
    t = np.linspace(0.0, t_end, n_points)
    sol = solve_ivp(
        lv_rhs, (t[0], t[-1]), list(y0), t_eval=t, rtol=1e-10, atol=1e-12
    )
    return t, sol.y[0], sol.y[1]


@pytest.fixture(scope="session")
def lv_data():
    """Noise-free synthetic LV DataSet with central-difference derivatives."""
    t, u, v = make_lv_grid()
    data = DataSet(grid=t, channels={"u": u, "v": v}, time_name="t")
    for var in ("u", "v"):
        data = differentiate(data, var, 1, method="central")
    return data


@pytest.fixture(scope="session")
def lv_csv(tmp_path_factory):
    """The same synthetic data written as a CSV for CLI-level tests."""
    t, u, v = make_lv_grid()
    path = tmp_path_factory.mktemp("lvdata") / "lv.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "u", "v"])
        for row in zip(t, u, v):
            w.writerow([repr(float(x)) for x in row])
    return path


@pytest.fixture(scope="session")
def hudson_csv():
    return REPO / "data" / "hudson-bay-lynx-hare.csv"


@pytest.fixture(scope="session")
def hudson_cfg():
    return REPO / "configs" / "hudson-case-a.cfg"
