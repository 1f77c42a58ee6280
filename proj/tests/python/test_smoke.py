"""Smoke tests for the python bindings: model loading, solver sanity,
reproducible estimation."""

import math
import os

import pytest

mmopt = pytest.importorskip("mmopt")

CONFIG_DIR = os.environ.get("MMOPT_CONFIG_DIR", "configs")

CLOSED_FORM_TEXT = """
[model]
securities = 1
horizon = 1.0
grid_steps = 500
position0 = [2.0]
[terminal_penalty]
form = constant
value = 1.0
[running_penalty]
form = constant
value = 0.0
[temporary_impact]
form = constant
value = 1.0
[inventory_impact]
form = constant
value = 0.0
[block_premium]
form = constant
value = 1.0
[dark_intensity]
form = constant
value = 0.0
[spread]
form = constant
value = 0.0
[repo_rate]
form = constant
value = 0.0
[price]
kind = constant
value = 0.0
"""


def test_model_from_config_file():
    model = mmopt.load_model(os.path.join(CONFIG_DIR, "good.cfg"))
    assert model.securities == 1
    assert model.horizon == 1.0
    report = mmopt.validate(model)
    assert report["ok"]
    assert any(c["assumption"].startswith("B'") for c in report["checks"])


def test_validation_failure_names_the_assumption():
    with pytest.raises(mmopt.ValidationError, match=r"b4'"):
        mmopt.load_model(os.path.join(CONFIG_DIR, "bad-eta.cfg"))


def test_solver_matches_closed_form():
    model = mmopt.load_model_text(CLOSED_FORM_TEXT)
    out = mmopt.solve_v2(model)
    v2_0 = out["v2"][0, 0, 0]
    assert abs(v2_0 - mmopt.closed_form_riccati(1.0, 1.0, 1.0, 0.0)) < 1e-9
    assert out["v2"][-1, 0, 0] == 1.0


def test_bounds_sandwich_solution():
    model = mmopt.load_model(os.path.join(CONFIG_DIR, "good.cfg"))
    sol = mmopt.solve_v2(model)
    env = mmopt.v2_bounds(model, 1.0)
    v = sol["v2"][:, 0, 0]
    assert (env["lower"] - 1e-8 <= v).all()
    assert (v <= env["upper"] + 1e-8).all()


def test_flow_moments_uniform():
    model = mmopt.load_model_text(
        CLOSED_FORM_TEXT
        + "[flow]\nsupport = [-1.0, 1.0]\nshape = uniform\n[flow.mass]\nform = constant\nvalue = 2.0\n"
    )
    mom = mmopt.flow_moments(model, 0.5)
    assert abs(mom["phi"][0]) < 1e-13
    assert abs(mom["psi"][0] - 1.0) < 1e-12
    assert abs(mom["phi2"][0] - 2.0 / 3.0) < 1e-12


def test_value_function_and_estimate_agree():
    model = mmopt.load_model(os.path.join(CONFIG_DIR, "good.cfg"))
    solved = mmopt.solve(model)
    value0 = solved.value(0.0, model.position0)
    est = mmopt.estimate_cost(model, strategy="optimal", paths=4000, seed=11, workers=2)
    assert abs(est["mean"] - value0) <= 4.0 * est["std_error"]
    again = mmopt.estimate_cost(model, strategy="optimal", paths=4000, seed=11, workers=1)
    assert again["mean"] == est["mean"]  # bit-identical across worker counts


def test_expansion_and_oracle_round_trip():
    model = mmopt.load_model(os.path.join(CONFIG_DIR, "factor1d.cfg"))
    v0 = mmopt.approx_value(model, 0, 0.2)
    v2 = mmopt.approx_value(model, 2, 0.2)
    assert math.isfinite(v0) and math.isfinite(v2)
    pde = mmopt.oracle_pde(model, 0.2, nx=201, nt=400)
    assert abs(v2 - pde["v00_extrapolated"]) < 25.0 * abs(v0 - pde["v00_extrapolated"]) + 1e-6
    assert pde["min_value"] >= -1e-10
