import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shap_ptdf import DataError, analytical_ptdf, run_scenario, solve_dc
from shap_ptdf.powerflow import balance_residual, flows_batch

from reference_ptdf import LINES, TRUE_PTDF

injection = st.floats(0, 500, allow_nan=False)


def flow(net, inj, label):
    return solve_dc(net, inj)[1][net.branch_labels.index(label)]


def test_zero_injection_slack_serves_all_demand(net):
    angles, _ = solve_dc(net, (0.0, 0.0))
    assert angles[net.bus_index(1)] == 0.0
    assert flow(net, (0, 0), "1-4") == pytest.approx(315.0, abs=1e-9)
    assert flow(net, (0, 0), "3-6") == pytest.approx(0.0, abs=1e-9)


def test_conservation_at_100_100(net):
    _, flows = solve_dc(net, (100.0, 100.0))
    assert np.max(np.abs(balance_residual(net, (100, 100), flows))) <= 1e-8


def test_reference_ptdf_entries(net):
    d = analytical_ptdf(net)
    assert d.entry("4-5", 3) == pytest.approx(-0.6152, abs=5e-5)
    assert d.entry("3-6", 2) == 0.0 or abs(d.entry("3-6", 2)) < 1e-14
    assert d.entry("8-2", 2) == pytest.approx(-1.0, abs=5e-5)
    assert list(d.row_labels) == LINES
    assert np.max(np.abs(d.values - np.array(TRUE_PTDF))) <= 5e-5


def test_ptdf_bounded(net):
    assert analytical_ptdf(net).is_bounded()


def test_finite_difference_matches_closed_form(net):
    closed = analytical_ptdf(net).values
    fd = analytical_ptdf(net, method="finite_difference").values
    assert np.max(np.abs(closed - fd)) <= 1e-9


def test_run_scenario_linearity(net):
    d = analytical_ptdf(net).values
    base = run_scenario(net, (0, 0))
    assert base.flows[0] == pytest.approx(315.0)
    s = run_scenario(net, (250, 250))
    assert np.allclose(s.flows, base.flows + d @ [250, 250], atol=1e-8)
    s = run_scenario(net, (15.0, 267.8))
    expected = base.flows[1] - 0.3613 * 15.0 - 0.6152 * 267.8
    assert s.flows[1] == pytest.approx(expected, abs=0.1)


def test_wrong_injection_length(net):
    with pytest.raises(DataError):
        solve_dc(net, (1.0, 2.0, 3.0))
    with pytest.raises(DataError):
        solve_dc(net, (np.nan, 2.0))


def test_batch_matches_single(net, rng):
    P = rng.uniform(0, 500, size=(20, 2))
    batch = flows_batch(net, P)
    for p, row in zip(P, batch):
        assert np.allclose(row, solve_dc(net, p)[1], atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(injection, injection, injection, injection, st.floats(-2, 2), st.floats(-2, 2))
def test_superposition(net, a1, a2, b1, b2, alpha, beta):
    p1, p2 = np.array([a1, a2]), np.array([b1, b2])
    lhs = solve_dc(net, alpha * p1 + beta * p2)[1]
    rhs = (alpha * solve_dc(net, p1)[1] + beta * solve_dc(net, p2)[1]
           + (1 - alpha - beta) * solve_dc(net, (0, 0))[1])
    assert np.max(np.abs(lhs - rhs)) <= 1e-8


@settings(max_examples=200, deadline=None)
@given(injection, injection)
def test_ptdf_consistency(net, p2, p3):
    d = analytical_ptdf(net).values
    delta = solve_dc(net, (p2, p3))[1] - solve_dc(net, (0, 0))[1]
    assert np.max(np.abs(delta - d @ [p2, p3])) <= 1e-8


@settings(max_examples=200, deadline=None)
@given(injection, injection)
def test_conservation(net, p2, p3):
    _, flows = solve_dc(net, (p2, p3))
    assert np.max(np.abs(balance_residual(net, (p2, p3), flows))) <= 1e-8
