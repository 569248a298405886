import numpy as np
import pytest
from scipy.optimize import fsolve

from rtbalance import netmodel
from rtbalance.powerflow import PowerFlowOptions, make_ybus, solve_power_flow

from conftest import toy_case


def two_bus(r=0.02, x=0.06, b=0.0):
    return netmodel.load_case({"base_mva": 100, "slack_bus": 1, "buses": [
        {"id": 1, "kind": "generator", "v_min": 0.9, "v_max": 1.1, "v_set": 1.02},
        {"id": 2, "kind": "consumer", "load_p_mw": 80, "load_q_mvar": 30, "v_min": 0.9, "v_max": 1.1}],
        "branches": [{"id": 1, "from": 1, "to": 2, "r_pu": r, "x_pu": x, "b_pu": b}]})


def analytic_two_bus(v1, r, x, p, q):
    """Receiving-end voltage from S* = V2* (V1 - V2) / Z, solved with a generic root finder."""
    z = complex(r, x)

    def f(u):
        v2 = complex(u[0], u[1])
        # power received at bus 2, conjugated
        err = np.conj(v2) * (v1 - v2) / z - complex(p, -q)
        return [err.real, err.imag]

    u = fsolve(f, [1.0, 0.0], xtol=1e-13)
    return complex(u[0], u[1])


def test_two_bus_matches_independent_root_finder():
    case = two_bus()
    sol = solve_power_flow(case, [0.0, -80.0], [0.0, -30.0], PowerFlowOptions(tol=1e-12))
    assert sol.converged
    v2 = analytic_two_bus(1.02, 0.02, 0.06, 0.8, 0.3)
    assert sol.v[1] == pytest.approx(abs(v2), abs=1e-9)
    assert sol.theta[1] == pytest.approx(np.angle(v2), abs=1e-9)
    # slack supplies load plus I^2 R
    i2 = abs((1.02 - v2) / complex(0.02, 0.06)) ** 2
    assert sol.total_loss == pytest.approx(100 * i2 * 0.02, rel=1e-8)
    assert sol.p_inj[0] == pytest.approx(80 + sol.total_loss, rel=1e-10)


def test_injections_sum_to_losses(base_pf):
    assert base_pf.converged
    assert np.sum(base_pf.p_inj) == pytest.approx(base_pf.total_loss, abs=1e-6)
    branch_losses = base_pf.branch_flow_p + base_pf.branch_flow_p_to
    assert np.sum(branch_losses) == pytest.approx(base_pf.total_loss, abs=1e-6)


def test_base_point_values(base_pf, bundled):
    # frozen from an independent full-Newton solve of the bundled data
    case = bundled[0]
    assert base_pf.total_loss == pytest.approx(7.1544, abs=2e-3)
    assert base_pf.p_inj[case.slack_index] == pytest.approx(138.59, abs=0.05)


def test_quadratic_convergence(bundled):
    case, schedule, _, _ = bundled
    gen = np.zeros(case.n_bus)
    for p in schedule:
        if p.side == "generator":
            gen[case.bus_index(p.bus)] += p.p0
    load_p = np.array([b.base_load_p for b in case.buses])
    load_q = np.array([b.base_load_q for b in case.buses])
    sol = solve_power_flow(case, gen - load_p, -load_q, PowerFlowOptions(tol=1e-12))
    h = [m for m in sol.mismatch_history if m > 1e-14]
    assert len(h) >= 4
    ratios = [h[k + 1] / h[k] for k in range(len(h) - 1)]
    assert all(r2 < r1 for r1, r2 in zip(ratios[-3:], ratios[-2:]))
    # the error is roughly squared each step near the solution
    assert h[-1] < 10 * h[-2] ** 2 / 1e-3


def test_pv_bus_holds_voltage(base_pf, bundled):
    case = bundled[0]
    for k, b in enumerate(case.buses):
        if b.kind in ("generator", "mixed"):
            assert base_pf.v[k] == pytest.approx(b.v_set, abs=1e-12)


def test_ybus_symmetric_without_phase_shift(bundled):
    Y = make_ybus(bundled[0])
    np.testing.assert_allclose(Y, Y.T, atol=1e-12)


def test_divergence_is_a_result_not_an_exception():
    case = two_bus()
    sol = solve_power_flow(case, [0.0, -5000.0], [0.0, -3000.0], PowerFlowOptions(max_iter=15))
    assert not sol.converged


def test_lossless_network_has_no_losses():
    case = toy_case(r=0.0)
    sol = solve_power_flow(case, [0.0, 20.0, -50.0], [0.0, 0.0, -10.0], PowerFlowOptions(tol=1e-12))
    assert sol.total_loss == pytest.approx(0.0, abs=1e-9)
    assert sol.p_inj[0] == pytest.approx(30.0, abs=1e-9)
