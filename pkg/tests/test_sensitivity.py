import numpy as np
import pytest

from rtbalance.powerflow import PowerFlowOptions, solve_power_flow
from rtbalance.sensitivity import (build_bprime, build_sensitivities, dc_flow_sensitivities,
                                   flow_sensitivities)

from conftest import toy_case
from oracles import base_injections, fd_loss_and_flow, fd_tap


@pytest.fixture(scope="module")
def fd(bundled):
    case, schedule, _, _ = bundled
    p, q = base_injections(case, schedule)
    return fd_loss_and_flow(case, p, q)


@pytest.fixture(scope="module")
def sens(bundled, base_pf):
    return build_sensitivities(bundled[0], base_pf)


def test_loss_factors_match_finite_differences(sens, fd):
    assert np.max(np.abs(sens.loss_sens - fd[0])) < 5e-3


def test_flow_factors_match_finite_differences(sens, fd):
    assert np.max(np.abs(sens.flow_sens - fd[1])) < 2e-2


def test_tap_sensitivity_matches_finite_differences(bundled, base_pf, sens):
    ref = fd_tap(bundled[0], base_pf)
    scale = np.maximum(1.0, np.abs(ref))
    assert np.max(np.abs(sens.tap_sens - ref) / scale) < 5e-3


def test_slack_column_is_zero(sens, bundled):
    s = bundled[0].slack_index
    assert sens.loss_sens[s] == 0.0
    assert np.all(sens.flow_sens[:, s] == 0.0)


def test_dc_factors_are_the_lossless_limit():
    """On a lossless triangle the AC factors equal the DC ones."""
    case = toy_case(r=0.0)
    pf = solve_power_flow(case, [0.0, 0.0, -1.0], [0.0, 0.0, 0.0], PowerFlowOptions(tol=1e-12))
    ac = flow_sensitivities(case, pf)
    dc = dc_flow_sensitivities(case)
    np.testing.assert_allclose(ac, dc, atol=5e-4)
    # equal-reactance triangle: injection at bus 3 splits 1/3 over 1-2-3, 2/3 direct
    np.testing.assert_allclose(dc[:, 2], [-1 / 3, -1 / 3, -2 / 3], atol=1e-12)


def test_dc_factors_differ_from_ac_on_the_lossy_case(bundled, base_pf, fd):
    """The DC approximation misses the slack loss pickup; AC is the accurate choice here."""
    dc = dc_flow_sensitivities(bundled[0])
    assert np.max(np.abs(dc - fd[1])) > 2e-2


def test_bprime_is_symmetric_positive_definite(bundled):
    B = build_bprime(bundled[0])
    np.testing.assert_allclose(B, B.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(B) > 0)


def test_lossless_loss_factors_vanish():
    case = toy_case(r=0.0)
    pf = solve_power_flow(case, [0.0, 10.0, -40.0], [0.0, 0.0, -5.0], PowerFlowOptions(tol=1e-12))
    sens = build_sensitivities(case, pf)
    assert np.max(np.abs(sens.loss_sens)) < 1e-9


def test_sensitivity_json_has_matrices(sens):
    doc = sens.to_json()
    assert len(doc["flow_sens"]) == 41 and len(doc["flow_sens"][0]) == 30
