import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import fsolve

from conftest import make_path_feeder, make_slot
from eemgrid.acpf import branch_flow_residual, solve_radial_acpf, substation_energy_identity
from eemgrid.exceptions import ConvergenceError, VoltageCollapseError
from eemgrid.scenario import nominal_profile
from eemgrid.subproblem import DualState, LimitsProfile, solve_slot


def scalar_fixed_point(r, x, p, q, v0=1.0):
    P, Q, ell = p, q, 0.0
    for _ in range(200):
        ell_new = (P ** 2 + Q ** 2) / v0
        P, Q = p + r * ell_new, q + x * ell_new
        if abs(ell_new - ell) < 1e-15:
            break
        ell = ell_new
    v1 = v0 - 2 * (r * P + x * Q) + (r * r + x * x) * ell
    return v1, ell, P, Q


def phasor_oracle(r, x, p, q):
    # receiving-end voltage phasor with V0 = 1, load S = p + jq drawn at bus 1
    z = complex(r, x)

    def eqs(u):
        v1 = complex(u[0], u[1])
        s = v1 * np.conj((1.0 - v1) / z)
        return [s.real - p, s.imag - q]

    re, im = fsolve(eqs, [1.0, 0.0], xtol=1e-14)
    v1 = complex(re, im)
    return abs(v1) ** 2, abs((1.0 - v1) / z) ** 2


@pytest.fixture(scope="module")
def two_bus():
    return make_path_feeder(1, r_ohm=0.01, x_ohm=0.01)


def test_no_load_flat(sce56):
    sol = solve_radial_acpf(sce56, np.zeros(56), np.zeros(56))
    assert np.all(sol.v == 1.0)
    assert np.all(sol.ell == 0) and np.all(sol.P == 0) and np.all(sol.Q == 0)
    assert substation_energy_identity(sol, np.zeros(56)) == 0.0


def test_two_bus_matches_scalar_fixed_point(two_bus):
    v1, ell, P, Q = scalar_fixed_point(0.01, 0.01, 0.1, 0.05)
    sol = solve_radial_acpf(two_bus, [0, -0.1], [0, -0.05])
    assert sol.v[1] == pytest.approx(v1, abs=1e-10)
    assert sol.ell[1] == pytest.approx(ell, abs=1e-10)
    assert sol.P[1] == pytest.approx(P, abs=1e-10)
    assert sol.Q[1] == pytest.approx(Q, abs=1e-10)
    assert substation_energy_identity(sol, [0, -0.1]) <= 1e-10


def test_two_bus_matches_phasor_solution(two_bus):
    v1, ell = phasor_oracle(0.01, 0.01, 0.1, 0.05)
    sol = solve_radial_acpf(two_bus, [0, -0.1], [0, -0.05])
    assert sol.v[1] == pytest.approx(v1, abs=1e-10)
    assert sol.ell[1] == pytest.approx(ell, abs=1e-10)


def test_sce56_nominal_residual_and_identity(sce56):
    p_c, q_c, _ = nominal_profile(sce56, 0.4, 0.8)
    p = -p_c
    q = np.asarray(sce56.q_cap_pu) - q_c
    sol = solve_radial_acpf(sce56, p, q)
    assert sol.residual <= 1e-9
    assert branch_flow_residual(sce56, p, q, sol.v, sol.ell, sol.P, sol.Q) <= 1e-9
    assert substation_energy_identity(sol, p) <= 1e-8
    assert np.all(sol.v > 0) and np.all(sol.ell >= 0)


def test_bfm_solution_reproduced_by_sweep(sce56, fig2_slots):
    slot = fig2_slots[0]
    sol = solve_slot(sce56, slot, DualState.zeros(56), LimitsProfile())
    p = sol.setpoints.p_g - slot.p_c
    q = sol.setpoints.q_g + np.asarray(sce56.q_cap_pu) - slot.q_c
    pf = solve_radial_acpf(sce56, p, q)
    for name in ("v_model", "ell", "P", "Q"):
        ref = getattr(pf, "v" if name == "v_model" else name)
        np.testing.assert_allclose(getattr(sol, name)[1:], ref[1:], atol=1e-5)


def test_voltage_collapse():
    tree = make_path_feeder(1, r_ohm=0.5, x_ohm=0.5)
    with pytest.raises((VoltageCollapseError, ConvergenceError)):
        solve_radial_acpf(tree, [0, -5.0], [0, -5.0])


def test_bad_v0(two_bus):
    with pytest.raises(ValueError):
        solve_radial_acpf(two_bus, [0, 0], [0, 0], v0=0.0)


@settings(max_examples=50, deadline=None)
@given(p=st.floats(0.0, 0.5), dp=st.floats(0.001, 0.3), q=st.floats(-0.2, 0.3))
def test_more_load_never_raises_voltage(two_bus, p, dp, q):
    a = solve_radial_acpf(two_bus, [0, -p], [0, -q])
    b = solve_radial_acpf(two_bus, [0, -(p + dp)], [0, -q])
    assert b.v[1] <= a.v[1] + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.3, 0.3), min_size=8, max_size=8),
       st.lists(st.floats(-0.2, 0.2), min_size=8, max_size=8))
def test_conservation_on_path(p, q):
    tree = make_path_feeder(8, r_ohm=0.005, x_ohm=0.01)
    p = np.array([0.0] + p)
    q = np.array([0.0] + q)
    sol = solve_radial_acpf(tree, p, q)
    assert sol.residual <= 1e-10
    assert substation_energy_identity(sol, p) <= 1e-9
