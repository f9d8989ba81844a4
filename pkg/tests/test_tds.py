"""Reference simulator: order of accuracy, invariance, comparisons."""

import numpy as np
import pytest

from cartswing.caseio import Disturbance
from cartswing.errors import ComparisonError, NumericalError
from cartswing.steady import disturbed_grid, post_disturbance_state
from cartswing.swing import assemble_system
from cartswing.tds import (GridDynamics, TdsConfig, admittance_equivalent_loads,
                           integrate_fixed, rk4_simulate, rk4_step,
                           simulate_until_invariant)
from cartswing.trajectory import compare_trajectories


def _dyn_for(grid9, events):
    _, model, _, _, op = grid9
    m2, _, v2 = disturbed_grid(model, events)
    init = post_disturbance_state(op, m2, v2)
    system = assemble_system(m2, v2, init)
    z0 = np.concatenate([init.delta, init.omega, init.wtilde()])
    return m2, init, GridDynamics(m2, v2, system), z0


def test_equilibrium_stays_constant(grid9):
    m2, init, dyn, z0 = _dyn_for(grid9, [])
    traj = rk4_simulate(z0, dyn, TdsConfig(dt=0.01, t_end=2.0), 0.0)
    assert np.max(np.abs(traj.delta - traj.delta[0])) <= 1e-10
    assert np.max(np.abs(traj.omega)) <= 1e-10


def test_fourth_order_convergence_on_linear_problem():
    """Global error against the exact exponential scales as dt^4."""
    lam = -1.3

    def f(t, z):
        return lam * z

    exact = np.exp(lam * 1.0)
    errs = []
    for dt in (0.1, 0.05, 0.025):
        _, zs = integrate_fixed(f, np.array([1.0]), 0.0, 1.0, dt)
        errs.append(abs(zs[-1][0] - exact))
    r1 = errs[0] / errs[1]
    r2 = errs[1] / errs[2]
    assert 13.0 <= r1 <= 19.0
    assert 13.0 <= r2 <= 19.0


def test_rk4_step_matches_taylor_for_polynomial():
    # dz/dt = 3 t^2 integrates exactly (degree <= 4 is exact for the scheme)
    f = lambda t, z: np.array([3 * t * t])
    z1 = rk4_step(f, 0.0, np.array([0.0]), 0.5)
    assert z1[0] == pytest.approx(0.125, abs=1e-15)


def test_load_loss_stays_synchronous(grid9):
    m2, init, dyn, z0 = _dyn_for(grid9, [Disturbance("load-scale", 1.0,
                                                     bus="8", factor=0.9)])
    traj = rk4_simulate(z0, dyn, TdsConfig(dt=0.01, t_end=10.0), 1.0)
    m_vec = np.array([m.m for m in m2.machines])
    rel = traj.delta - (traj.delta @ m_vec)[:, None] / m_vec.sum()
    assert np.max(np.abs(rel - rel[0])) < 0.5  # no machine separates


def test_step_refinement_invariance(grid9):
    m2, init, dyn, z0 = _dyn_for(grid9, [Disturbance("load-scale", 1.0,
                                                     bus="8", factor=0.9)])
    traj, dt_used, change = simulate_until_invariant(
        z0, dyn, TdsConfig(dt=0.02, t_end=3.0, invariance_tol=1e-6), 1.0)
    assert change <= 1e-6
    assert dt_used <= 0.02


def test_frozen_b_variant_close_but_distinct(grid9):
    m2, init, dyn, z0 = _dyn_for(grid9, [Disturbance("load-scale", 1.0,
                                                     bus="8", factor=0.9)])
    a = rk4_simulate(z0, dyn, TdsConfig(dt=0.005, t_end=3.0), 1.0)
    b = rk4_simulate(z0, dyn, TdsConfig(dt=0.005, t_end=3.0, freeze_b=True), 1.0)
    d = np.max(np.abs(a.delta - b.delta))
    assert 0 < d < 5e-3  # first-order-in-b difference stays small at this dt


def test_overflowing_integration_raises():
    """A genuinely exploding right-hand side aborts with the partial-state
    error instead of emitting non-finite samples."""

    class Runaway:
        a = np.array([[10.0]])

        def b_vec(self, z):
            return np.zeros(1)

    with pytest.raises(NumericalError, match="overflow"):
        rk4_simulate(np.array([1.0]), Runaway(), TdsConfig(dt=0.1, t_end=200.0))


def test_admittance_equivalent_loads_preserve_power():
    from cartswing.network import LoadSet
    v = 0.97 * np.exp(0.12j)
    loads = LoadSet(constant_ci=(("b", 0.1 + 0.02j, 0.5 - 0.2j),),
                    remaining=(("b", 0.3 + 0.1j, -0.2 + 0.05j),))
    flat = admittance_equivalent_loads(loads, {"b": v})
    assert flat.remaining == ()
    s_orig = 0j
    for _, i0, y0 in loads.constant_ci + loads.remaining:
        s_orig += v * np.conj(i0 + y0 * v)
    s_new = 0j
    for _, i0, y0 in flat.constant_ci:
        assert i0 == 0
        s_new += v * np.conj(y0 * v)
    assert s_new == pytest.approx(s_orig, rel=1e-12)


def test_compare_identical_zero(grid9):
    m2, init, dyn, z0 = _dyn_for(grid9, [Disturbance("load-scale", 1.0,
                                                     bus="8", factor=0.9)])
    traj = rk4_simulate(z0, dyn, TdsConfig(dt=0.05, t_end=2.0), 1.0)
    rep = compare_trajectories(traj, traj)
    assert rep.delta.max_abs == 0.0
    assert rep.omega.mean_abs == 0.0


def test_compare_disjoint_ranges_rejected(grid9):
    m2, init, dyn, z0 = _dyn_for(grid9, [Disturbance("load-scale", 1.0,
                                                     bus="8", factor=0.9)])
    a = rk4_simulate(z0, dyn, TdsConfig(dt=0.05, t_end=2.0), 1.0)
    b = rk4_simulate(z0, dyn, TdsConfig(dt=0.05, t_end=5.0), 4.0)
    with pytest.raises(ComparisonError, match="disjoint"):
        compare_trajectories(a, b)
