"""Drift metrics, boundary search and consistent re-initialization."""

import numpy as np
import pytest

from cartswing.analytic import solve_system
from cartswing.caseio import Disturbance
from cartswing.errors import ProjectionFailure
from cartswing.steady import disturbed_grid, post_disturbance_state
from cartswing.swing import assemble_system
from cartswing.validity import (ValidityConfig, consistent_reinit,
                                epsilon_tracking, first_order_state_error,
                                locate_boundary, projection_norms,
                                solve_monitored)


def _system_for(grid9, events):
    _, model, _, _, op = grid9
    m2, _, v2 = disturbed_grid(model, events)
    init = post_disturbance_state(op, m2, v2)
    return m2, v2, init, assemble_system(m2, v2, init)


def test_projection_norms_zero_at_exact_state(grid9):
    m2, v2, init, system = _system_for(grid9, [])
    dcon, p_t, v_t = projection_norms(init.w(), init.dw(), init.e)
    assert dcon == pytest.approx(0.0, abs=1e-12)


def test_projection_norms_scaled_state():
    e = np.array([1.0, 2.0])
    w = 1.1 * np.array([1.0, 0.0, 0.0, 2.0])     # |w_i| = 1.1 E_i
    u = np.array([0.0, -0.4, 0.3, 0.0])          # u orthogonal to w per machine
    dcon, p_t, v_t = projection_norms(w, u, e)
    assert np.allclose(p_t, [-0.1, -0.1])
    assert np.allclose(v_t, 0.0, atol=1e-12)
    assert dcon == pytest.approx(np.sqrt(2 * 0.1 ** 2))


def test_epsilon_zero_at_reference_and_formula(grid9):
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("load-scale", 1.0, bus="8", factor=0.9)])
    eps = epsilon_tracking(system, init.o0[:, None], init.o0)
    assert eps[0] == 0.0
    drift = np.array([0.01, -0.02, 0.005])
    eps = epsilon_tracking(system, (init.o0 + drift)[:, None], init.o0)
    assert eps[0] == pytest.approx(np.sqrt(2 * np.sum(drift ** 2)) / system.t_norm)


def test_boundary_found_quickly_on_sustained_fault(grid9):
    """The validity region of the uncleared fault ends shortly after the
    disturbance."""
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("fault", 1.0, bus="7", fault_y=-1e4j)])
    sol = solve_system(system, init.z0, v2, 1.0)
    vcfg = ValidityConfig()
    found = locate_boundary(m2, system, sol, vcfg, 1.0 + vcfg.resolution,
                            10.0, init.o0)
    assert found is not None
    tau, trigger, gate, other = found
    assert 1.0 < tau < 2.0


def test_boundary_absent_for_quiescent_state(grid9):
    m2, v2, init, system = _system_for(grid9, [])
    sol = solve_system(system, init.z0, v2, 0.0)
    vcfg = ValidityConfig()
    assert locate_boundary(m2, system, sol, vcfg, vcfg.resolution, 5.0,
                           init.o0) is None


def test_reinit_fixed_point(grid9):
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("load-scale", 1.0, bus="8", factor=0.9)])
    z_out, iters = consistent_reinit(init.z0, system, ValidityConfig())
    assert iters == 0
    assert np.array_equal(z_out, init.z0)


def test_reinit_restores_constraints(grid9, rng):
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("load-scale", 1.0, bus="8", factor=0.9)])
    ni = m2.ni
    z = init.z0.copy()
    z[:2 * ni] *= 1.0 + 0.05 * rng.uniform(0.5, 1.0, size=2 * ni)
    z[2 * ni:4 * ni] += 0.05 * rng.normal(size=2 * ni)
    z_out, iters = consistent_reinit(z, system, ValidityConfig())
    assert iters >= 1
    w, u1 = z_out[:2 * ni], z_out[2 * ni:4 * ni]
    mag = w[:ni] ** 2 + w[ni:] ** 2 - system.e ** 2
    vel = w[:ni] * u1[:ni] + w[ni:] * u1[ni:]
    assert np.max(np.abs(mag)) <= 1e-10
    assert np.max(np.abs(vel)) <= 1e-10


def test_reinit_moves_proportionally_for_small_drift(grid9, rng):
    """A small constraint violation projects back locally."""
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("load-scale", 1.0, bus="8", factor=0.9)])
    ni = m2.ni
    z = init.z0.copy()
    z[:2 * ni] *= 1.0 + 0.002 * rng.uniform(0.5, 1.0, size=2 * ni)
    z[2 * ni:4 * ni] += 0.002 * rng.normal(size=2 * ni)
    z_out, iters = consistent_reinit(z, system, ValidityConfig())
    assert np.max(np.abs(z_out - z)) < 0.02


def test_reinit_nonconvergence_raises(grid9):
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("load-scale", 1.0, bus="8", factor=0.9)])
    z = init.z0.copy()
    z[:2 * m2.ni] *= 3.0
    with pytest.raises(ProjectionFailure):
        consistent_reinit(z, system, ValidityConfig(newton_max_iter=1))


def test_monitored_run_event_bookkeeping(grid9):
    """Strictly increasing event times; zero drift at each new origin."""
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("load-scale", 1.0, bus="8", factor=0.9)])
    run = solve_monitored(m2, v2, system, init, 1.0, 10.0,
                          ValidityConfig(delta_t=0.002))
    assert len(run.events) >= 2
    taus = [e.tau for e in run.events]
    assert all(b > a for a, b in zip(taus, taus[1:]))
    for e in run.events:
        assert e.residual_g_after <= 1e-10
        assert e.residual_g_before > e.residual_g_after or e.newton_iterations == 0
        # the projected state sits on the constraint manifold: O1, O2 = 0
        # (the velocity component of the metric is the square root of the
        # g-space residual, hence the 1e-5 scale for g <= 1e-10)
        ni = m2.ni
        dcon, p_t, v_t = projection_norms(e.post_state[:2 * ni],
                                          e.post_state[2 * ni:4 * ni],
                                          run.segments[0].system.e)
        assert dcon <= 5e-5
        assert np.max(np.abs(p_t)) <= 1e-9
    for seg in run.segments[1:]:
        # each re-fit reproduces its projected origin within the fit error
        z0 = (seg.solution.phi @ seg.solution.spectrum.basis_functions(0.0)[0]
              + seg.solution.offset_vector())
        dcon, p_t, v_t = projection_norms(z0[:2 * m2.ni],
                                          z0[2 * m2.ni:4 * m2.ni],
                                          seg.system.e)
        assert dcon <= 1e-5


def test_eigenvalue_drift_bounded_across_reinit(grid9):
    """First-order eigenvalue sensitivity across one re-freeze."""
    from cartswing.assess import eigen_condition
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("load-scale", 1.0, bus="8", factor=0.9)])
    run = solve_monitored(m2, v2, system, init, 1.0, 10.0,
                          ValidityConfig(delta_t=0.002))
    sys_before = run.segments[0].system
    sys_after = run.segments[1].system
    d_norm = np.linalg.norm(sys_after.t - sys_before.t, "fro")
    lam_before = np.linalg.eigvals(sys_before.t)
    lam_after = np.linalg.eigvals(sys_after.t)
    for lam in lam_before:
        j = np.argmin(np.abs(lam_after - lam))
        s = eigen_condition(sys_before.t, lam)
        assert abs(lam_after[j] - lam) <= 10.0 * d_norm / s


def test_drift_off_grows_superlinearly_without_projection(grid9):
    """Magnitude-constraint error on the unstable uncleared fault."""
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("fault", 1.0, bus="7", fault_y=-1e4j)])
    sol = solve_system(system, init.z0, v2, 1.0)
    from cartswing.analytic import evaluate
    vcfg = ValidityConfig()
    found = locate_boundary(m2, system, sol, vcfg, 1.0 + vcfg.resolution,
                            10.0, init.o0)
    tau = found[0]
    span = tau - 1.0

    def mag_err(t):
        pt = evaluate(sol, t)
        dcon, p_t, _ = projection_norms(pt.w, pt.dw, init.e)
        return np.max(np.abs(p_t))

    e1 = mag_err(1.0 + span)
    e2 = mag_err(1.0 + 2 * span)
    assert e2 > e1                      # growing
    assert e2 > 2.0 * e1                # faster than linear in elapsed time


def test_first_order_error_propagation_formula(grid9, rng):
    m2, v2, init, system = _system_for(
        grid9, [Disturbance("load-scale", 1.0, bus="8", factor=0.9)])
    dz0 = rng.normal(size=system.n) * 1e-3
    d_t = rng.normal(size=(system.n, system.n)) * 1e-4
    dt = 0.05
    got = first_order_state_error(system, d_t, init.z0, dz0, dt)
    want = dz0 + dt * (system.t @ dz0 + d_t @ init.z0)
    assert np.allclose(got, want, atol=1e-15)
