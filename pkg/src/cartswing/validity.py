"""Validity-region monitoring and consistent re-initialization.

The closed-form solution ignores the algebraic constraints; two drift
metrics bound where that is admissible. The magnitude metric (O1) watches
the internal-voltage magnitude and magnitude-rate residuals; the T-error
metric watches eps = ||dT||_F / ||T||_F induced by the drift of the frozen
per-machine observation values. Crossing either threshold marks a boundary;
there the state is projected back onto the constraint manifold by a Newton
iteration on the combined differential/algebraic residual (an
underdetermined system, stepped in the minimum-norm sense with the
second-derivative update scaled by h), the observation values are
re-frozen, and the solution is re-fitted from the projected point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytic import AnalyticSolution, evaluate_many, solve_system
from .errors import ProjectionFailure
from .steady import stack_sources
from .swing import magnitude_residuals

# speed conventions for the drift entering the T-error metric
EPS_SPEED_ABSOLUTE = "absolute"
EPS_SPEED_COI = "coi"
EPS_SPEED_NONE = "none"


@dataclass(frozen=True)
class ValidityConfig:
    delta_e: float = 0.10        # magnitude-drift threshold (10%)
    delta_t: float = 0.01        # relative T-error threshold (1%)
    h: float = 0.1               # second-derivative update scaling
    resolution: float = 1e-3     # boundary sampling resolution, s
    bisect_tol: float = 1e-4     # boundary refinement, s
    gate: str = "per-machine"    # "per-machine" max|p~| or "norm" (Delta_con)
    eps_speed: str = EPS_SPEED_COI
    newton_tol_g: float = 1e-10
    newton_tol_f: float = 1e-8
    newton_max_iter: int = 50
    max_events: int = 60

    def __post_init__(self):
        if min(self.delta_e, self.delta_t, self.h, self.resolution) <= 0:
            raise ValueError("validity thresholds must be positive")


def projection_norms(w, u, e):
    """Constraint projections (p~, v~) and their stacked 2-norm."""
    p_t, v_t, dcon = magnitude_residuals(np.asarray(w, float),
                                         np.asarray(u, float),
                                         np.asarray(e, float))
    return dcon, p_t, v_t


def _speed_for_eps(omega, m_vec, mode):
    if mode == EPS_SPEED_ABSOLUTE:
        return omega
    if mode == EPS_SPEED_COI:
        return omega - np.dot(m_vec, omega) / m_vec.sum()
    if mode == EPS_SPEED_NONE:
        return np.zeros_like(omega)
    raise ValueError(f"unknown eps speed mode {mode!r}")


def observation_trace(model, system, z_cols, v_k_cols, eps_speed):
    """Per-sample O_i with the configured speed convention.

    z_cols: state columns (dim, n); v_k_cols: stacked Kbus voltages per
    sample. Returns (o_full, o_eps): the metric with absolute speed (what
    gets reported) and the variant entering the T-error drift.
    """
    ni = model.ni
    nk = model.nk
    m_vec = np.array([m.m for m in model.machines])
    y_mag = np.array([m.y_mag for m in model.machines])
    k_idx = np.array([model.k_index(m.bus) for m in model.machines])
    x = z_cols[:ni, :]
    y = z_cols[ni:2 * ni, :]
    ux = z_cols[2 * ni:3 * ni, :]
    uy = z_cols[3 * ni:4 * ni, :]
    vx = v_k_cols[k_idx, :]
    vy = v_k_cols[nk + k_idx, :]
    coup = (y_mag[:, None] * (x * vx + y * vy)) / m_vec[:, None]
    omega = (x * uy - y * ux) / (x * x + y * y)
    o_full = coup + omega ** 2
    if eps_speed == EPS_SPEED_ABSOLUTE:
        return o_full, o_full
    if eps_speed == EPS_SPEED_NONE:
        return o_full, coup
    w_coi = (m_vec[:, None] * omega).sum(0) / m_vec.sum()
    return o_full, coup + (omega - w_coi[None, :]) ** 2


def epsilon_tracking(system, o_trace, o_ref):
    """Relative T-error per sample from the observation drift.

    o_trace: (NI, n) observation values per machine per sample.
    """
    o_trace = np.atleast_2d(np.asarray(o_trace, float))
    if o_trace.shape[0] != np.size(o_ref):
        o_trace = o_trace.T
    d = o_trace - np.asarray(o_ref, float)[:, None]
    return np.sqrt(2.0 * (d ** 2).sum(axis=0)) / system.t_norm


def first_order_state_error(system, delta_t_mat, z0, dz0, dt):
    """(I + T dt) dz0 + dt dT z0: leading-order error propagation."""
    return dz0 + dt * (system.t @ dz0 + delta_t_mat @ z0)


@dataclass(frozen=True)
class BoundaryEvent:
    tau: float
    trigger: str                 # "magnitude-drift" | "t-drift"
    gate_value: float
    pre_state: np.ndarray        # z at tau before projection
    post_state: np.ndarray       # z after projection
    residual_g_before: float
    residual_g_after: float
    residual_f_after: float
    newton_iterations: int
    o_new: np.ndarray
    eps_at_tau: float
    delta_con_before: float


def _gate_values(model, system, sol, ts, vcfg, o_ref):
    """Evaluate both gate signals on a sample grid."""
    z, v_k, _, _ = evaluate_many(sol, ts)
    ni = model.ni
    e = system.e
    w = z[:2 * ni, :]
    u = z[2 * ni:4 * ni, :]
    mag = np.abs(1.0 - np.hypot(w[:ni, :], w[ni:, :]) / e[:, None])
    if vcfg.gate == "per-machine":
        g_mag = mag.max(axis=0)
    else:
        vel = np.sqrt(np.abs(2.0 * w[:ni] * u[:ni] + 2.0 * w[ni:] * u[ni:])) / e[:, None]
        g_mag = np.sqrt((mag ** 2).sum(0) + (vel ** 2).sum(0))
    _, o_eps = observation_trace(model, system, z, v_k, vcfg.eps_speed)
    g_eps = epsilon_tracking(system, o_eps, o_ref)
    return g_mag, g_eps


def locate_boundary(model, system, sol: AnalyticSolution, vcfg: ValidityConfig,
                    t_start, t_end, o_ref, chunk=256):
    """First time in (t_start, t_end] where a drift gate trips, or None.

    Samples at the configured resolution (chunked, stopping at the first
    crossing), then bisects the bracketing interval down to the bisection
    tolerance.
    """
    if t_end <= t_start:
        return None
    n = max(2, int(math.ceil((t_end - t_start) / vcfg.resolution)) + 1)
    ts_all = np.linspace(t_start, t_end, n)
    lo = hi = None
    for start in range(0, n - 1, chunk):
        ts = ts_all[start:start + chunk + 1]
        g_mag, g_eps = _gate_values(model, system, sol, ts, vcfg, o_ref)
        over = (g_mag >= vcfg.delta_e) | (g_eps >= vcfg.delta_t)
        if start == 0:
            over[0] = False  # the start point itself never trips
        idx = np.flatnonzero(over)
        if idx.size:
            j = start + idx[0]
            hi = ts_all[j]
            lo = ts_all[max(j - 1, 0)]
            break
    if hi is None:
        return None
    while hi - lo > vcfg.bisect_tol:
        mid = 0.5 * (lo + hi)
        gm, ge = _gate_values(model, system, sol, np.array([mid]), vcfg, o_ref)
        if gm[0] >= vcfg.delta_e or ge[0] >= vcfg.delta_t:
            hi = mid
        else:
            lo = mid
    gm, ge = _gate_values(model, system, sol, np.array([hi]), vcfg, o_ref)
    if gm[0] >= vcfg.delta_e:
        return float(hi), "magnitude-drift", float(gm[0]), float(ge[0])
    return float(hi), "t-drift", float(ge[0]), float(gm[0])


def consistent_reinit(z_tau, system, vcfg: ValidityConfig):
    """Project a drifted state onto the constraint manifold.

    Newton iteration on the stacked residual F = (f; g): f defines the
    first-derivative variables consistently with the linear dynamics, g
    holds the magnitude and orthogonality constraints. The Jacobian
    [[h I, L^, D^], [0, Mw, Mu]] is rectangular; steps are taken in the
    minimum-norm sense, with the first block variable scaled by h so the
    second-derivative update moves gently.

    Returns (z_consistent, iterations); an already-consistent input comes
    back unchanged with zero iterations.
    """
    ni, nd = system.ni, system.nd
    e2 = system.e ** 2
    w = z_tau[:2 * ni].copy()
    u1 = z_tau[2 * ni:4 * ni].copy()
    u2 = z_tau[4 * ni:].copy()

    d_hat = np.zeros((2 * ni + 2 * nd, 2 * ni + 2 * nd))
    d_hat[:2 * ni, :2 * ni] = np.diag(system.d_over_m)
    if nd:
        d_hat[2 * ni:, 2 * ni:] = system.lt_mat
    l_hat = np.vstack([system.l_mat, np.zeros((2 * nd, 2 * ni))])
    lvec_hat = np.concatenate([system.l_vec, system.lt_vec])

    def f_res(up, w_, u_):
        return up + d_hat @ u_ + l_hat @ w_ + lvec_hat

    def g_res(w_, u1_):
        mag = w_[:ni] ** 2 + w_[ni:] ** 2 - e2
        vel = w_[:ni] * u1_[:ni] + w_[ni:] * u1_[ni:]
        return np.concatenate([mag, vel])

    u = np.concatenate([u1, u2])
    up = -(d_hat @ u + l_hat @ w + lvec_hat)

    nf = 2 * ni + 2 * nd
    it = 0
    while True:
        fr = f_res(up, w, u)
        gr = g_res(w, u[:2 * ni])
        if (np.max(np.abs(gr)) <= vcfg.newton_tol_g
                and np.max(np.abs(fr)) <= vcfg.newton_tol_f):
            break
        if it >= vcfg.newton_max_iter:
            raise ProjectionFailure(
                "consistent re-initialization did not converge",
                f_residual=float(np.max(np.abs(fr))),
                g_residual=float(np.max(np.abs(gr))))
        m_w = np.zeros((2 * ni, 2 * ni))
        m_u = np.zeros((2 * ni, nf))
        for i in range(ni):
            m_w[i, i] = 2.0 * w[i]
            m_w[i, ni + i] = 2.0 * w[ni + i]
            m_w[ni + i, i] = u[i]
            m_w[ni + i, ni + i] = u[ni + i]
            m_u[ni + i, i] = w[i]
            m_u[ni + i, ni + i] = w[ni + i]
        jac = np.block([
            [vcfg.h * np.eye(nf), l_hat, d_hat],
            [np.zeros((2 * ni, nf)), m_w, m_u]])
        step = np.linalg.lstsq(jac, -np.concatenate([fr, gr]), rcond=None)[0]
        up = up + vcfg.h * step[:nf]
        w = w + step[nf:nf + 2 * ni]
        u = u + step[nf + 2 * ni:]
        it += 1

    return np.concatenate([w, u[:2 * ni], u[2 * ni:]]), it


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    solution: AnalyticSolution
    system: object
    o_ref: np.ndarray          # frozen values in the trace convention (for eps)
    o_ref_phys: np.ndarray     # frozen values with absolute speed (for O2)


@dataclass
class MonitoredRun:
    segments: list
    events: list
    cap_hit: bool = False

    @property
    def final_solution(self):
        return self.segments[-1].solution

    @property
    def final_system(self):
        return self.segments[-1].system


def solve_monitored(model, vmap, system, init, t_start, t_end,
                    vcfg: ValidityConfig | None = None,
                    reinit: bool = True) -> MonitoredRun:
    """Closed-form solve with validity monitoring and re-initialization.

    Without monitoring (reinit=False) a single segment spans the window.
    Otherwise each gate crossing triggers the projection, a re-freeze of
    the observation values and a re-fit; event times are strictly
    increasing and capped at vcfg.max_events.
    """
    vcfg = vcfg or ValidityConfig()
    segments, events = [], []
    sys_cur = system
    z_cur = init.z0
    o_ref_phys = init.o0
    origin = t_start
    ni = model.ni
    m_vec = np.array([m.m for m in model.machines])

    def eps_reference(sol):
        """Frozen values in the trace convention, at the segment origin."""
        z0c, vk0, _, _ = evaluate_many(sol, np.array([sol.t_origin]))
        _, o_eps0 = observation_trace(model, sys_cur, z0c, vk0, vcfg.eps_speed)
        return o_eps0[:, 0]

    while True:
        sol = solve_system(sys_cur, z_cur, vmap, origin)
        o_ref = eps_reference(sol)
        if not reinit:
            segments.append(Segment(origin, t_end, sol, sys_cur, o_ref, o_ref_phys))
            break
        found = locate_boundary(model, sys_cur, sol, vcfg,
                                origin + vcfg.resolution, t_end, o_ref)
        if found is None:
            segments.append(Segment(origin, t_end, sol, sys_cur, o_ref, o_ref_phys))
            break
        tau, trigger, gate_value, other = found
        z_cols, v_k, _, _ = evaluate_many(sol, np.array([tau]))
        z_tau = z_cols[:, 0]
        _, p_t, v_t = projection_norms(z_tau[:2 * ni], z_tau[2 * ni:4 * ni],
                                       sys_cur.e)
        dcon = float(np.linalg.norm(np.concatenate([p_t, v_t])))
        g_before = _constraint_inf(z_tau, sys_cur)

        z_proj, iters = consistent_reinit(z_tau, sys_cur, vcfg)
        g_after = _constraint_inf(z_proj, sys_cur)

        # re-freeze observation values at the projected state
        w_src = stack_sources(z_proj[:2 * ni], z_proj[4 * ni:])
        v_k_new = vmap.h_k @ w_src + vmap.v_k_off
        x, y = z_proj[:ni], z_proj[ni:2 * ni]
        ux, uy = z_proj[2 * ni:3 * ni], z_proj[3 * ni:4 * ni]
        omega = (x * uy - y * ux) / (x * x + y * y)
        y_mag = np.array([m.y_mag for m in model.machines])
        k_idx = np.array([model.k_index(m.bus) for m in model.machines])
        nk = model.nk
        coup = y_mag * (x * v_k_new[k_idx] + y * v_k_new[nk + k_idx]) / m_vec
        o_new = coup + omega ** 2

        _, o_eps_col = observation_trace(model, sys_cur,
                                         z_tau[:, None], v_k[:, :1],
                                         vcfg.eps_speed)
        eps_tau = float(epsilon_tracking(sys_cur, o_eps_col, o_ref)[0])

        sys_new = sys_cur.with_frozen_o(model, vmap, o_new)
        events.append(BoundaryEvent(
            tau=tau, trigger=trigger, gate_value=gate_value,
            pre_state=z_tau.copy(), post_state=z_proj.copy(),
            residual_g_before=g_before, residual_g_after=g_after,
            residual_f_after=0.0, newton_iterations=iters,
            o_new=o_new, eps_at_tau=eps_tau, delta_con_before=dcon))
        segments.append(Segment(origin, tau, sol, sys_cur, o_ref, o_ref_phys))

        sys_cur = sys_new
        z_cur = z_proj
        o_ref_phys = o_new
        origin = tau
        if len(events) >= vcfg.max_events or t_end - origin <= vcfg.resolution:
            sol = solve_system(sys_cur, z_cur, vmap, origin)
            o_ref = eps_reference(sol)
            segments.append(Segment(origin, t_end, sol, sys_cur, o_ref, o_ref_phys))
            return MonitoredRun(segments, events,
                                cap_hit=len(events) >= vcfg.max_events)
    return MonitoredRun(segments, events)


def _constraint_inf(z, system):
    ni = system.ni
    w, u1 = z[:2 * ni], z[2 * ni:4 * ni]
    mag = w[:ni] ** 2 + w[ni:2 * ni] ** 2 - system.e ** 2
    vel = w[:ni] * u1[:ni] + w[ni:2 * ni] * u1[ni:2 * ni]
    return float(max(np.max(np.abs(mag)), np.max(np.abs(vel))))


def sample_monitored(run: MonitoredRun, model, ts, vcfg=None):
    """Sample a monitored run on a global grid into trajectory arrays.

    Returns dict with z columns, voltages, per-sample O (absolute speed),
    O1 and eps; segment boundaries use the segment active at each time.
    """
    vcfg = vcfg or ValidityConfig()
    ni, nk, nm = model.ni, model.nk, model.nm
    ts = np.asarray(ts, float)
    dim = run.segments[0].solution.n
    z = np.empty((dim, ts.size))
    v_k = np.empty((2 * nk, ts.size))
    v_m = np.empty((2 * nm, ts.size))
    o = np.empty((ni, ts.size))
    eps = np.empty(ts.size)
    o1 = np.empty(ts.size)
    div = np.zeros(ts.size, bool)
    for seg in run.segments:
        if seg is run.segments[-1]:
            mask = (ts >= seg.t_start) & (ts <= seg.t_end + 1e-12)
        else:
            mask = (ts >= seg.t_start) & (ts < seg.t_end)
        if not np.any(mask):
            continue
        zc, vk, vm, dv = evaluate_many(seg.solution, ts[mask])
        z[:, mask] = zc
        v_k[:, mask] = vk
        v_m[:, mask] = vm
        div[mask] = dv
        o_full, o_eps = observation_trace(model, seg.system, zc, vk,
                                          vcfg.eps_speed)
        o[:, mask] = o_full
        eps[mask] = epsilon_tracking(seg.system, o_eps, seg.o_ref)
        w = zc[:2 * ni, :]
        u = zc[2 * ni:4 * ni, :]
        e = seg.system.e
        mag = 1.0 - np.hypot(w[:ni], w[ni:]) / e[:, None]
        vel = np.sqrt(np.abs(2 * w[:ni] * u[:ni] + 2 * w[ni:] * u[ni:])) / e[:, None]
        o1[mask] = np.sqrt((mag ** 2).sum(0) + (vel ** 2).sum(0))
    return {"z": z, "v_k": v_k, "v_m": v_m, "o": o, "o1": o1, "eps": eps,
            "divergent": div}
