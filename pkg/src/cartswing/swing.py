"""Loss-frame kinematics, observation metrics, swing-system assembly.

Per machine the internal phasor is tracked in a frame rotated by the link
loss angle: x = E cos(delta - gamma), y = E sin(delta - gamma). In that
frame the rotor dynamics close into a linear constant-coefficient system
once the slowly-varying per-machine observation value

    O_i(t) = |y_ik| (x_i vx_k + y_i vy_k) / M_i + omega_i^2

is frozen at its post-disturbance value. Two drift metrics guard the
freeze: O1 (internal-magnitude and magnitude-rate residuals) and O2
(per-machine drift of O_i from the frozen value).

Assembled form, z = [w; dw/dt; wt]:

    dz/dt = T z + b,
    T = [[0, I, 0], [-L, -diag(D/M), 0], [0, 0, -Lt]],  b = (0; -l; -lt)

subject to x_i^2 + y_i^2 = E_i^2 and x_i x_i' + y_i y_i' = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = (-a + math.pi) % (2.0 * math.pi)
    return math.pi - w if np.ndim(a) else float(math.pi - w)


def to_loss_frame(e, delta, gamma):
    """Map (E, delta) to loss-frame Cartesian (x, y). Requires E > 0."""
    if np.any(np.asarray(e) <= 0):
        raise ValueError("internal voltage magnitude must be positive")
    a = np.asarray(delta) - np.asarray(gamma)
    return e * np.cos(a), e * np.sin(a)


def from_loss_frame(x, y, gamma):
    """Inverse map; returns (E, delta) with delta wrapped to (-pi, pi]."""
    e = np.hypot(x, y)
    return e, wrap_angle(np.arctan2(y, x) + gamma)


def magnitude_residuals(w, u, e):
    """Loss-frame constraint residuals.

    Returns (p_tilde, v_tilde, delta_con) with
    p_tilde_i = 1 - |w_i|/E_i, v_tilde_i = sqrt|2 x x' + 2 y y'| / E_i and
    delta_con the 2-norm of the stacked pair; delta_con equals the O1
    metric.
    """
    ni = e.size
    x, y = w[:ni], w[ni:]
    ux, uy = u[:ni], u[ni:]
    p_tilde = 1.0 - np.hypot(x, y) / e
    v_tilde = np.sqrt(np.abs(2.0 * x * ux + 2.0 * y * uy)) / e
    delta_con = float(np.linalg.norm(np.concatenate([p_tilde, v_tilde])))
    return p_tilde, v_tilde, delta_con


@dataclass(frozen=True)
class LossFrameState:
    w: np.ndarray          # (2NI,)
    u: np.ndarray          # (2NI,) = dw/dt
    wtilde: np.ndarray     # (2ND,)

    @property
    def ni(self):
        return self.w.size // 2

    def omega(self):
        """Rotor speeds d(delta)/dt = (x y' - y x') / (x^2 + y^2)."""
        ni = self.ni
        x, y = self.w[:ni], self.w[ni:]
        return (x * self.u[ni:] - y * self.u[:ni]) / (x * x + y * y)


@dataclass(frozen=True)
class ObservationMetrics:
    o: np.ndarray          # per-machine O_i(t)
    o1: float
    o2: np.ndarray         # per-machine |O_i(t) - O_i(0+)|
    p_tilde: np.ndarray
    v_tilde: np.ndarray
    delta_con: float
    eta: np.ndarray        # diagnostic: log|O_i| under mu == 0
    mu: np.ndarray         # diagnostic: identically zero


def compute_observations(model, state: LossFrameState, v_k_real: np.ndarray,
                         o_ref: np.ndarray,
                         e: np.ndarray | None = None) -> ObservationMetrics:
    """Evaluate O_i(t), O1 and O2 against the frozen reference values."""
    from .steady import reactive_coupling  # local import; no cycle at module load

    m_vec = np.array([m.m for m in model.machines])
    omega = state.omega()
    o = reactive_coupling(model, state.w, v_k_real) / m_vec + omega ** 2
    if e is None:
        e = np.array([m.e_set for m in model.machines])
    p_t, v_t, dcon = magnitude_residuals(state.w, state.u, e)
    with np.errstate(divide="ignore"):
        eta = np.log(np.abs(o))
    return ObservationMetrics(o=o, o1=dcon, o2=np.abs(o - o_ref),
                              p_tilde=p_t, v_tilde=v_t, delta_con=dcon,
                              eta=eta, mu=np.zeros_like(o))


@dataclass(frozen=True)
class MachineRow:
    """Constituents of one machine's pair of rows in L (for rebuilds)."""
    o0: float
    p_term: float          # (pmech - g E^2) / M
    coupling: float        # |y| E^2 / M
    h_row_x: np.ndarray
    h_row_y: np.ndarray
    off_x: float
    off_y: float


@dataclass(frozen=True)
class SwingSystem:
    l_mat: np.ndarray       # (2NI, 2NI)
    l_vec: np.ndarray       # (2NI,)
    lt_mat: np.ndarray      # (2ND, 2ND)
    lt_vec: np.ndarray      # (2ND,)
    t: np.ndarray           # (4NI+2ND,) square
    b: np.ndarray
    d_over_m: np.ndarray    # (2NI,) damping ratios on the dw block
    l_sys: np.ndarray       # operation-independent part of L
    lt_sys: np.ndarray
    rows: tuple             # MachineRow per machine
    e: np.ndarray           # effective internal magnitudes used
    pmech: np.ndarray
    o0: np.ndarray
    o0_load: np.ndarray
    e_load: np.ndarray
    mref_over_d: np.ndarray

    @property
    def ni(self):
        return self.l_mat.shape[0] // 2

    @property
    def nd(self):
        return self.lt_mat.shape[0] // 2

    @property
    def n(self):
        return self.t.shape[0]

    @property
    def t_norm(self):
        return float(np.linalg.norm(self.t, "fro"))

    def offsets(self):
        """(-L^-1 l, -Lt^-1 lt); raises LinAlgError if L is singular."""
        w_off = -np.linalg.solve(self.l_mat, self.l_vec)
        if self.nd:
            wt_off = -np.linalg.solve(self.lt_mat, self.lt_vec)
        else:
            wt_off = np.zeros(0)
        return w_off, wt_off

    def rebuild_l(self):
        """Reassemble L from the stored row constituents."""
        return _l_from_rows(self.rows, self.ni)

    def delta_t_norm(self, delta_o_mach, delta_o_load=None):
        """||dT||_F when the frozen observation values drift by delta_o.

        Each machine's drift enters its two rows of the -L block; each
        load's drift is scaled by M_ref/D in the -Lt block.
        """
        s = 2.0 * float(np.sum(np.asarray(delta_o_mach) ** 2))
        if self.nd and delta_o_load is not None:
            s += 2.0 * float(np.sum((self.mref_over_d * delta_o_load) ** 2))
        return math.sqrt(s)

    def with_frozen_o(self, model, vmap, o0, o0_load=None):
        """Rebuild the system with new frozen observation values."""
        return assemble_from_frozen(model, vmap, o0,
                                    self.e, self.pmech,
                                    o0_load if o0_load is not None else self.o0_load,
                                    self.e_load)


def _l_from_rows(rows, ni):
    l = np.zeros((2 * ni, 2 * ni))
    for i, r in enumerate(rows):
        l[i, i] += r.o0
        l[i, ni + i] += r.p_term
        l[i, :] -= r.coupling * r.h_row_x
        l[ni + i, i] += -r.p_term
        l[ni + i, ni + i] += r.o0
        l[ni + i, :] -= r.coupling * r.h_row_y
    return l


def assemble_from_frozen(model, vmap, o0, e, pmech, o0_load,
                         e_load=None) -> SwingSystem:
    """Build L, l, Lt, lt, T, b for given frozen values and machine data."""
    ni, nd, nk = model.ni, model.nd, model.nk
    if e_load is None:
        e_load = np.ones(nd)
    m_vec = np.array([m.m for m in model.machines])
    d_vec = np.asarray(model.d_eff, float)

    rows = []
    l_vec = np.zeros(2 * ni)
    l_sys = np.zeros((2 * ni, 2 * ni))
    h_ki = vmap.h_ki
    for i, mach in enumerate(model.machines):
        k = model.k_index(mach.bus)
        coup = mach.y_mag * e[i] ** 2 / mach.m
        p_term = (pmech[i] - mach.g_ii * e[i] ** 2) / mach.m
        rows.append(MachineRow(o0=float(o0[i]), p_term=p_term, coupling=coup,
                               h_row_x=h_ki[k].copy(), h_row_y=h_ki[nk + k].copy(),
                               off_x=float(vmap.v_k_off[k]),
                               off_y=float(vmap.v_k_off[nk + k])))
        l_vec[i] = -coup * vmap.v_k_off[k]
        l_vec[ni + i] = -coup * vmap.v_k_off[nk + k]
        l_sys[i, i] = mach.b_ii * e[i] ** 2 / mach.m
        l_sys[i, ni + i] = -mach.g_ii * e[i] ** 2 / mach.m
        l_sys[ni + i, i] = mach.g_ii * e[i] ** 2 / mach.m
        l_sys[ni + i, ni + i] = mach.b_ii * e[i] ** 2 / mach.m
    l_mat = _l_from_rows(tuple(rows), ni)

    lt_mat = np.zeros((2 * nd, 2 * nd))
    lt_vec = np.zeros(2 * nd)
    lt_sys = np.zeros((2 * nd, 2 * nd))
    mref_over_d = np.zeros(nd)
    if nd:
        h_kd = vmap.h_kd
        for j, fl in enumerate(model.freq_loads):
            k = model.k_index(fl.bus)
            e_j = float(e_load[j])
            coup = fl.y_mag * e_j ** 2 / fl.m_rate
            p_term = (fl.pmech - fl.g_ii * e_j ** 2) / fl.m_rate
            mref_over_d[j] = fl.mref / fl.m_rate
            lt_mat[j, j] += mref_over_d[j] * o0_load[j]
            lt_mat[j, nd + j] += p_term
            lt_mat[j, :] -= coup * h_kd[k]
            lt_mat[nd + j, j] += -p_term
            lt_mat[nd + j, nd + j] += mref_over_d[j] * o0_load[j]
            lt_mat[nd + j, :] -= coup * h_kd[nk + k]
            lt_vec[j] = -coup * vmap.v_k_off[k]
            lt_vec[nd + j] = -coup * vmap.v_k_off[nk + k]
            lt_sys[j, j] = fl.link_y.imag * e_j ** 2 / fl.m_rate
            lt_sys[nd + j, nd + j] = fl.link_y.imag * e_j ** 2 / fl.m_rate

    d_over_m = np.concatenate([d_vec / m_vec, d_vec / m_vec])
    n = 4 * ni + 2 * nd
    t = np.zeros((n, n))
    t[:2 * ni, 2 * ni:4 * ni] = np.eye(2 * ni)
    t[2 * ni:4 * ni, :2 * ni] = -l_mat
    t[2 * ni:4 * ni, 2 * ni:4 * ni] = -np.diag(d_over_m)
    if nd:
        t[4 * ni:, 4 * ni:] = -lt_mat
    b = np.concatenate([np.zeros(2 * ni), -l_vec, -lt_vec])

    return SwingSystem(l_mat=l_mat, l_vec=l_vec, lt_mat=lt_mat, lt_vec=lt_vec,
                       t=t, b=b, d_over_m=d_over_m, l_sys=l_sys, lt_sys=lt_sys,
                       rows=tuple(rows), e=np.asarray(e, float).copy(),
                       pmech=np.asarray(pmech, float).copy(),
                       o0=np.asarray(o0, float).copy(),
                       o0_load=np.asarray(o0_load, float).copy(),
                       e_load=np.asarray(e_load, float).copy(),
                       mref_over_d=mref_over_d)


def assemble_system(model, vmap, init) -> SwingSystem:
    """Assemble the swing system from a post-disturbance initial state."""
    return assemble_from_frozen(model, vmap, init.o0, init.e, init.pmech,
                                init.o0_load, init.e_load)
