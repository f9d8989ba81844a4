"""Reference time-domain simulation (fixed-step Runge-Kutta).

State z = [delta; omega; wtilde]. Each derivative evaluation rebuilds the
right-hand side as A z + b(z): A carries the kinematic identity block, the
damping ratios and the load block; b carries the per-machine accelerating
power from a fresh network solution (loads held in their linear form, so
the network solve is the affine sensitivity map).

The four-substep update follows the half/half/full pattern with the larger
weight on the middle increments; b is refreshed after every substep state
update. A frozen-b variant is kept for cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError
from .network import LoadSet
from .steady import stack_sources
from .swing import to_loss_frame
from .trajectory import Trajectory


@dataclass(frozen=True)
class TdsConfig:
    dt: float = 0.01           # step size, s
    t_end: float = 10.0
    refine_factor: int = 2     # step divisor for the invariance study
    invariance_tol: float = 1e-4
    convert_loads: bool = True  # fold category-IV loads into admittances
    freeze_b: bool = False     # hold b at the step start (cross-check mode)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def rk4_step(f, t, z, dt):
    """One textbook fourth-order step for dz/dt = f(t, z)."""
    k1 = f(t, z)
    k2 = f(t + 0.5 * dt, z + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, z + 0.5 * dt * k2)
    k4 = f(t + dt, z + dt * k3)
    return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_fixed(f, z0, t0, t1, dt):
    """Fixed-step integration on [t0, t1]; returns (times, states)."""
    n = max(1, int(round((t1 - t0) / dt)))
    ts = t0 + dt * np.arange(n + 1)
    ts[-1] = t1
    zs = np.empty((n + 1, np.size(z0)))
    zs[0] = z0
    for k in range(n):
        zs[k + 1] = rk4_step(f, ts[k], zs[k], ts[k + 1] - ts[k])
    return ts, zs


def admittance_equivalent_loads(loads: LoadSet, v_op: dict) -> LoadSet:
    """Convert category-IV (and constant-current) parts to admittances.

    The equivalent admittance reproduces the load power at the reference
    voltage; category III impedance entries are already in that form.
    """
    const = list(loads.constant_ci)
    for bus, i0, y0 in loads.remaining:
        v = v_op[bus]
        s = v * np.conj(i0 + y0 * v)
        const.append((bus, 0.0 + 0.0j, np.conj(s) / abs(v) ** 2))
    out = []
    for bus, icc, yci in const:
        if icc != 0:
            v = v_op[bus]
            s = v * np.conj(icc)
            yci = yci + np.conj(s) / abs(v) ** 2
            icc = 0.0 + 0.0j
        out.append((bus, icc, yci))
    return replace(loads, constant_ci=tuple(out), remaining=())


class GridDynamics:
    """Right-hand-side builder for one network configuration."""

    def __init__(self, model, vmap, system):
        self.model = model
        self.vmap = vmap
        self.system = system
        self.ni = model.ni
        self.nd = model.nd
        self.m_vec = np.array([m.m for m in model.machines])
        self.d_vec = np.asarray(model.d_eff, float)
        self.e = system.e
        self.pmech = system.pmech
        self.gamma = np.array([m.gamma for m in model.machines])
        self.y_mag = np.array([m.y_mag for m in model.machines])
        self.g_ii = np.array([m.g_ii for m in model.machines])
        self.k_idx = np.array([model.k_index(m.bus) for m in model.machines])
        n = 2 * self.ni + 2 * self.nd
        a = np.zeros((n, n))
        a[:self.ni, self.ni:2 * self.ni] = np.eye(self.ni)
        a[self.ni:2 * self.ni, self.ni:2 * self.ni] = -np.diag(self.d_vec / self.m_vec)
        if self.nd:
            a[2 * self.ni:, 2 * self.ni:] = -system.lt_mat
        self.a = a

    def split(self, z):
        ni = self.ni
        return z[:ni], z[ni:2 * ni], z[2 * ni:]

    def v_k_real(self, delta, wtilde):
        x, y = to_loss_frame(self.e, delta, self.gamma)
        w_src = stack_sources(np.concatenate([x, y]), wtilde)
        return self.vmap.h_k @ w_src + self.vmap.v_k_off, (x, y)

    def p_elec(self, delta, wtilde):
        v_k, (x, y) = self.v_k_real(delta, wtilde)
        nk = self.model.nk
        vx = v_k[self.k_idx]
        vy = v_k[nk + self.k_idx]
        return self.g_ii * self.e ** 2 + self.y_mag * (y * vx - x * vy)

    def b_vec(self, z):
        delta, _, wtilde = self.split(z)
        out = np.zeros(z.size)
        out[self.ni:2 * self.ni] = (self.pmech - self.p_elec(delta, wtilde)) / self.m_vec
        if self.nd:
            out[2 * self.ni:] = -self.system.lt_vec
        return out

    def rhs(self, t, z):
        return self.a @ z + self.b_vec(z)


def _rk4_substeps(dyn: GridDynamics, z, dt, freeze_b):
    b = dyn.b_vec(z)
    y1 = dyn.a @ z + b
    z1 = z + 0.5 * dt * y1
    if not freeze_b:
        b = dyn.b_vec(z1)
    y2 = dyn.a @ z1 + b
    z2 = z + 0.5 * dt * y2
    if not freeze_b:
        b = dyn.b_vec(z2)
    y3 = dyn.a @ z2 + b
    z3 = z + dt * y3
    if not freeze_b:
        b = dyn.b_vec(z3)
    y4 = dyn.a @ z3 + b
    return z + (dt / 6.0) * (y1 + 2.0 * y2 + 2.0 * y3 + y4)


def rk4_simulate(z0, dyn: GridDynamics, cfg: TdsConfig, t0: float = 0.0,
                 o_ref=None, eps_fn=None) -> Trajectory:
    """Integrate on [t0, cfg.t_end] and sample all reported quantities.

    o_ref supplies the frozen observation values for the drift column;
    eps_fn maps a per-machine observation drift to the relative T-error.
    """
    n = max(1, int(round((cfg.t_end - t0) / cfg.dt)))
    ts = t0 + cfg.dt * np.arange(n + 1)
    ts[-1] = cfg.t_end
    zs = np.empty((n + 1, np.size(z0)))
    zs[0] = np.asarray(z0, float)
    for k in range(n):
        zs[k + 1] = _rk4_substeps(dyn, zs[k], ts[k + 1] - ts[k], cfg.freeze_b)
        if not np.all(np.isfinite(zs[k + 1])):
            raise NumericalError(f"network solve overflow at t={ts[k + 1]:.4f}s "
                                 "(partial trajectory discarded)")
    return sample_tds(ts, zs, dyn, o_ref=o_ref, eps_fn=eps_fn)


def sample_tds(ts, zs, dyn: GridDynamics, o_ref=None, eps_fn=None) -> Trajectory:
    model = dyn.model
    ni, nd, nk, nm = dyn.ni, dyn.nd, model.nk, model.nm
    npts = ts.size
    delta = zs[:, :ni]
    omega = zs[:, ni:2 * ni]
    wtilde = zs[:, 2 * ni:]
    vmag = np.empty((npts, nk + nm))
    vang = np.empty((npts, nk + nm))
    o = np.empty((npts, ni))
    for k in range(npts):
        x, y = to_loss_frame(dyn.e, delta[k], dyn.gamma)
        w_src = stack_sources(np.concatenate([x, y]), wtilde[k])
        v_k, v_m = dyn.vmap.voltages(w_src)
        v_kc = v_k[:nk] + 1j * v_k[nk:]
        v_mc = v_m[:nm] + 1j * v_m[nm:]
        vmag[k] = np.concatenate([np.abs(v_kc), np.abs(v_mc)])
        vang[k] = np.concatenate([np.angle(v_kc), np.angle(v_mc)])
        vx = v_k[dyn.k_idx]
        vy = v_k[nk + dyn.k_idx]
        o[k] = (dyn.y_mag * (x * vx + y * vy)) / dyn.m_vec + omega[k] ** 2
    emag = np.tile(dyn.e, (npts, 1))
    o1 = np.zeros(npts)  # TDS states sit exactly on the constraint manifold
    if o_ref is not None and eps_fn is not None:
        eps = np.array([eps_fn(o[k] - o_ref, omega[k]) for k in range(npts)])
    else:
        eps = np.zeros(npts)
    return Trajectory(t=ts, delta=delta, omega=omega, vmag=vmag, vang=vang,
                      emag=emag, o=o, o1=o1, eps=eps,
                      bus_labels=tuple(model.kbuses) + tuple(model.mbuses),
                      machine_labels=tuple(m.name for m in model.machines),
                      provenance="tds", wtilde=wtilde if nd else None)


def simulate_until_invariant(z0, dyn: GridDynamics, cfg: TdsConfig,
                             t0: float = 0.0, max_rounds: int = 4):
    """Re-run with decreasing step until the final state stops moving.

    Returns (trajectory, dt_used, final_change). Raises if the invariance
    tolerance is never met within max_rounds refinements.
    """
    dt = cfg.dt
    traj = rk4_simulate(z0, dyn, replace(cfg, dt=dt), t0)
    for _ in range(max_rounds):
        finer = rk4_simulate(z0, dyn, replace(cfg, dt=dt / cfg.refine_factor), t0)
        change = float(np.max(np.abs(finer.delta[-1] - traj.delta[-1])))
        if change <= cfg.invariance_tol:
            return traj, dt, change
        traj, dt = finer, dt / cfg.refine_factor
    raise NumericalError(f"TDS results not step-invariant at dt={dt:g} "
                         f"(last change {change:.3e})")
