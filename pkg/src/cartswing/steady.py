"""Pre-fault operating point, disturbances, and the post-disturbance state.

The pre-fault point is found by a standard Newton-Raphson power flow on the
original network, then mapped into loss-frame internal-source coordinates.
Internal voltages are recovered from the terminal conditions; mechanical
powers are re-evaluated from the assembled model so the pre-fault state is
an exact fixed point of the dynamic equations (to rounding).

Rotor speeds are stored as deviations from synchronous speed, so the
pre-fault speed is zero, and rotor angle/speed are continuous across any
disturbance: the electrical-power step has finite height, so its integral
over the zero-length switching interval vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .caseio import Disturbance, RawCase
from .errors import CaseValidationError, NumericalError, PowerFlowError
from .network import (NetworkModel, VoltageMap, partition_admittance,
                      reduce_to_sensitivities)
from .swing import to_loss_frame


@dataclass(frozen=True)
class PowerFlowSolution:
    v: np.ndarray            # complex voltage per original bus (case order)
    bus_index: dict          # bus id -> position in v
    s_inj: np.ndarray        # complex net injection per bus
    gen_s: tuple             # complex generated power per generator record
    iterations: int
    max_mismatch: float

    def voltage(self, bus):
        return self.v[self.bus_index[bus]]


def _ybus_original(case: RawCase) -> np.ndarray:
    n = len(case.buses)
    idx = {b.id: i for i, b in enumerate(case.buses)}
    y = np.zeros((n, n), complex)
    for br in case.branches:
        if not br.status:
            continue
        a, b = idx[br.from_bus], idx[br.to_bus]
        y[a, a] += br.y + 1j * br.bsh / 2.0
        y[b, b] += br.y + 1j * br.bsh / 2.0
        y[a, b] -= br.y
        y[b, a] -= br.y
    for b in case.buses:
        y[idx[b.id], idx[b.id]] += complex(b.gsh, b.bsh)
    return y


def solve_power_flow(case: RawCase, tol: float = 1e-8,
                     max_iter: int = 50) -> PowerFlowSolution:
    """Newton-Raphson power flow on the original network.

    Loads of every category are held at their specified (p, q) here; the
    conversion to currents/admittances happens afterwards at the solved
    voltages. Returns the solution with P/Q mismatches below ``tol``.
    """
    buses = case.buses
    n = len(buses)
    idx = {b.id: i for i, b in enumerate(buses)}
    ybus = _ybus_original(case)

    kinds = [b.kind for b in buses]
    slack = [i for i, k in enumerate(kinds) if k == "slack"]
    pv = [i for i, k in enumerate(kinds) if k == "pv"]
    pq = [i for i, k in enumerate(kinds) if k == "pq"]
    if len(slack) != 1:
        raise CaseValidationError(f"need exactly one slack bus, found {len(slack)}")
    gen_buses = {g.bus for g in case.generators}
    for i in slack + pv:
        if buses[i].id not in gen_buses:
            raise CaseValidationError(f"bus {buses[i].id} is {kinds[i]} but has no machine")

    p_sched = np.zeros(n)
    q_sched = np.zeros(n)
    for g in case.generators:
        p_sched[idx[g.bus]] += g.pmech
    for load in case.loads:
        i = idx[load.bus]
        if load.category == "freq":
            p_sched[i] -= load.param("d0", 0.0)
            q_sched[i] -= load.param("q", 0.0)
        else:
            p_sched[i] -= load.param("p", 0.0)
            q_sched[i] -= load.param("q", 0.0)
    s_sched = p_sched + 1j * q_sched

    vm = np.array([b.vset if b.kind in ("slack", "pv") else 1.0 for b in buses])
    va = np.zeros(n)
    pvpq = pv + pq

    def mismatch(v):
        s = v * np.conj(ybus @ v)
        ds = s - s_sched
        return np.concatenate([ds.real[pvpq], ds.imag[pq]])

    it = 0
    v = vm * np.exp(1j * va)
    f = mismatch(v)
    while np.max(np.abs(f)) > tol:
        if it >= max_iter:
            raise PowerFlowError("power flow did not converge",
                                 mismatch=float(np.max(np.abs(f))), iterations=it)
        diag_v = np.diag(v)
        diag_i = np.diag(ybus @ v)
        diag_vn = np.diag(v / np.abs(v))
        ds_dvm = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
        ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
        j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
        j12 = ds_dvm.real[np.ix_(pvpq, pq)]
        j21 = ds_dva.imag[np.ix_(pq, pvpq)]
        j22 = ds_dvm.imag[np.ix_(pq, pq)]
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}",
                                 mismatch=float(np.max(np.abs(f))),
                                 iterations=it) from None
        va[pvpq] += dx[:len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        if np.any(vm[pq] <= 0):
            raise PowerFlowError("power flow diverged (voltage collapse)",
                                 mismatch=float(np.max(np.abs(f))), iterations=it)
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        it += 1

    s_inj = v * np.conj(ybus @ v)
    # generated power per record: bus injection plus the local load, with
    # multiple machines on a bus sharing the surplus beyond schedule equally
    load_s = s_sched - np.array([sum(g.pmech for g in case.generators
                                     if g.bus == b.id) for b in buses])
    gen_s = []
    for g in case.generators:
        i = idx[g.bus]
        gens_here = [h for h in case.generators if h.bus == g.bus]
        s_bus = s_inj[i] - load_s[i]
        sched = sum(h.pmech for h in gens_here)
        share = (s_bus - sched) / len(gens_here)
        gen_s.append(complex(g.pmech, 0.0) + share)
    return PowerFlowSolution(v=v, bus_index=idx, s_inj=s_inj, gen_s=tuple(gen_s),
                             iterations=it, max_mismatch=float(np.max(np.abs(f))))


@dataclass(frozen=True)
class OperatingPoint:
    """Machine state plus consistent bus voltages at one instant."""
    delta: np.ndarray        # rotor angles, rad
    omega: np.ndarray        # speed deviations, rad/s
    e: np.ndarray            # effective internal voltage magnitudes
    w: np.ndarray            # stacked loss-frame source state (2(NI+ND))
    v_k: np.ndarray          # complex Kbus voltages
    v_m: np.ndarray          # complex Mbus voltages
    p: np.ndarray            # machine real injections, p.u.
    q: np.ndarray            # machine reactive injections (standard sign)
    pmech: np.ndarray        # effective mechanical power (exact equilibrium)
    consistency: float       # max |map voltage - power-flow voltage|

    @property
    def ni(self):
        return self.delta.size

    def w_machines(self):
        ns = self.w.size // 2
        ni = self.ni
        return np.concatenate([self.w[:ni], self.w[ns:ns + ni]])

    def wtilde(self):
        ns = self.w.size // 2
        ni = self.ni
        return np.concatenate([self.w[ni:ns], self.w[ns + ni:]])


def stack_sources(w_machines: np.ndarray, wtilde: np.ndarray) -> np.ndarray:
    """Merge machine and load loss-frame states into map ordering."""
    ni = w_machines.size // 2
    nd = wtilde.size // 2
    return np.concatenate([w_machines[:ni], wtilde[:nd],
                           w_machines[ni:], wtilde[nd:]])


@dataclass(frozen=True)
class MachineState:
    """Continuous machine-side state handed across a switching instant."""
    delta: np.ndarray
    omega: np.ndarray
    e: np.ndarray
    pmech: np.ndarray
    wtilde: np.ndarray

    @classmethod
    def from_operating_point(cls, op: "OperatingPoint"):
        return cls(delta=op.delta.copy(), omega=op.omega.copy(),
                   e=op.e.copy(), pmech=op.pmech.copy(), wtilde=op.wtilde())


def machine_angles(case: RawCase, pf: PowerFlowSolution, model: NetworkModel,
                   mode: str = "exact"):
    """Recover internal (E, delta) per machine from the power-flow terminals.

    mode="exact": the internal phasor is the terminal voltage plus the
    injection current lifted through the link admittance; both magnitude and
    angle follow (and the case E value serves as a sanity reference).

    mode="fixed-e": magnitude pinned to the case value, the angle found by
    1-D root finding on the real-power injection equation.
    """
    e_list, d_list = [], []
    gen_pos = {id(m): i for i, m in enumerate(model.machines)}
    gen_s = {g.bus: [] for g in case.generators}
    for g, s in zip(case.generators, pf.gen_s):
        gen_s[g.bus].append(s)
    used = {b: 0 for b in gen_s}

    for mach in model.machines:
        v_t = pf.voltage(mach.bus)
        if mach.name.startswith("gen"):
            s = gen_s[mach.bus][used[mach.bus]]
            used[mach.bus] += 1
        else:
            s = complex(mach.pmech, 0.0)  # induction load: negative injection
        if mode == "exact":
            i_inj = np.conj(s / v_t)
            v_int = v_t + i_inj / mach.link_y
            e_list.append(abs(v_int))
            d_list.append(math.atan2(v_int.imag, v_int.real))
        elif mode == "fixed-e":
            e = mach.e_set
            ymag, gamma = mach.y_mag, mach.gamma
            vt_m, th = abs(v_t), math.atan2(v_t.imag, v_t.real)
            p_t = s.real

            def pres(delta):
                return (mach.g_ii * e * e
                        + ymag * e * vt_m * math.sin(delta - th - gamma) - p_t)

            lo, hi = th + gamma - math.pi / 2, th + gamma + math.pi / 2
            if pres(lo) * pres(hi) > 0:
                raise NumericalError(
                    f"machine {mach.name}: no internal angle matches p={p_t:.4f}")
            d_list.append(brentq(pres, lo, hi, xtol=1e-14))
            e_list.append(e)
        else:
            raise ValueError(f"unknown machine init mode {mode!r}")
    return np.array(e_list), np.array(d_list)


def electrical_power(model: NetworkModel, e, delta, v_k_complex):
    """Per-machine (p, q) injection from internal state and Kbus voltages.

    p = g E^2 + |y|(y_i vx - x_i vy); the standard-sign reactive companion
    is q = -b E^2 - |y|(x vx + y vy).
    """
    p = np.empty(model.ni)
    q = np.empty(model.ni)
    for i, mach in enumerate(model.machines):
        x, y = to_loss_frame(e[i], delta[i], mach.gamma)
        vk = v_k_complex[model.k_index(mach.bus)]
        p[i] = mach.g_ii * e[i] ** 2 + mach.y_mag * (y * vk.real - x * vk.imag)
        q[i] = -mach.b_ii * e[i] ** 2 - mach.y_mag * (x * vk.real + y * vk.imag)
    return p, q


def reactive_coupling(model: NetworkModel, w_machines, v_k_real):
    """|y_ik| (x_i vx_k + y_i vy_k) per machine, the quantity entering the
    observation metric."""
    ni = model.ni
    nk = model.nk
    out = np.empty(ni)
    for i, mach in enumerate(model.machines):
        k = model.k_index(mach.bus)
        out[i] = mach.y_mag * (w_machines[i] * v_k_real[k]
                               + w_machines[ni + i] * v_k_real[nk + k])
    return out


def operating_point(case: RawCase, pf: PowerFlowSolution, model: NetworkModel,
                    vmap: VoltageMap, mode: str = "exact") -> OperatingPoint:
    """Assemble the consistent pre-fault operating point.

    Kbus/Mbus voltages are re-evaluated through the sensitivity map so the
    state is exactly Kirchhoff-consistent in model arithmetic; the residual
    against the raw power-flow voltages is recorded (and should sit at the
    power-flow tolerance).
    """
    e, delta = machine_angles(case, pf, model, mode)
    omega = np.zeros(model.ni)
    xw, yw = to_loss_frame(e, delta, np.array([m.gamma for m in model.machines]))
    w_mach = np.concatenate([xw, yw])

    wtilde = np.zeros(2 * model.nd)
    for j, fl in enumerate(model.freq_loads):
        v_t = pf.voltage(fl.bus)
        i_inj = np.conj(complex(-fl.d0, 0.0) / v_t)
        v_int = v_t + i_inj / fl.link_y
        wtilde[j] = v_int.real
        wtilde[model.nd + j] = v_int.imag

    w_full = stack_sources(w_mach, wtilde)
    v_k_c, v_m_c = vmap.voltages_complex(w_full)

    resid = 0.0
    for bus in model.kbuses:
        resid = max(resid, abs(v_k_c[model.k_index(bus)] - pf.voltage(bus)))
    for bus in model.mbuses:
        if bus in pf.bus_index:
            resid = max(resid, abs(v_m_c[model.mbuses.index(bus)] - pf.voltage(bus)))

    p, q = electrical_power(model, e, delta, v_k_c)
    return OperatingPoint(delta=delta, omega=omega, e=e, w=w_full,
                          v_k=v_k_c, v_m=v_m_c, p=p, q=q, pmech=p.copy(),
                          consistency=resid)


def apply_disturbance(model: NetworkModel, d: Disturbance) -> NetworkModel:
    """Return a new NetworkModel with one disturbance applied."""
    known = set(model.kbuses) | set(model.mbuses)
    if d.kind == "load-scale":
        if d.bus not in known:
            raise CaseValidationError(f"load-scale at unknown bus {d.bus!r}")
        ls = model.load_set
        scale = lambda entries: tuple(
            (b, i0 * d.factor, y0 * d.factor) if b == d.bus else (b, i0, y0)
            for b, i0, y0 in entries)
        if not any(b == d.bus for b, _, _ in ls.constant_ci + ls.remaining):
            raise CaseValidationError(f"no scalable load at bus {d.bus!r}")
        new_loads = replace(ls, constant_ci=scale(ls.constant_ci),
                            remaining=scale(ls.remaining))
        return replace(model, load_set=new_loads)
    if d.kind == "fault":
        if d.bus not in known:
            raise CaseValidationError(f"fault at unknown bus {d.bus!r}")
        return replace(model, fault_shunts=model.fault_shunts + ((d.bus, d.fault_y),))
    if d.kind == "clear-fault":
        kept = tuple(fs for fs in model.fault_shunts if fs[0] != d.bus)
        if len(kept) == len(model.fault_shunts):
            raise CaseValidationError(f"no fault to clear at bus {d.bus!r}")
        return replace(model, fault_shunts=kept)
    if d.kind == "line-open":
        origin = (d.from_bus, d.to_bus)
        rev = (d.to_bus, d.from_bus)
        kept = tuple(br for br in model.branches if br.origin not in (origin, rev))
        if len(kept) == len(model.branches):
            raise CaseValidationError(f"no closed line {d.from_bus}-{d.to_bus}")
        shunts = tuple(s for s in model.extra_shunts if s[2] not in (origin, rev))
        live = {br.from_node for br in kept} | {br.to_node for br in kept}
        mbuses = tuple(b for b in model.mbuses
                       if not (b.startswith("m:") and b not in live))
        return replace(model, branches=kept, mbuses=mbuses, extra_shunts=shunts)
    raise CaseValidationError(f"unknown disturbance kind {d.kind!r}")


def disturbed_grid(model: NetworkModel, events,
                   allow_singular: bool = False):
    """Apply a batch of simultaneous events and rebuild the reductions."""
    for d in events:
        model = apply_disturbance(model, d)
    part = partition_admittance(model)
    vmap = reduce_to_sensitivities(part, model, allow_singular=allow_singular)
    return model, part, vmap


def speed_coupling_matrix(omega: np.ndarray) -> np.ndarray:
    """J = [[0, diag(w)], [-diag(w), 0]]; dw/dt at the switch is -J w."""
    ni = omega.size
    j = np.zeros((2 * ni, 2 * ni))
    j[:ni, ni:] = np.diag(omega)
    j[ni:, :ni] = -np.diag(omega)
    return j


@dataclass(frozen=True)
class InitialState:
    """State vector and frozen observation values at t = t0+."""
    z0: np.ndarray           # (4NI + 2ND,) = [w_I; dw_I/dt; wtilde]
    j: np.ndarray            # speed coupling matrix
    o0: np.ndarray           # frozen per-machine observation values
    o0_load: np.ndarray      # frozen values for freq/time-dependent loads
    delta: np.ndarray
    omega: np.ndarray
    e: np.ndarray
    e_load: np.ndarray       # pseudo-source magnitudes |wtilde| at t0+
    pmech: np.ndarray
    v_k: np.ndarray          # complex Kbus voltages at t0+
    v_m: np.ndarray
    islanded: bool = False

    @property
    def ni(self):
        return self.delta.size

    def w(self):
        return self.z0[:2 * self.ni]

    def dw(self):
        return self.z0[2 * self.ni:4 * self.ni]

    def wtilde(self):
        return self.z0[4 * self.ni:]


def post_disturbance_state(pre, model: NetworkModel,
                           vmap: VoltageMap) -> InitialState:
    """State immediately after a disturbance.

    Rotor angle and speed carry over unchanged (the electrical power step
    has finite height, so its integral over the switching instant is
    zero); bus voltages re-solve on the disturbed network with the sources
    frozen; the per-machine observation values are re-frozen at the new
    voltages. ``pre`` is an OperatingPoint or MachineState.
    """
    if isinstance(pre, OperatingPoint):
        pre = MachineState.from_operating_point(pre)
    gam = np.array([m.gamma for m in model.machines])
    xw, yw = to_loss_frame(pre.e, pre.delta, gam)
    w_mach = np.concatenate([xw, yw])
    wtilde = pre.wtilde
    w_full = stack_sources(w_mach, wtilde)
    v_k, v_m = vmap.voltages(w_full)
    nk = model.nk
    v_k_c = v_k[:nk] + 1j * v_k[nk:]
    nm = model.nm
    v_m_c = v_m[:nm] + 1j * v_m[nm:]

    j = speed_coupling_matrix(pre.omega)
    dw = -j @ w_mach
    z0 = np.concatenate([w_mach, dw, wtilde])

    o0 = reactive_coupling(model, w_mach, v_k) / np.array(
        [m.m for m in model.machines]) + pre.omega ** 2

    nd = model.nd
    o0_load = np.zeros(nd)
    e_load = np.ones(nd)
    for jdx, fl in enumerate(model.freq_loads):
        k = model.k_index(fl.bus)
        xj, yj = wtilde[jdx], wtilde[nd + jdx]
        e_load[jdx] = math.hypot(xj, yj)
        o0_load[jdx] = fl.y_mag * (xj * v_k[k] + yj * v_k[nk + k]) / fl.mref
    return InitialState(z0=z0, j=j, o0=o0, o0_load=o0_load,
                        delta=pre.delta.copy(), omega=pre.omega.copy(),
                        e=pre.e.copy(), e_load=e_load, pmech=pre.pmech.copy(),
                        v_k=v_k_c, v_m=v_m_c, islanded=vmap.islanded)
