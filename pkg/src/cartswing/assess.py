"""Stability classification and the two baseline certificates.

The eigenvalue-based classifier grades a fitted solution into four types:
stable (no growing content), operationally stable with slow growth,
operationally stable because the growing modes stay small inside the study
window, and unstable (loss of synchronism inside the window, taken as a
center-of-inertia-relative rotor excursion beyond pi).

The baselines certify, never condemn: the coupled-oscillator check issues
a certificate when the post-disturbance phase spread stays under the
cohesiveness threshold; the direct method compares the energy at the
evaluation state against the closest unstable equilibrium of the lossless
fixed-voltage landscape. Absent a certificate the verdict is undetermined.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .analytic import AnalyticSolution, evaluate_many
from .errors import EigenError, NoEquilibriumError

RE_ZERO_TOL = 1e-9      # eigenvalue real parts below this count as non-positive
THETA_ZERO_TOL = 1e-12  # coefficient norm below this counts as no excitation
PI_EXCURSION = math.pi


@dataclass(frozen=True)
class CoiFrame:
    delta_coi: float
    omega_coi: float
    m_total: float
    delta_rel: np.ndarray
    omega_rel: np.ndarray


def coi_frame(m, delta, omega) -> CoiFrame:
    m = np.asarray(m, float)
    delta = np.asarray(delta, float)
    omega = np.asarray(omega, float)
    mt = m.sum()
    dc = float(np.dot(m, delta) / mt)
    wc = float(np.dot(m, omega) / mt)
    return CoiFrame(delta_coi=dc, omega_coi=wc, m_total=mt,
                    delta_rel=delta - dc, omega_rel=omega - wc)


@dataclass(frozen=True)
class Verdict:
    type: str                  # "I" | "II" | "III" | "IV" | "undetermined"
    stable: bool
    lam_max_re: float
    dominant_coefficient: float
    horizon: float
    rationale: str

    @property
    def label(self):
        return "stable" if self.stable else "unstable"


def _excursion_crossing(model, sols, t0, t1, dt=0.01):
    """First time the COI-relative rotor excursion reaches pi, or None.

    sols: list of (t_start, t_end, solution) spans covering [t0, t1].
    Rotor angles are kept continuous across span joins before the
    center-of-inertia reference is removed.
    """
    m_vec = np.array([m.m for m in model.machines])
    gam = np.array([m.gamma for m in model.machines])
    ni = model.ni
    ts_all = np.arange(t0, t1 + dt / 2, dt)
    ref = None
    prev_end = None
    for t_lo, t_hi, sol in sols:
        mask = (ts_all >= t_lo - 1e-12) & (ts_all <= t_hi + 1e-12)
        ts = ts_all[mask]
        if ts.size == 0:
            continue
        z, _, _, _ = evaluate_many(sol, ts)
        delta = np.unwrap(np.arctan2(z[ni:2 * ni], z[:ni]), axis=1) + gam[:, None]
        if prev_end is not None:
            shift = np.round((prev_end - delta[:, 0]) / (2 * math.pi))
            delta = delta + 2 * math.pi * shift[:, None]
        prev_end = delta[:, -1]
        rel = delta - (m_vec @ delta)[None, :] / m_vec.sum()
        if ref is None:
            ref = rel[:, 0]
        exc = np.abs(rel - ref[:, None]).max(axis=0)
        hit = np.flatnonzero(exc >= PI_EXCURSION)
        if hit.size:
            return float(ts[hit[0]])
    return None


def classify(sol: AnalyticSolution, model, horizon: float = 10.0) -> Verdict:
    """Four-type classification of one fitted solution."""
    return classify_spans(model, [(sol.t_origin, sol.t_origin + horizon, sol)],
                          sol, horizon)


def is_quiescent(sol: AnalyticSolution) -> bool:
    """True when the fitted solution is a fixed point (no time-varying
    content in any mode, including neutral ones)."""
    rate = np.linalg.norm(sol.phi @ sol.spectrum.d, "fro")
    return rate <= THETA_ZERO_TOL * max(1.0, np.linalg.norm(sol.phi, "fro"))


def classify_spans(model, spans, final_sol: AnalyticSolution,
                   horizon: float) -> Verdict:
    """Classification over a composed (possibly re-initialized) run.

    The spectrum/coefficients come from the final fitted solution; the
    excursion test runs over the composed trajectory. "No disturbance" is
    detected as a quiescent fit: with an impedance-only network the
    constant part of the solution legitimately sits in neutral modes, so
    the time-derivative content, not the raw coefficient norm, is gated.
    """
    lam_max = final_sol.spectrum.max_real_part
    theta_norm = final_sol.theta_norm()
    dom = _dominant_coefficient(final_sol)
    if lam_max <= RE_ZERO_TOL:
        return Verdict("I", True, lam_max, dom, horizon,
                       "all eigenvalue real parts non-positive")
    if theta_norm <= THETA_ZERO_TOL or is_quiescent(final_sol):
        return Verdict("I", True, lam_max, dom, horizon,
                       "no disturbance content (coefficients are zero)")
    t0 = spans[0][0]
    t_pi = _excursion_crossing(model, spans, t0, t0 + horizon)
    if t_pi is not None:
        return Verdict("IV", False, lam_max, dom, horizon,
                       f"rotor excursion reached pi at t={t_pi:.2f}s")
    if 1.0 / lam_max >= horizon:
        return Verdict("II", True, lam_max, dom, horizon,
                       "growing modes too slow to matter inside the horizon")
    return Verdict("III", True, lam_max, dom, horizon,
                   "growing modes present but excursion stays bounded")


def _dominant_coefficient(sol: AnalyticSolution) -> float:
    """Frobenius weight of the most-positive-real mode's columns in Theta."""
    spec = sol.spectrum
    nr = spec.lam_real.size
    best, best_cols = None, None
    for i, lam in enumerate(spec.lam_real):
        if best is None or lam > best:
            best, best_cols = lam, [i]
    for p, (re, _) in enumerate(spec.lam_pairs):
        if best is None or re > best:
            best, best_cols = re, [nr + 2 * p, nr + 2 * p + 1]
    if best_cols is None:
        return 0.0
    return float(np.linalg.norm(sol.theta[:, best_cols]))


def tds_excursion_verdict(traj, m_vec, horizon=None):
    """Stable iff the COI-relative excursion stays under pi."""
    rel = traj.delta - (traj.delta @ m_vec)[:, None] / m_vec.sum()
    exc = np.abs(rel - rel[0][None, :]).max(axis=1)
    if horizon is not None:
        exc = exc[traj.t <= traj.t[0] + horizon]
    return bool(np.all(exc < PI_EXCURSION))


@dataclass(frozen=True)
class StructuralSplit:
    t_sys: np.ndarray
    t_op: np.ndarray
    bound: float | None       # Bauer-Fike radius, 2-norm
    kappa: float | None
    max_shift: float          # max over eig(T) of distance to nearest eig(T_sys)


def split_t(system) -> StructuralSplit:
    """T = T_sys - T_op: system-invariant vs operating-point parts.

    T_sys keeps the identity/damping blocks and the machine-constant
    diagonal (link susceptance scaled by E^2/M); everything tied to the
    operating point (observation values, dispatch, voltage sensitivities)
    lands in T_op. The eigenvalue shift induced by T_op is bounded through
    the diagonalizer of T_sys; a non-diagonalizable T_sys reports no bound.
    """
    ni, nd = system.ni, system.nd
    n = system.n
    t_sys = np.zeros((n, n))
    t_sys[:2 * ni, 2 * ni:4 * ni] = np.eye(2 * ni)
    t_sys[2 * ni:4 * ni, :2 * ni] = -system.l_sys
    t_sys[2 * ni:4 * ni, 2 * ni:4 * ni] = -np.diag(system.d_over_m)
    if nd:
        t_sys[4 * ni:, 4 * ni:] = -system.lt_sys
    t_op = t_sys - system.t

    bound = kappa = None
    try:
        lam_s, u = np.linalg.eig(t_sys)
        kappa_val = np.linalg.cond(u)
        if np.isfinite(kappa_val) and kappa_val < 1e12:
            kappa = float(kappa_val)
            bound = float(kappa_val * np.linalg.norm(t_op, 2))
    except np.linalg.LinAlgError:
        pass

    lam_t = np.linalg.eigvals(system.t)
    if bound is not None:
        shifts = [np.min(np.abs(lam_s - lt)) for lt in lam_t]
        max_shift = float(max(shifts))
    else:
        max_shift = math.nan
    return StructuralSplit(t_sys=t_sys, t_op=t_op, bound=bound, kappa=kappa,
                           max_shift=max_shift)


def bauer_fike_holds(t_sys, t_op, p=2):
    """Check every eigenvalue of T_sys - T_op against the perturbation disk."""
    lam_s, u = np.linalg.eig(t_sys)
    kappa = np.linalg.cond(u, p)
    radius = kappa * np.linalg.norm(t_op, p)
    lam_t = np.linalg.eigvals(t_sys - t_op)
    return all(np.min(np.abs(lam_s - lt)) <= radius * (1 + 1e-9) + 1e-12
               for lt in lam_t)


def eigen_condition(t_mat, lam, simple_tol=1e-8):
    """Condition s(lambda) = |u_L^H u_R| of a simple eigenvalue.

    Left/right eigenvectors are unit-normalized, so s lies in (0, 1]; the
    reciprocal is the sensitivity amplification. Raises for an eigenvalue
    that is not simple at the tolerance.
    """
    lam_all, vl, vr = scipy.linalg.eig(t_mat, left=True, right=True)
    dist = np.abs(lam_all - lam)
    order = np.argsort(dist)
    j = order[0]
    scale = max(1.0, float(np.abs(lam_all[j])))
    if dist.size > 1 and dist[order[1]] <= simple_tol * scale:
        raise EigenError(f"eigenvalue {lam} is not simple at tolerance "
                         f"{simple_tol:g} (condition undefined)")
    ul = vl[:, j] / np.linalg.norm(vl[:, j])
    ur = vr[:, j] / np.linalg.norm(vr[:, j])
    return float(np.abs(np.vdot(ul, ur)))


@dataclass(frozen=True)
class ComCheck:
    delta_max: float
    threshold: float
    sync_condition: float      # ||Ldag P||_{E,inf} on the coupling graph
    gamma_implied: float       # arcsin of the clipped condition value
    certificate: str           # "certified" | "undetermined"
    connected: bool


def com_check(model, init, threshold, include_machine_links=False) -> ComCheck:
    """Phase-cohesiveness certificate at a post-disturbance instant.

    delta_max is the largest voltage-angle difference across closed
    branches (optionally including the machine links, comparing rotor
    angles against terminal angles). The synchronization-condition value
    is evaluated on the lossless coupling graph with weights
    |y_ij| |v_i||v_j| and the real power injections; a disconnected graph
    is handled through the pseudoinverse with a warning.
    """
    nk, nm = model.nk, model.nm
    ang = {}
    vm = {}
    for bus in model.kbuses:
        v = init.v_k[model.k_index(bus)]
        ang[bus], vm[bus] = float(np.angle(v)), float(abs(v))
    for i, bus in enumerate(model.mbuses):
        v = init.v_m[i]
        ang[bus], vm[bus] = float(np.angle(v)), float(abs(v))

    dmax = 0.0
    for br in model.branches:
        dmax = max(dmax, abs(ang[br.from_node] - ang[br.to_node]))
    if include_machine_links:
        for i, mach in enumerate(model.machines):
            dmax = max(dmax, abs(init.delta[i] - ang[mach.bus]))

    nodes = list(model.kbuses) + list(model.mbuses) + \
        [m.name for m in model.machines]
    pos = {nm_: i for i, nm_ in enumerate(nodes)}
    nn = len(nodes)
    lap = np.zeros((nn, nn))
    adj = np.zeros((nn, nn))
    p_inj = np.zeros(nn)
    edges = []

    def couple(a, b, w):
        ia, ib = pos[a], pos[b]
        lap[ia, ia] += w
        lap[ib, ib] += w
        lap[ia, ib] -= w
        lap[ib, ia] -= w
        adj[ia, ib] = adj[ib, ia] = 1
        edges.append((ia, ib))

    for br in model.branches:
        couple(br.from_node, br.to_node,
               abs(br.y) * vm[br.from_node] * vm[br.to_node])
    for i, mach in enumerate(model.machines):
        couple(mach.name, mach.bus, mach.y_mag * init.e[i] * vm[mach.bus])
        p_inj[pos[mach.name]] += init.pmech[i]
    for bus, i0, y0 in model.load_set.constant_ci + model.load_set.remaining:
        v = vm[bus]
        p_inj[pos[bus]] -= (v * np.conj(i0 + y0 * v)).real

    n_comp, _ = connected_components(adj, directed=False)
    connected = n_comp == 1
    if not connected:
        warnings.warn(f"coupling graph has {n_comp} components; "
                      "synchronization condition per component", stacklevel=2)
    theta = np.linalg.pinv(lap) @ p_inj
    sync = float(max(abs(theta[a] - theta[b]) for a, b in edges))
    gamma_implied = float(np.arcsin(min(1.0, sync)))
    cert = "certified" if dmax <= threshold else "undetermined"
    return ComCheck(delta_max=float(dmax), threshold=float(threshold),
                    sync_condition=sync, gamma_implied=gamma_implied,
                    certificate=cert, connected=connected)


@dataclass(frozen=True)
class EnergyReport:
    v_cl: float
    v_cr: float
    v_margin: float
    kinetic_cl: float
    sep: np.ndarray            # stable equilibrium link angles
    ueps: tuple                # one UEP angle vector per machine
    closest_uep: int
    certificate: str           # "certified" | "undetermined"
    coi: CoiFrame


def dm_margin(model, init) -> EnergyReport:
    """Direct-method energy margin at an evaluation state.

    Applies the baseline's own terms: lossless couplings with fixed
    terminal magnitudes taken at the evaluation instant. Each machine sees
    the single-link landscape -p mu - pmax cos mu; the critical energy is
    the potential at the closest of the per-machine neighboring unstable
    equilibria; kinetic energy is measured in the inertia-weighted frame.
    """
    m_vec = np.array([m.m for m in model.machines])
    e = init.e
    ni = model.ni
    pmax = np.empty(ni)
    p_acc = np.empty(ni)
    mu_cl = np.empty(ni)
    for i, mach in enumerate(model.machines):
        vk = init.v_k[model.k_index(mach.bus)]
        pmax[i] = mach.y_mag * e[i] * abs(vk)
        p_acc[i] = init.pmech[i] - mach.g_ii * e[i] ** 2
        mu_cl[i] = init.delta[i] - float(np.angle(vk))
    if np.any(np.abs(p_acc) > pmax):
        bad = int(np.argmax(np.abs(p_acc) - pmax))
        raise NoEquilibriumError(
            f"machine {model.machines[bad].name}: |p|={abs(p_acc[bad]):.3f} "
            f"exceeds coupling {pmax[bad]:.3f}, no equilibrium")

    mu_s = np.arcsin(p_acc / pmax)

    def pe(mu):
        return float(-(p_acc * mu).sum() - (pmax * np.cos(mu)).sum())

    ueps = []
    for j in range(ni):
        mu_u = mu_s.copy()
        mu_u[j] = math.copysign(math.pi, p_acc[j] if p_acc[j] != 0 else 1.0) - mu_s[j]
        ueps.append(mu_u)
    pe_ueps = [pe(mu) for mu in ueps]
    closest = int(np.argmin(pe_ueps))
    v_cr = pe_ueps[closest]

    coi = coi_frame(m_vec, init.delta, init.omega)
    ke = 0.5 * float((m_vec * coi.omega_rel ** 2).sum())
    v_cl = ke + pe(mu_cl)
    margin = v_cr - v_cl
    return EnergyReport(v_cl=v_cl, v_cr=v_cr, v_margin=margin, kinetic_cl=ke,
                        sep=mu_s, ueps=tuple(ueps), closest_uep=closest,
                        certificate="certified" if margin > 0 else "undetermined",
                        coi=coi)


def dm_dynamics(pmax, p_acc, m_vec, d_vec, theta_ref):
    """Lossless fixed-terminal swing model used by the energy baseline.

    Returns (rhs, energy): rhs for z = [delta; omega], and the energy
    function whose derivative along trajectories is -sum D omega^2.
    """
    pmax = np.asarray(pmax, float)
    p_acc = np.asarray(p_acc, float)
    m_vec = np.asarray(m_vec, float)
    d_vec = np.asarray(d_vec, float)
    theta_ref = np.asarray(theta_ref, float)
    n = pmax.size

    def rhs(t, z):
        delta, omega = z[:n], z[n:]
        mu = delta - theta_ref
        acc = (p_acc - pmax * np.sin(mu) - d_vec * omega) / m_vec
        return np.concatenate([omega, acc])

    def energy(z):
        delta, omega = z[:n], z[n:]
        mu = delta - theta_ref
        return float(0.5 * (m_vec * omega ** 2).sum()
                     - (p_acc * mu).sum() - (pmax * np.cos(mu)).sum())

    return rhs, energy
