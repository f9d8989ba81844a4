"""Network model: bus taxonomy, admittance partition, voltage sensitivities.

The grid is rebuilt around three node roles:

* internal source nodes, one per synchronous machine (generators and
  induction-machine loads) and one per standalone frequency/time-dependent
  load; each hangs radially off its terminal bus through the machine-link
  admittance,
* terminal buses that host at least one source node,
* all remaining buses, including midpoint nodes inserted to split any
  branch that would directly join two terminal buses.

With that structure the block between internal and remaining nodes is
identically zero, and the terminal/remaining voltages are an affine map of
the stacked loss-frame internal voltages:

    (v_K; v_M) = [H_K; H_M] (x; y) + (v_K_off; v_M_off)

Real stacking is all-real-then-all-imaginary throughout.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .caseio import RawCase
from .errors import (CaseValidationError, SingularNetworkError,
                     StructuralError, TopologyError)

IBUS = "ibus"
KBUS = "kbus"
MBUS = "mbus"

DEFAULT_MREF = 1.0          # reference inertia assigned to freq/time loads
DEFAULT_FREQ_LINK_B = -10.0  # link susceptance for a standalone freq load


def link_polar(y: complex):
    """Magnitude and loss angle of a machine-link admittance.

    The loss angle is measured from the purely inductive direction, so a
    lossless link (g = 0, b < 0) has angle zero and a resistive component
    tilts it positive.
    """
    return abs(y), cmath.phase(y) + math.pi / 2.0


@dataclass(frozen=True)
class Machine:
    """Second-order source node (generator or induction-machine load)."""
    name: str
    bus: str              # terminal bus id
    m: float
    d: float              # case damping; model stores d_eff separately
    link_y: complex
    e_set: float          # case-file internal voltage magnitude
    pmech: float

    @property
    def y_mag(self):
        return link_polar(self.link_y)[0]

    @property
    def gamma(self):
        return link_polar(self.link_y)[1]

    @property
    def g_ii(self):
        return self.link_y.real

    @property
    def b_ii(self):
        return self.link_y.imag


@dataclass(frozen=True)
class FreqLoad:
    """First-order source node for a standalone frequency/time load."""
    name: str
    bus: str
    m_rate: float         # rate coefficient, p.u. s
    d0: float             # constant part, p.u.
    mref: float           # assigned reference inertia
    link_y: complex

    @property
    def y_mag(self):
        return link_polar(self.link_y)[0]

    @property
    def gamma(self):
        # loss frame for load pseudo-nodes is the identity rotation
        return 0.0

    @property
    def g_ii(self):
        return self.link_y.real

    @property
    def pmech(self):
        return -self.d0


@dataclass(frozen=True)
class LoadSet:
    """Loads split into the four modeling categories.

    induction entries become Machines; freq entries either merge into a
    co-located machine's damping or become FreqLoads; constant_ci holds
    (bus, i_cc, y_ci); remaining holds (bus, i0, y0) from linearization at
    the operating voltage.
    """
    induction: tuple = ()
    freq: tuple = ()                 # FreqLoad entries (standalone only)
    merged_damping: tuple = ()       # (bus, m_rate) folded into machine D
    constant_ci: tuple = ()          # (bus, i_cc, y_ci)
    remaining: tuple = ()            # (bus, i0, y0)

    def shunt_current(self, bus):
        """Total (i0, y0) pair drawn at a bus by category III/IV loads."""
        i0 = 0.0 + 0.0j
        y0 = 0.0 + 0.0j
        for b, icc, yci in self.constant_ci:
            if b == bus:
                i0 += icc
                y0 += yci
        for b, i0l, y0l in self.remaining:
            if b == bus:
                i0 += i0l
                y0 += y0l
        return i0, y0


def categorize_loads(case: RawCase, v_op: dict) -> LoadSet:
    """Split case loads into the four categories.

    Parameters
    ----------
    case : RawCase
    v_op : dict bus id -> complex operating voltage; the Taylor point for
        category IV and the conversion point for category III loads given
        as consumed (p, q).
    """
    induction, freq, merged, const_ci, remaining = [], [], [], [], []
    machine_buses = {g.bus for g in case.generators}
    machine_buses |= {l.bus for l in case.loads if l.category == "induction"}

    for idx, load in enumerate(case.loads):
        s = complex(load.param("p", 0.0), load.param("q", 0.0))
        if load.category == "induction":
            induction.append(Machine(
                name=f"ind{idx}:{load.bus}", bus=load.bus,
                m=load.param("M"), d=load.param("D", 0.0),
                link_y=complex(load.param("g", 0.0), load.param("b", DEFAULT_FREQ_LINK_B)),
                e_set=load.param("E", 1.0), pmech=-load.param("p", 0.0)))
        elif load.category == "freq":
            if load.bus in machine_buses:
                merged.append((load.bus, load.param("m")))
            else:
                freq.append(FreqLoad(
                    name=f"freq{idx}:{load.bus}", bus=load.bus,
                    m_rate=load.param("m"), d0=load.param("d0", 0.0),
                    mref=load.param("mref", DEFAULT_MREF),
                    link_y=complex(load.param("linkg", 0.0),
                                   load.param("linkb", DEFAULT_FREQ_LINK_B))))
        else:
            if s == 0:
                continue
            v0 = v_op.get(load.bus)
            if v0 is None or v0 == 0:
                raise CaseValidationError(
                    f"load at {load.bus}: no operating voltage for conversion")
            if load.category == "impedance":
                const_ci.append((load.bus, 0.0 + 0.0j, s.conjugate() / abs(v0) ** 2))
            elif load.category == "current":
                const_ci.append((load.bus, (s / v0).conjugate(), 0.0 + 0.0j))
            elif load.category == "power":
                # first-order fit of i = conj(s)/conj(v) about v0 along |v|
                vm = abs(v0)
                phase = v0 / vm
                y0 = -s.conjugate() / vm ** 2
                i0 = 2.0 * s.conjugate() * phase / vm
                remaining.append((load.bus, i0, y0))
    return LoadSet(tuple(induction), tuple(freq), tuple(merged),
                   tuple(const_ci), tuple(remaining))


@dataclass(frozen=True)
class ExtBranch:
    """Branch of the extended network. Tags remember the original line."""
    from_node: str
    to_node: str
    y: complex
    bsh: float
    origin: tuple | None = None    # (from, to) of the original branch


@dataclass(frozen=True)
class NetworkModel:
    """The rebuilt grid with role maps and per-source link data."""
    case: RawCase
    machines: tuple              # Machine entries (generators + induction)
    d_eff: tuple                 # per-machine damping incl. merged freq loads
    freq_loads: tuple            # FreqLoad entries
    kbuses: tuple                # terminal bus ids, deterministic order
    mbuses: tuple                # remaining bus ids incl. inserted midpoints
    branches: tuple              # ExtBranch entries (K/M side only)
    load_set: LoadSet
    fault_shunts: tuple = ()     # (bus, y) entries added by fault events
    extra_shunts: tuple = ()     # (bus, y) entries preserving split charging

    @property
    def ni(self):
        return len(self.machines)

    @property
    def nd(self):
        return len(self.freq_loads)

    @property
    def nk(self):
        return len(self.kbuses)

    @property
    def nm(self):
        return len(self.mbuses)

    @property
    def nb_original(self):
        return len(self.case.buses)

    @property
    def nb_model(self):
        return self.nk + self.nm + self.ni + self.nd

    @property
    def sources(self):
        return self.machines + self.freq_loads

    def role(self, node):
        if node in self.kbuses:
            return KBUS
        if node in self.mbuses:
            return MBUS
        return IBUS

    def k_index(self, bus):
        return self.kbuses.index(bus)

    def km_index(self, bus):
        """Index of a bus in the stacked (K, M) ordering."""
        if bus in self.kbuses:
            return self.kbuses.index(bus)
        return self.nk + self.mbuses.index(bus)

    def kbus_of_source(self, s):
        return self.k_index(s.bus)

    def gamma_vector(self):
        return np.array([s.gamma for s in self.sources])


def build_network_model(case: RawCase, loads: LoadSet | None = None) -> NetworkModel:
    """Classify buses, insert midpoint nodes, attach source nodes.

    ``loads`` may be passed pre-categorized; otherwise loads are categorized
    at the bus voltage setpoints (adequate for topology-only use; the
    steady-state driver re-categorizes at the solved operating point).
    """
    if loads is None:
        loads = categorize_loads(case, {b.id: complex(b.vset, 0.0) for b in case.buses})

    machines = [Machine(name=f"gen{i}:{g.bus}", bus=g.bus, m=g.m, d=g.d,
                        link_y=g.link_y, e_set=g.e, pmech=g.pmech)
                for i, g in enumerate(case.generators)]
    machines.extend(loads.induction)
    if not machines:
        raise CaseValidationError("case has no machines")

    merged = dict(loads.merged_damping)
    d_eff = tuple(m.d + merged.get(m.bus, 0.0) for m in machines)

    source_buses = {m.bus for m in machines} | {f.bus for f in loads.freq}

    degree = {b.id: 0 for b in case.buses}
    for br in case.branches:
        if br.status:
            degree[br.from_bus] += 1
            degree[br.to_bus] += 1
    for bus in sorted(source_buses):
        if degree[bus] == 0:
            raise TopologyError(f"machine terminal bus {bus!r} is isolated")

    kbuses = tuple(b.id for b in case.buses if b.id in source_buses)
    mbuses = [b.id for b in case.buses if b.id not in source_buses]

    branches = []
    extra_shunts = []
    for br in case.branches:
        if not br.status:
            continue
        origin = (br.from_bus, br.to_bus)
        if br.from_bus in source_buses and br.to_bus in source_buses:
            # split a terminal-terminal line: two series halves of doubled
            # admittance restore the original two-port; charging stays at
            # the original ends so the pi-model is preserved exactly
            mid = f"m:{br.from_bus}-{br.to_bus}"
            if mid in degree or mid in mbuses:
                mid = f"m:{br.from_bus}-{br.to_bus}#{len(mbuses)}"
            mbuses.append(mid)
            branches.append(ExtBranch(br.from_bus, mid, 2.0 * br.y, 0.0, origin))
            branches.append(ExtBranch(mid, br.to_bus, 2.0 * br.y, 0.0, origin))
            if br.bsh:
                extra_shunts.append((br.from_bus, 1j * br.bsh / 2.0, origin))
                extra_shunts.append((br.to_bus, 1j * br.bsh / 2.0, origin))
        else:
            branches.append(ExtBranch(br.from_bus, br.to_bus, br.y, br.bsh, origin))

    return NetworkModel(case=case, machines=tuple(machines), d_eff=d_eff,
                        freq_loads=loads.freq, kbuses=kbuses, mbuses=tuple(mbuses),
                        branches=tuple(branches), load_set=loads,
                        extra_shunts=tuple(extra_shunts))


@dataclass(frozen=True)
class PartitionedAdmittance:
    """Complex admittance blocks of the extended network.

    The K/M diagonal blocks carry the category III/IV load admittances
    already folded in; ``y0`` records that folded diagonal and ``i0_k`` /
    ``i0_m`` the constant load currents (current drawn by loads).
    """
    y_ii: np.ndarray
    y_ik: np.ndarray
    y_ki: np.ndarray
    y_kk: np.ndarray
    y_km: np.ndarray
    y_mk: np.ndarray
    y_mm: np.ndarray
    y0: np.ndarray
    i0_k: np.ndarray
    i0_m: np.ndarray

    @property
    def y_im(self):
        return np.zeros((self.y_ii.shape[0], self.y_mm.shape[0]), complex)

    def km_block(self):
        top = np.hstack([self.y_kk, self.y_km])
        bot = np.hstack([self.y_mk, self.y_mm])
        return np.vstack([top, bot])

    def i0(self):
        return np.concatenate([self.i0_k, self.i0_m])


def partition_admittance(model: NetworkModel,
                         loads: LoadSet | None = None) -> PartitionedAdmittance:
    """Assemble the partitioned admittance of the extended network."""
    loads = model.load_set if loads is None else loads
    nk, nm, ns = model.nk, model.nm, len(model.sources)
    km_nodes = list(model.kbuses) + list(model.mbuses)
    km_pos = {n: i for i, n in enumerate(km_nodes)}

    y_km_full = np.zeros((nk + nm, nk + nm), complex)
    y_src = np.zeros((ns, ns), complex)
    y_src_km = np.zeros((ns, nk + nm), complex)

    for br in model.branches:
        a, b = km_pos[br.from_node], km_pos[br.to_node]
        y_km_full[a, a] += br.y + 1j * br.bsh / 2.0
        y_km_full[b, b] += br.y + 1j * br.bsh / 2.0
        y_km_full[a, b] -= br.y
        y_km_full[b, a] -= br.y

    for b in model.case.buses:
        if b.id in km_pos and (b.gsh != 0.0 or b.bsh != 0.0):
            y_km_full[km_pos[b.id], km_pos[b.id]] += complex(b.gsh, b.bsh)
    for bus, y, _origin in model.extra_shunts:
        y_km_full[km_pos[bus], km_pos[bus]] += y
    for bus, y in model.fault_shunts:
        y_km_full[km_pos[bus], km_pos[bus]] += y

    for s_idx, src in enumerate(model.sources):
        k = km_pos[src.bus]
        y = src.link_y
        y_src[s_idx, s_idx] = y
        y_km_full[k, k] += y
        y_src_km[s_idx, k] = -y

    # fold category III/IV admittances into the K/M diagonal
    y0 = np.zeros(nk + nm, complex)
    i0 = np.zeros(nk + nm, complex)
    for n, node in enumerate(km_nodes):
        i0_n, y0_n = loads.shunt_current(node)
        y0[n] = y0_n
        i0[n] = i0_n
    y_aug = y_km_full + np.diag(y0)

    for n, node in enumerate(km_nodes):
        if np.all(y_aug[n] == 0.0) and np.all(y_src_km[:, n] == 0.0):
            raise StructuralError(f"floating bus {node!r}: all-zero admittance row")

    return PartitionedAdmittance(
        y_ii=y_src,
        y_ik=y_src_km[:, :nk],
        y_ki=y_src_km[:, :nk].T.copy(),
        y_kk=y_aug[:nk, :nk],
        y_km=y_aug[:nk, nk:],
        y_mk=y_aug[nk:, :nk],
        y_mm=y_aug[nk:, nk:],
        y0=y0,
        i0_k=i0[:nk],
        i0_m=i0[nk:])


def rotation_block(gamma: np.ndarray) -> np.ndarray:
    """Orthogonal block rotation mapping loss-frame (x; y) to true (vx; vy).

    Multiplication by exp(+j gamma) in real stacked form; its transpose
    maps back. Orthogonality: R.T @ R = I.
    """
    c, s = np.diag(np.cos(gamma)), np.diag(np.sin(gamma))
    return np.block([[c, -s], [s, c]])


@dataclass(frozen=True)
class VoltageMap:
    """Affine map from stacked loss-frame source voltages to bus voltages."""
    h_k: np.ndarray          # (2NK, 2NS) real
    h_m: np.ndarray          # (2NM, 2NS)
    v_k_off: np.ndarray      # (2NK,)
    v_m_off: np.ndarray      # (2NM,)
    r: np.ndarray            # (2NS, 2NS) block rotation, w -> v
    g_complex: np.ndarray    # (NK+NM, NS) complex map including the rotation
    c_complex: np.ndarray    # (NK+NM,) complex offset
    ni: int
    nd: int
    islanded: bool = False   # set when the K/M solve fell back to pinv

    @property
    def ns(self):
        return self.ni + self.nd

    def _cols(self, lo, hi):
        return np.r_[lo:hi, self.ns + lo:self.ns + hi]

    @property
    def h_ki(self):
        return self.h_k[:, self._cols(0, self.ni)]

    @property
    def h_mi(self):
        return self.h_m[:, self._cols(0, self.ni)]

    @property
    def h_kd(self):
        return self.h_k[:, self._cols(self.ni, self.ns)]

    @property
    def h_md(self):
        return self.h_m[:, self._cols(self.ni, self.ns)]

    def voltages(self, w_sources: np.ndarray):
        """Evaluate (v_K, v_M) real stacked vectors for stacked sources."""
        v_k = self.h_k @ w_sources + self.v_k_off
        v_m = self.h_m @ w_sources + self.v_m_off
        return v_k, v_m

    def voltages_complex(self, w_sources: np.ndarray):
        v_k, v_m = self.voltages(w_sources)
        nk = v_k.size // 2
        nm = v_m.size // 2
        return v_k[:nk] + 1j * v_k[nk:], v_m[:nm] + 1j * v_m[nm:]


def _real_stack(gc: np.ndarray):
    return np.block([[gc.real, -gc.imag], [gc.imag, gc.real]])


def reduce_to_sensitivities(part: PartitionedAdmittance,
                            model: NetworkModel,
                            allow_singular: bool = False) -> VoltageMap:
    """Eliminate the K/M network into the affine voltage map.

    Solves the load-augmented (K,M) system for unit source excitations:
    with loads drawing i0 + y0 v, Kirchhoff at the K/M nodes gives
    A v_KM = -Y_KMI v_I - i0 with A the augmented block matrix, hence
    v_KM = G v_I + c. The loss-frame rotation is absorbed so the map acts
    on (x; y) directly. The sign convention is pinned by the pre-fault
    consistency requirement (the steady state is ground truth).

    With ``allow_singular`` a singular system is solved in the least-squares
    sense (islanded components get their minimum-norm voltages) and the map
    is flagged, instead of raising.
    """
    a = part.km_block()
    nk = part.y_kk.shape[0]
    ns = len(model.sources)
    y_km_i = np.zeros((a.shape[0], ns), complex)
    y_km_i[:nk, :] = part.y_ki
    i0 = part.i0()
    rhs = np.hstack([-y_km_i, -i0[:, None]])

    islanded = False
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1e13:
        if not allow_singular:
            _, _, vh = np.linalg.svd(a)
            raise SingularNetworkError(
                f"singular K/M network (cond={cond:.3e}, islanded subnetwork)",
                null_direction=vh[-1].conj())
        sol = np.linalg.lstsq(a, rhs, rcond=1e-12)[0]
        islanded = True
    else:
        sol = np.linalg.solve(a, rhs)

    g = sol[:, :ns]
    c = sol[:, ns]
    gamma = model.gamma_vector()
    g_rot = g * np.exp(1j * gamma)[None, :]

    h = _real_stack(g_rot)
    # reorder rows from (K,M interleaved by re/im) to per-group stacking
    n_km = a.shape[0]
    k_rows = np.r_[0:nk, n_km:n_km + nk]
    m_rows = np.r_[nk:n_km, n_km + nk:2 * n_km]
    v_off = np.concatenate([c.real, c.imag])

    return VoltageMap(h_k=h[k_rows], h_m=h[m_rows],
                      v_k_off=v_off[k_rows], v_m_off=v_off[m_rows],
                      r=rotation_block(gamma),
                      g_complex=g_rot, c_complex=c,
                      ni=model.ni, nd=model.nd, islanded=islanded)


def build_grid(case: RawCase, v_op: dict | None = None):
    """Convenience pipeline: categorize -> model -> partition -> map."""
    if v_op is None:
        v_op = {b.id: complex(b.vset, 0.0) for b in case.buses}
    loads = categorize_loads(case, v_op)
    model = build_network_model(case, loads)
    part = partition_admittance(model)
    vmap = reduce_to_sensitivities(part, model)
    return model, part, vmap
