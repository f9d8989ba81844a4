"""Time-sampled trajectories, comparison, and delimited export.

Both solution engines emit the same structure so exports, comparisons and
plots are engine-agnostic. Export is a plain column-oriented text table:
header row naming every column, full double precision, no timestamps, so
identical runs are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ComparisonError


@dataclass
class Trajectory:
    t: np.ndarray            # strictly increasing sample times, s
    delta: np.ndarray        # (n, NI) rotor angles, rad (unwrapped)
    omega: np.ndarray        # (n, NI) speed deviations, rad/s
    vmag: np.ndarray         # (n, NK+NM) bus voltage magnitudes
    vang: np.ndarray         # (n, NK+NM) bus voltage angles, rad
    emag: np.ndarray         # (n, NI) internal voltage magnitudes |w|
    o: np.ndarray            # (n, NI) observation values O_i(t)
    o1: np.ndarray           # (n,) magnitude-drift metric
    eps: np.ndarray          # (n,) relative T-error
    bus_labels: tuple        # column labels for vmag/vang
    machine_labels: tuple
    provenance: str          # "analytic" | "tds"
    wtilde: np.ndarray | None = None
    divergent: np.ndarray | None = None

    def __post_init__(self):
        if self.t.size > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("trajectory time grid must be strictly increasing")

    @property
    def ni(self):
        return self.delta.shape[1]


def _interp_columns(tq, t, arr):
    return np.column_stack([np.interp(tq, t, arr[:, j])
                            for j in range(arr.shape[1])])


@dataclass(frozen=True)
class QuantityDiscrepancy:
    max_abs: float
    mean_abs: float
    t_at_max: float


@dataclass(frozen=True)
class DiscrepancyReport:
    delta: QuantityDiscrepancy
    omega: QuantityDiscrepancy
    vmag: QuantityDiscrepancy
    t_lo: float
    t_hi: float


def compare_trajectories(a: Trajectory, b: Trajectory,
                         t_lo: float | None = None,
                         t_hi: float | None = None) -> DiscrepancyReport:
    """Per-quantity max/mean absolute differences over the common window.

    The second trajectory is linearly interpolated onto the first one's
    samples inside the overlap.
    """
    lo = max(a.t[0], b.t[0]) if t_lo is None else max(t_lo, a.t[0], b.t[0])
    hi = min(a.t[-1], b.t[-1]) if t_hi is None else min(t_hi, a.t[-1], b.t[-1])
    if hi <= lo:
        raise ComparisonError(f"disjoint time ranges: [{a.t[0]}, {a.t[-1]}] vs "
                              f"[{b.t[0]}, {b.t[-1]}]")
    mask = (a.t >= lo) & (a.t <= hi)
    tq = a.t[mask]

    def against(name):
        xa = getattr(a, name)[mask]
        xb = _interp_columns(tq, b.t, getattr(b, name))
        if xa.shape[1] != xb.shape[1]:
            raise ComparisonError(f"{name}: column count mismatch")
        d = np.abs(xa - xb)
        flat = int(np.argmax(d))
        return QuantityDiscrepancy(max_abs=float(d.max()),
                                   mean_abs=float(d.mean()),
                                   t_at_max=float(tq[flat // d.shape[1]]))

    return DiscrepancyReport(delta=against("delta"), omega=against("omega"),
                             vmag=against("vmag"), t_lo=float(lo), t_hi=float(hi))


def export_trajectory(traj: Trajectory, fh) -> None:
    """Write the delimited table; floats use repr for bit round-trips."""
    if traj.t.size == 0:
        raise ValueError("cannot export an empty trajectory")
    cols = ["t"]
    cols += [f"delta:{m}" for m in traj.machine_labels]
    cols += [f"omega:{m}" for m in traj.machine_labels]
    cols += [f"vm:{b}" for b in traj.bus_labels]
    cols += [f"va:{b}" for b in traj.bus_labels]
    cols += [f"em:{m}" for m in traj.machine_labels]
    cols += [f"O:{m}" for m in traj.machine_labels]
    cols += ["O1", "eps"]
    fh.write(f"# trajectory-format 1 provenance={traj.provenance}\n")
    fh.write("\t".join(cols) + "\n")
    blocks = np.column_stack([traj.t, traj.delta, traj.omega, traj.vmag,
                              traj.vang, traj.emag, traj.o,
                              traj.o1, traj.eps])
    for row in blocks:
        fh.write("\t".join(repr(float(x)) for x in row) + "\n")


def export_trajectory_path(traj: Trajectory, path) -> None:
    try:
        with open(path, "w") as fh:
            export_trajectory(traj, fh)
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc}") from exc


def read_trajectory(fh) -> Trajectory:
    """Parse a table written by :func:`export_trajectory`."""
    head = fh.readline()
    if not head.startswith("# trajectory-format 1"):
        raise ComparisonError("not a trajectory table (missing format header)")
    provenance = head.strip().split("provenance=")[-1]
    cols = fh.readline().strip().split("\t")
    data = np.array([[float(x) for x in line.split("\t")]
                     for line in fh if line.strip()])
    if data.size == 0:
        raise ComparisonError("empty trajectory table")

    def group(prefix):
        labels = [c.split(":", 1)[1] for c in cols if c.startswith(prefix + ":")]
        idx = [i for i, c in enumerate(cols) if c.startswith(prefix + ":")]
        return labels, idx

    mlab, di = group("delta")
    _, oi = group("omega")
    blab, vmi = group("vm")
    _, vai = group("va")
    _, emi = group("em")
    _, obsi = group("O")
    return Trajectory(t=data[:, 0], delta=data[:, di], omega=data[:, oi],
                      vmag=data[:, vmi], vang=data[:, vai], emag=data[:, emi],
                      o=data[:, obsi], o1=data[:, cols.index("O1")],
                      eps=data[:, cols.index("eps")],
                      bus_labels=tuple(blab), machine_labels=tuple(mlab),
                      provenance=provenance)


def read_trajectory_path(path) -> Trajectory:
    with open(path) as fh:
        return read_trajectory(fh)
