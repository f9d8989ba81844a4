"""Figure rendering for scenario trajectories (four-panel layout)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_trajectory_figure(traj, path, events=None, delta_e=0.10,
                             dpi=130):
    """Rotor angles, terminal voltage magnitudes, observation values and
    internal-voltage magnitudes, with the drift threshold band and event
    markers."""
    fig, axs = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    (ax_d, ax_v), (ax_o, ax_e) = axs

    for j, lab in enumerate(traj.machine_labels):
        ax_d.plot(traj.t, traj.delta[:, j], label=lab)
    ax_d.set_ylabel(r"rotor angle $\delta$ (rad)")
    ax_d.legend(fontsize=8)

    nk = min(len(traj.bus_labels), traj.vmag.shape[1])
    for j in range(nk):
        ax_v.plot(traj.t, traj.vmag[:, j], lw=0.9)
    ax_v.set_ylabel("bus |V| (p.u.)")

    for j, lab in enumerate(traj.machine_labels):
        ax_o.plot(traj.t, traj.o[:, j], label=lab)
    ax_o.set_ylabel(r"observation $O_i(t)$")
    ax_o.set_xlabel("time (s)")

    e_nom = traj.emag[0]
    for j, lab in enumerate(traj.machine_labels):
        ax_e.plot(traj.t, traj.emag[:, j], label=lab)
        ax_e.axhline(e_nom[j] * (1 + delta_e), color="gray", ls=":", lw=0.6)
        ax_e.axhline(e_nom[j] * (1 - delta_e), color="gray", ls=":", lw=0.6)
    ax_e.set_ylabel("internal |w| (p.u.)")
    ax_e.set_xlabel("time (s)")

    if events:
        for e in events:
            for ax in (ax_d, ax_e):
                ax.axvline(e.tau, color="crimson", alpha=0.25, lw=0.6)

    for ax in axs.flat:
        ax.grid(ls="--", alpha=0.4)
    fig.suptitle(f"{traj.provenance} trajectory")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def render_comparison_figure(traj_a, traj_b, path, dpi=130):
    """Overlay rotor angles of two engines for a visual discrepancy check."""
    fig, ax = plt.subplots(figsize=(9, 5))
    for j, lab in enumerate(traj_a.machine_labels):
        ax.plot(traj_a.t, traj_a.delta[:, j], label=f"{traj_a.provenance}:{lab}")
    for j, lab in enumerate(traj_b.machine_labels):
        ax.plot(traj_b.t, traj_b.delta[:, j], "--",
                label=f"{traj_b.provenance}:{lab}")
    ax.set_xlabel("time (s)")
    ax.set_ylabel(r"rotor angle $\delta$ (rad)")
    ax.grid(ls="--", alpha=0.4)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
