"""Report rendering and file export for scenario runs.

Data files (trajectories, event log) are deterministic for a given
configuration: fixed column orders, no timestamps. The human-readable
report carries wall-clock timings for qualitative comparison only.
"""

from __future__ import annotations

import os

from .trajectory import export_trajectory_path


def render_report_text(report) -> str:
    lines = []
    lines.append(f"scenario: {report.scenario}")
    lines.append(f"case: {report.case_path}")
    lines.append(f"horizon: {report.horizon} s")
    lines.append("stages:")
    for t, events in report.stages:
        if not events:
            lines.append(f"  t={t:g}s  (pre-disturbance steady state)")
        else:
            summary = "; ".join(_event_summary(d) for d in events)
            lines.append(f"  t={t:g}s  {summary}")
    lines.append("")
    lines.append(f"{'method':10s} {'verdict':14s} {'wall_s':>8s}  detail")
    for r in report.rows():
        lines.append(f"{r.method:10s} {r.verdict:14s} {r.wall_s:8.3f}  {r.detail}")
    an = report.results.get("analytic")
    if an is not None:
        lines.append("")
        lines.append(f"validity boundary events: {len(an.events)}")
        trig = [e.trigger for e in an.events]
        lines.append(f"  magnitude-drift: {trig.count('magnitude-drift')}  "
                     f"t-drift: {trig.count('t-drift')}")
        lines.append(f"O1 threshold crossings (signal): {an.o1_crossings}")
    tds = report.results.get("tds")
    if an is not None and tds is not None:
        faster = "analytic" if an.wall_s < tds.wall_s else "tds"
        lines.append(f"wall-clock comparison: analytic {an.wall_s:.3f}s vs "
                     f"tds {tds.wall_s:.3f}s ({faster} faster; timings are "
                     "machine-dependent, not asserted)")
    if report.manifest:
        lines.append("")
        lines.append("files:")
        for f in report.manifest:
            lines.append(f"  {f}")
    lines.append("")
    return "\n".join(lines)


def _event_summary(d):
    if d.kind == "load-scale":
        return f"load-scale bus={d.bus} factor={d.factor:g}"
    if d.kind == "fault":
        return f"fault bus={d.bus} y={d.fault_y:g}"
    if d.kind == "clear-fault":
        return f"clear-fault bus={d.bus}"
    return f"line-open {d.from_bus}-{d.to_bus}"


def render_event_log(events) -> str:
    lines = ["# validity-event-log 1",
             "tau\ttrigger\tgate_value\teps_at_tau\tdelta_con_before\t"
             "g_residual_before\tg_residual_after\tnewton_iterations"]
    for e in events:
        lines.append("\t".join([
            repr(float(e.tau)), e.trigger, repr(float(e.gate_value)),
            repr(float(e.eps_at_tau)), repr(float(e.delta_con_before)),
            repr(float(e.residual_g_before)), repr(float(e.residual_g_after)),
            str(e.newton_iterations)]))
    lines.append("")
    return "\n".join(lines)


def write_outputs(report, out_dir, plots=True) -> list:
    """Write report, trajectories, event log and figures; returns filenames."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = []
    for r in report.rows():
        if r.trajectory is not None:
            path = os.path.join(out_dir, f"trajectory_{r.method}.tsv")
            export_trajectory_path(r.trajectory, path)
            manifest.append(path)
        if r.events:
            path = os.path.join(out_dir, "events.log")
            with open(path, "w") as fh:
                fh.write(render_event_log(r.events))
            manifest.append(path)
    if plots:
        from .plots import render_trajectory_figure
        for r in report.rows():
            if r.trajectory is not None:
                path = os.path.join(out_dir, f"figure_{r.method}.png")
                render_trajectory_figure(r.trajectory, path,
                                         events=r.events or None)
                manifest.append(path)
    report.manifest = manifest
    path = os.path.join(out_dir, "report.txt")
    with open(path, "w") as fh:
        fh.write(render_report_text(report))
    manifest.append(path)
    return manifest
