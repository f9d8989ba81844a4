"""Command-line interface: analyze / export / compare.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import os
import sys

import click

from .errors import InputError, NumericalError
from .report import render_report_text, write_outputs
from .scenario import ScenarioConfig, run_scenario
from .tds import TdsConfig
from .trajectory import compare_trajectories, export_trajectory_path
from .validity import ValidityConfig


def _common(f):
    f = click.option("--case", "case_path", required=True,
                     type=click.Path(exists=True), help="case file")(f)
    f = click.option("--disturbances", "dist_path", default=None,
                     type=click.Path(exists=True), help="disturbance script")(f)
    f = click.option("--t-end", default=10.0, show_default=True,
                     help="study horizon, s")(f)
    f = click.option("--dt", default=0.01, show_default=True,
                     help="reference-simulation step, s")(f)
    f = click.option("--delta-e", default=0.10, show_default=True,
                     help="magnitude-drift threshold")(f)
    f = click.option("--delta-t", default=0.01, show_default=True,
                     help="relative T-error threshold")(f)
    f = click.option("--sample-dt", default=0.01, show_default=True,
                     help="output sampling step, s")(f)
    f = click.option("--lossless", is_flag=True,
                     help="zero series resistances before the study")(f)
    f = click.option("--no-reinit", is_flag=True,
                     help="disable consistent re-initialization")(f)
    f = click.option("--com-threshold", default=None, type=float,
                     help="phase-cohesiveness threshold, rad")(f)
    return f


def _config(case_path, dist_path, t_end, dt, delta_e, delta_t, sample_dt,
            lossless, no_reinit, com_threshold, methods, out_dir=None,
            plots=True):
    return ScenarioConfig(
        case_path=case_path, disturbance_path=dist_path, methods=methods,
        horizon=t_end,
        validity=ValidityConfig(delta_e=delta_e, delta_t=delta_t),
        tds=TdsConfig(dt=dt, t_end=t_end), out_dir=out_dir,
        sample_dt=sample_dt, lossless=lossless, reinit=not no_reinit,
        com_threshold=com_threshold, plots=plots)


@click.group()
def main():
    """Transient-stability toolkit: closed-form swing solutions with
    validity monitoring, plus reference baselines."""


@main.command()
@_common
@click.option("--method", "methods", multiple=True,
              type=click.Choice(["analytic", "tds", "dm", "com"]),
              help="methods to run (default: all)")
@click.option("--out", "out_dir", default="out", show_default=True,
              help="output directory")
@click.option("--no-plots", is_flag=True, help="skip figure rendering")
def analyze(case_path, dist_path, t_end, dt, delta_e, delta_t, sample_dt,
            lossless, no_reinit, com_threshold, methods, out_dir, no_plots):
    """Run a scenario and write the report, trajectories and figures."""
    cfg = _config(case_path, dist_path, t_end, dt, delta_e, delta_t,
                  sample_dt, lossless, no_reinit, com_threshold,
                  methods or ("analytic", "tds", "dm", "com"), out_dir,
                  plots=not no_plots)
    report = run_scenario(cfg)
    write_outputs(report, out_dir, plots=not no_plots)
    click.echo(render_report_text(report))


@main.command()
@_common
@click.option("--method", "method", default="analytic", show_default=True,
              type=click.Choice(["analytic", "tds"]))
@click.option("--out", "out_file", required=True, help="output table path")
def export(case_path, dist_path, t_end, dt, delta_e, delta_t, sample_dt,
           lossless, no_reinit, com_threshold, method, out_file):
    """Run one engine and export its trajectory table."""
    cfg = _config(case_path, dist_path, t_end, dt, delta_e, delta_t,
                  sample_dt, lossless, no_reinit, com_threshold, (method,))
    report = run_scenario(cfg)
    export_trajectory_path(report.results[method].trajectory, out_file)
    click.echo(f"wrote {out_file}")


@main.command()
@_common
@click.option("--out", "out_dir", default="out", show_default=True)
def compare(case_path, dist_path, t_end, dt, delta_e, delta_t, sample_dt,
            lossless, no_reinit, com_threshold, out_dir):
    """Run both engines and report their discrepancies."""
    cfg = _config(case_path, dist_path, t_end, dt, delta_e, delta_t,
                  sample_dt, lossless, no_reinit, com_threshold,
                  ("analytic", "tds"), out_dir)
    report = run_scenario(cfg)
    a = report.results["analytic"].trajectory
    b = report.results["tds"].trajectory
    disc = compare_trajectories(a, b)
    os.makedirs(out_dir, exist_ok=True)
    export_trajectory_path(a, os.path.join(out_dir, "trajectory_analytic.tsv"))
    export_trajectory_path(b, os.path.join(out_dir, "trajectory_tds.tsv"))
    from .plots import render_comparison_figure
    render_comparison_figure(a, b, os.path.join(out_dir, "figure_compare.png"))
    for name in ("delta", "omega", "vmag"):
        q = getattr(disc, name)
        click.echo(f"{name:6s} max|diff|={q.max_abs:.6f} "
                   f"mean={q.mean_abs:.6f} at t={q.t_at_max:.3f}s")


def run():
    try:
        main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except InputError as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(1)
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(2)
    sys.exit(0)


if __name__ == "__main__":
    run()
