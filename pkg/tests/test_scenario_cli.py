"""Scenario orchestration, report rendering, figures and the CLI."""

import os
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner

from cartswing.caseio import parse_case
from cartswing.cli import main as cli_main
from cartswing.report import render_report_text, write_outputs
from cartswing.scenario import ScenarioConfig, run_scenario
from cartswing.tds import TdsConfig
from cartswing.trajectory import read_trajectory_path
from cartswing.validity import ValidityConfig

from conftest import IEEE9_PATH, scenario_path


def _cfg(tmp_path, dist=None, methods=("analytic", "tds"), **kw):
    defaults = dict(case_path=IEEE9_PATH,
                    disturbance_path=scenario_path(dist) if dist else None,
                    methods=methods, horizon=kw.pop("horizon", 5.0),
                    validity=ValidityConfig(delta_t=0.002, max_events=150),
                    tds=TdsConfig(dt=0.01), lossless=True,
                    out_dir=str(tmp_path), plots=False)
    defaults.update(kw)
    return ScenarioConfig(**defaults)


def test_empty_script_steady_type_one(tmp_path, grid9):
    cfg = _cfg(tmp_path, dist=None, methods=("analytic", "tds", "dm", "com"))
    report = run_scenario(cfg, name="steady")
    an = report.results["analytic"]
    assert an.verdict == "stable"
    assert "type I" in an.detail
    traj = an.trajectory
    assert np.max(np.abs(traj.delta - traj.delta[0])) <= 1e-9
    assert set(report.results) == {"analytic", "tds", "dm", "com"}


def test_two_stage_cleared_fault(tmp_path):
    cfg = _cfg(tmp_path, dist="fault_cleared.dist", horizon=3.0)
    report = run_scenario(cfg, name="cleared")
    stage_times = [t for t, _ in report.stages]
    assert stage_times == [0.0, 1.0, 1.1]
    kinds = [tuple(d.kind for d in evs) for _, evs in report.stages]
    assert kinds[1] == ("fault",)
    assert set(kinds[2]) == {"clear-fault", "line-open"}
    an = report.results["analytic"].trajectory
    # the junction samples exist exactly once
    assert np.all(np.diff(an.t) > 0)


def test_disturbance_outside_horizon_rejected(tmp_path):
    cfg = _cfg(tmp_path, dist="fault_cleared.dist", horizon=1.05)
    from cartswing.errors import CaseValidationError
    with pytest.raises(CaseValidationError, match="outside"):
        run_scenario(cfg)


def test_report_rows_and_files(tmp_path):
    cfg = _cfg(tmp_path, dist="loss10.dist",
               methods=("analytic", "tds", "dm", "com"), plots=True)
    report = run_scenario(cfg, name="loss10")
    files = write_outputs(report, str(tmp_path), plots=True)
    text = render_report_text(report)
    for method in ("analytic", "tds", "dm", "com"):
        assert method in text
    assert "wall-clock comparison" in text
    names = {os.path.basename(f) for f in files}
    assert {"report.txt", "trajectory_analytic.tsv", "trajectory_tds.tsv",
            "figure_analytic.png", "figure_tds.png"} <= names
    for f in files:
        assert os.path.getsize(f) > 0
    traj = read_trajectory_path(os.path.join(tmp_path, "trajectory_analytic.tsv"))
    assert traj.provenance == "analytic"


def test_exports_are_deterministic(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        cfg = _cfg(out, dist="loss10.dist", horizon=3.0)
        report = run_scenario(cfg)
        write_outputs(report, str(out), plots=False)
    for name in ("trajectory_analytic.tsv", "trajectory_tds.tsv", "events.log"):
        pa, pb = out_a / name, out_b / name
        if pa.exists() or pb.exists():
            assert pa.read_bytes() == pb.read_bytes(), name


def test_freq_load_block_in_full_run(tmp_path):
    """A standalone frequency-dependent load adds the first-order block."""
    text = """
case-format 1
base-mva 100.0
[buses]
a slack 0 0 1.02
b pq 0 0 1.0
c pq 0 0 1.0
[branches]
a b 0.0 -9.0 0.0 1
b c 0.0 -7.0 0.0 1
[generators]
a 1.2 0.03 0.0 -9.0 1.04 0.55
[loads]
c freq m=0.08 d0=0.25 mref=1.0 linkb=-6.0
c impedance p=0.3 q=0.1
"""
    case_file = tmp_path / "freq.case"
    case_file.write_text(text)
    dist_file = tmp_path / "d.dist"
    dist_file.write_text("dist-format 1\n0.5 load-scale bus=c factor=0.8\n")
    cfg = ScenarioConfig(case_path=str(case_file),
                         disturbance_path=str(dist_file),
                         methods=("analytic", "tds"), horizon=2.0,
                         validity=ValidityConfig(delta_t=0.01),
                         tds=TdsConfig(dt=0.005), plots=False)
    report = run_scenario(cfg)
    an = report.results["analytic"]
    tds = report.results["tds"]
    assert an.trajectory is not None and tds.trajectory is not None
    # ND = 1: the assembled system is (4*1 + 2*1) square
    from cartswing.network import build_network_model, categorize_loads
    from cartswing.steady import solve_power_flow
    case = parse_case(text, "<freq>")
    pf = solve_power_flow(case)
    loads = categorize_loads(case, {b.id: pf.voltage(b.id) for b in case.buses})
    model = build_network_model(case, loads)
    assert model.nd == 1
    from cartswing.network import partition_admittance, reduce_to_sensitivities
    from cartswing.steady import operating_point, post_disturbance_state
    from cartswing.swing import assemble_system
    part = partition_admittance(model)
    vmap = reduce_to_sensitivities(part, model)
    op = operating_point(case, pf, model, vmap)
    init = post_disturbance_state(op, model, vmap)
    system = assemble_system(model, vmap, init)
    assert system.t.shape == (6, 6)
    assert system.b.shape == (6,)


def test_cli_analyze_and_compare(tmp_path):
    runner = CliRunner()
    out = tmp_path / "run"
    res = runner.invoke(cli_main, [
        "analyze", "--case", IEEE9_PATH,
        "--disturbances", scenario_path("loss10.dist"),
        "--t-end", "3.0", "--lossless", "--delta-t", "0.005",
        "--method", "analytic", "--method", "tds",
        "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "analytic" in res.output and "tds" in res.output
    assert (out / "trajectory_analytic.tsv").exists()
    assert (out / "figure_analytic.png").exists()  # report path renders figures

    res = runner.invoke(cli_main, [
        "compare", "--case", IEEE9_PATH,
        "--disturbances", scenario_path("loss10.dist"),
        "--t-end", "3.0", "--lossless", "--delta-t", "0.005",
        "--out", str(tmp_path / "cmp")])
    assert res.exit_code == 0, res.output
    assert "max|diff|" in res.output
    assert (tmp_path / "cmp" / "figure_compare.png").exists()


def test_cli_export_round_trip(tmp_path):
    runner = CliRunner()
    out_file = tmp_path / "traj.tsv"
    res = runner.invoke(cli_main, [
        "export", "--case", IEEE9_PATH,
        "--disturbances", scenario_path("loss10.dist"),
        "--t-end", "2.0", "--lossless", "--method", "tds",
        "--out", str(out_file)])
    assert res.exit_code == 0, res.output
    traj = read_trajectory_path(str(out_file))
    assert traj.t[-1] == pytest.approx(2.0)


def test_cli_exit_codes(tmp_path):
    bad_case = tmp_path / "bad.case"
    bad_case.write_text("case-format 1\nbase-mva 100\n[buses]\na slack 0 0\n")
    env = dict(os.environ)
    proc = subprocess.run(
        [sys.executable, "-m", "cartswing.cli", "analyze", "--case",
         str(bad_case), "--out", str(tmp_path / "o")],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 1
    assert "input error" in proc.stderr

    infeasible = tmp_path / "inf.case"
    infeasible.write_text("""
case-format 1
base-mva 100.0
[buses]
a slack 0 0 1.0
b pq 0 0 1.0
[branches]
a b 0.0 -2.0 0.0 1
[generators]
a 1.0 0.01 0.0 -8.0 1.0 5.0
[loads]
b power p=5.0 q=2.0
""")
    proc = subprocess.run(
        [sys.executable, "-m", "cartswing.cli", "analyze", "--case",
         str(infeasible), "--out", str(tmp_path / "o2")],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 2
    assert "numerical failure" in proc.stderr
