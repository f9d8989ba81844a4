"""Scenario orchestration: staged disturbances through the four methods.

A scenario is a case, a scripted disturbance sequence and a horizon.
Disturbances sharing a time are applied together; each group opens a new
stage with its own network reduction. Rotor angle/speed hand over
continuously between stages. The closed-form engine and the reference
simulator propagate their own state chains; the two certificates evaluate
at the start of the final stage, on the reference chain when available.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import assess
from .caseio import Disturbance, RawCase, make_lossless, parse_case, parse_disturbances
from .errors import CaseValidationError
from .network import build_network_model, categorize_loads, partition_admittance, \
    reduce_to_sensitivities
from .steady import (MachineState, disturbed_grid, operating_point,
                     post_disturbance_state, solve_power_flow)
from .swing import assemble_system
from .tds import GridDynamics, TdsConfig, rk4_simulate
from .trajectory import Trajectory
from .validity import ValidityConfig, sample_monitored, solve_monitored

DEFAULT_COM_THRESHOLD = 0.129  # rad; overridable per case or per scenario


@dataclass
class ScenarioConfig:
    case_path: str
    disturbance_path: str | None = None
    methods: tuple = ("analytic", "tds", "dm", "com")
    horizon: float = 10.0
    validity: ValidityConfig = field(default_factory=ValidityConfig)
    tds: TdsConfig = field(default_factory=TdsConfig)
    out_dir: str | None = None
    sample_dt: float = 0.01
    lossless: bool = False
    reinit: bool = True
    com_threshold: float | None = None
    machine_init: str = "exact"
    plots: bool = True

    def __post_init__(self):
        if not self.methods:
            raise CaseValidationError("at least one method must be selected")
        if self.horizon <= 0:
            raise CaseValidationError("horizon must be positive")


@dataclass
class MethodResult:
    method: str
    verdict: str               # stable/unstable/certified/undetermined
    detail: str
    wall_s: float
    trajectory: Trajectory | None = None
    events: list = field(default_factory=list)
    o1_crossings: int = 0
    extra: dict = field(default_factory=dict)


@dataclass
class Report:
    scenario: str
    case_path: str
    horizon: float
    stages: list               # (t_start, [Disturbance...]) per stage
    results: dict              # method -> MethodResult
    manifest: list = field(default_factory=list)

    def rows(self):
        return [self.results[m] for m in sorted(self.results)]


@dataclass
class Stage:
    t_start: float
    t_end: float
    events: tuple
    model: object
    part: object
    vmap: object


def load_case(cfg: ScenarioConfig) -> RawCase:
    with open(cfg.case_path) as fh:
        case = parse_case(fh.read(), cfg.case_path)
    return make_lossless(case) if cfg.lossless else case


def build_stages(case: RawCase, events, horizon, base_model):
    """Group disturbances by time into network stages."""
    for d in events:
        if d.time <= 0 or d.time >= horizon:
            raise CaseValidationError(
                f"disturbance at t={d.time}s outside (0, horizon)")
    groups = {}
    for d in events:
        groups.setdefault(d.time, []).append(d)
    times = sorted(groups)
    stages = []
    model = base_model
    part = partition_admittance(model)
    vmap = reduce_to_sensitivities(part, model)
    bounds = [0.0] + times + [horizon]
    stages.append(Stage(0.0, bounds[1], (), model, part, vmap))
    for i, t in enumerate(times):
        model, part, vmap = disturbed_grid(model, groups[t], allow_singular=True)
        stages.append(Stage(t, bounds[i + 2], tuple(groups[t]), model, part, vmap))
    return stages


def _stage_grid(t0, t1, dt):
    n = max(1, int(round((t1 - t0) / dt)))
    ts = t0 + dt * np.arange(n + 1)
    ts[-1] = t1
    return ts


def _steady_trajectory(stage: Stage, op, ts, provenance):
    """Constant pre-disturbance samples."""
    model = stage.model
    n = ts.size
    vmag = np.concatenate([np.abs(op.v_k), np.abs(op.v_m)])
    vang = np.concatenate([np.angle(op.v_k), np.angle(op.v_m)])
    m_vec = np.array([m.m for m in model.machines])
    from .steady import reactive_coupling
    w_mach = op.w_machines()
    v_k_real = np.concatenate([op.v_k.real, op.v_k.imag])
    o_val = reactive_coupling(model, w_mach, v_k_real) / m_vec
    return dict(
        t=ts,
        delta=np.tile(op.delta, (n, 1)),
        omega=np.tile(op.omega, (n, 1)),
        vmag=np.tile(vmag, (n, 1)),
        vang=np.tile(vang, (n, 1)),
        emag=np.tile(op.e, (n, 1)),
        o=np.tile(o_val, (n, 1)),
        o1=np.zeros(n),
        eps=np.zeros(n),
        bus_labels=tuple(model.kbuses) + tuple(model.mbuses))


def _concat_stage_blocks(blocks, model, provenance):
    """Stitch per-stage sample blocks; bus columns align by label.

    Stage boundaries drop the duplicated junction sample; buses absent in
    a stage (e.g. a midpoint removed by a line opening) carry NaN there.
    """
    labels = []
    for b in blocks:
        for lab in b["bus_labels"]:
            if lab not in labels:
                labels.append(lab)

    def cat(key):
        parts = []
        for i, b in enumerate(blocks):
            sl = slice(None, -1) if i < len(blocks) - 1 else slice(None)
            parts.append(np.asarray(b[key])[sl])
        return np.concatenate(parts)

    def cat_bus(key):
        parts = []
        for i, b in enumerate(blocks):
            sl = slice(None, -1) if i < len(blocks) - 1 else slice(None)
            arr = np.asarray(b[key])[sl]
            out = np.full((arr.shape[0], len(labels)), np.nan)
            for j, lab in enumerate(b["bus_labels"]):
                out[:, labels.index(lab)] = arr[:, j]
            parts.append(out)
        return np.concatenate(parts)

    return Trajectory(
        t=cat("t"), delta=cat("delta"), omega=cat("omega"),
        vmag=cat_bus("vmag"), vang=cat_bus("vang"),
        emag=cat("emag"), o=cat("o"), o1=cat("o1"), eps=cat("eps"),
        bus_labels=tuple(labels),
        machine_labels=tuple(m.name for m in model.machines),
        provenance=provenance)


def upward_crossings(signal, threshold):
    above = np.asarray(signal) >= threshold
    return int(np.sum(above[1:] & ~above[:-1]))


def run_analytic(stages, op, cfg: ScenarioConfig):
    """Closed-form chain across stages with optional monitoring."""
    state = MachineState.from_operating_point(op)
    blocks = []
    events = []
    spans = []
    runs = []
    t_norms = []
    final_sol = None
    for s_idx, stage in enumerate(stages):
        ts = _stage_grid(stage.t_start, stage.t_end, cfg.sample_dt)
        if s_idx == 0:
            blocks.append(_steady_trajectory(stage, op, ts, "analytic"))
            continue
        model, vmap = stage.model, stage.vmap
        init = post_disturbance_state(state, model, vmap)
        system = assemble_system(model, vmap, init)
        t_norms.append((stage.t_start, system.t_norm))
        run = solve_monitored(model, vmap, system, init, stage.t_start,
                              stage.t_end, cfg.validity, reinit=cfg.reinit)
        runs.append((stage, run))
        events.extend(run.events)
        samp = sample_monitored(run, model, ts, cfg.validity)
        ni = model.ni
        gam = np.array([m.gamma for m in model.machines])
        x, y = samp["z"][:ni], samp["z"][ni:2 * ni]
        delta = np.unwrap(np.arctan2(y, x), axis=1) + gam[:, None]
        # keep rotor-angle continuity at the stage boundary
        if blocks:
            prev = blocks[-1]["delta"][-1]
            shift = np.round((prev - delta[:, 0]) / (2 * np.pi))
            delta = delta + 2 * np.pi * shift[:, None]
        ux, uy = samp["z"][2 * ni:3 * ni], samp["z"][3 * ni:4 * ni]
        omega = (x * uy - y * ux) / (x * x + y * y)
        nk, nm = model.nk, model.nm
        v_kc = samp["v_k"][:nk] + 1j * samp["v_k"][nk:]
        v_mc = samp["v_m"][:nm] + 1j * samp["v_m"][nm:]
        blocks.append(dict(
            t=ts, delta=delta.T, omega=omega.T,
            vmag=np.hstack([np.abs(v_kc).T, np.abs(v_mc).T]),
            vang=np.hstack([np.angle(v_kc).T, np.angle(v_mc).T]),
            emag=np.hypot(x, y).T, o=samp["o"].T, o1=samp["o1"],
            eps=samp["eps"],
            bus_labels=tuple(model.kbuses) + tuple(model.mbuses)))
        for seg in run.segments:
            spans.append((seg.t_start, seg.t_end, seg.solution))
        final_sol = run.final_solution
        # hand over the continuous state to the next stage
        z_end = samp["z"][:, -1]
        d_end = delta[:, -1]
        w_end = (x[:, -1] * uy[:, -1] - y[:, -1] * ux[:, -1]) / \
            (x[:, -1] ** 2 + y[:, -1] ** 2)
        state = MachineState(delta=d_end, omega=w_end, e=init.e,
                             pmech=init.pmech, wtilde=z_end[4 * ni:])
    traj = _concat_stage_blocks(blocks, stages[-1].model, "analytic")
    return traj, events, spans, final_sol, runs, t_norms


def run_tds(stages, op, cfg: ScenarioConfig):
    state = MachineState.from_operating_point(op)
    blocks = []
    for s_idx, stage in enumerate(stages):
        ts = _stage_grid(stage.t_start, stage.t_end, cfg.tds.dt)
        if s_idx == 0:
            blocks.append(_steady_trajectory(stage, op, ts, "tds"))
            continue
        model, vmap = stage.model, stage.vmap
        init = post_disturbance_state(state, model, vmap)
        system = assemble_system(model, vmap, init)
        dyn = GridDynamics(model, vmap, system)
        z0 = np.concatenate([state.delta, state.omega, state.wtilde])
        from dataclasses import replace as _rep
        sub = _rep(cfg.tds, t_end=stage.t_end)
        traj = rk4_simulate(z0, dyn, sub, stage.t_start,
                            o_ref=init.o0,
                            eps_fn=lambda do, om: system.delta_t_norm(do) / system.t_norm)
        blocks.append(dict(t=traj.t, delta=traj.delta, omega=traj.omega,
                           vmag=traj.vmag, vang=traj.vang, emag=traj.emag,
                           o=traj.o, o1=traj.o1, eps=traj.eps,
                           bus_labels=traj.bus_labels))
        nd = model.nd
        wt_end = traj.wtilde[-1] if traj.wtilde is not None else np.zeros(2 * nd)
        state = MachineState(delta=traj.delta[-1], omega=traj.omega[-1],
                             e=init.e, pmech=init.pmech, wtilde=wt_end)
    traj = _concat_stage_blocks(blocks, stages[-1].model, "tds")
    return traj, state


def _truth_state_at_final_stage(stages, op, cfg):
    """Reference-chain machine state at the start of the last stage."""
    if len(stages) <= 2:
        return MachineState.from_operating_point(op)
    sub_cfg = ScenarioConfig(case_path=cfg.case_path, methods=("tds",),
                             horizon=stages[-1].t_start, tds=cfg.tds,
                             sample_dt=cfg.sample_dt)
    traj, state = run_tds(stages[:-1], op, sub_cfg)
    return state


def run_scenario(cfg: ScenarioConfig, name: str | None = None) -> Report:
    case = load_case(cfg)
    events = []
    if cfg.disturbance_path:
        with open(cfg.disturbance_path) as fh:
            events = parse_disturbances(fh.read(), cfg.disturbance_path)

    pf = solve_power_flow(case)
    v_op = {b.id: pf.voltage(b.id) for b in case.buses}
    loads = categorize_loads(case, v_op)
    model = build_network_model(case, loads)
    stages = build_stages(case, events, cfg.horizon, model)
    op = operating_point(case, pf, model, stages[0].vmap, cfg.machine_init)

    com_threshold = cfg.com_threshold
    if com_threshold is None:
        com_threshold = case.com_threshold or DEFAULT_COM_THRESHOLD

    results = {}
    final = stages[-1]
    m_vec = np.array([m.m for m in model.machines])

    truth_state = None

    def truth():
        nonlocal truth_state
        if truth_state is None:
            truth_state = _truth_state_at_final_stage(stages, op, cfg)
        return truth_state

    for method in cfg.methods:
        t0 = time.perf_counter()
        if method == "analytic":
            traj, evs, spans, final_sol, _, t_norms = run_analytic(stages, op, cfg)
            wall = time.perf_counter() - t0
            if final_sol is None:  # no disturbance at all
                init0 = post_disturbance_state(op, stages[0].model, stages[0].vmap)
                sys0 = assemble_system(stages[0].model, stages[0].vmap, init0)
                from .analytic import solve_system
                final_sol = solve_system(sys0, init0.z0, stages[0].vmap, 0.0)
                spans = [(0.0, cfg.horizon, final_sol)]
            last_spans = [sp for sp in spans if sp[0] >= final.t_start - 1e-12] \
                or spans
            verdict = assess.classify_spans(final.model, last_spans, final_sol,
                                            cfg.horizon - final.t_start)
            results[method] = MethodResult(
                method=method, verdict=verdict.label,
                detail=(f"type {verdict.type}; lam_max_re={verdict.lam_max_re:.4f}; "
                        f"{verdict.rationale}; events={len(evs)}"),
                wall_s=wall, trajectory=traj, events=evs,
                o1_crossings=upward_crossings(traj.o1, cfg.validity.delta_e),
                extra={"verdict": verdict, "t_norms": t_norms})
        elif method == "tds":
            traj, _ = run_tds(stages, op, cfg)
            wall = time.perf_counter() - t0
            stable = assess.tds_excursion_verdict(traj, m_vec)
            results[method] = MethodResult(
                method=method, verdict="stable" if stable else "unstable",
                detail="rotor excursion stayed below pi" if stable
                else "rotor excursion reached pi", wall_s=wall, trajectory=traj)
        elif method == "com":
            init_f = post_disturbance_state(truth(), final.model, final.vmap)
            check = assess.com_check(final.model, init_f, com_threshold)
            wall = time.perf_counter() - t0
            results[method] = MethodResult(
                method=method, verdict=check.certificate,
                detail=(f"ddmax={check.delta_max:.4f} thr={check.threshold:.3f} "
                        f"sync={check.sync_condition:.4f}"),
                wall_s=wall, extra={"com": check})
        elif method == "dm":
            init_f = post_disturbance_state(truth(), final.model, final.vmap)
            report = assess.dm_margin(final.model, init_f)
            wall = time.perf_counter() - t0
            results[method] = MethodResult(
                method=method, verdict=report.certificate,
                detail=(f"margin={report.v_margin:.3f} vcr={report.v_cr:.3f} "
                        f"vcl={report.v_cl:.3f}"),
                wall_s=wall, extra={"dm": report})
        else:
            raise CaseValidationError(f"unknown method {method!r}")

    return Report(scenario=name or cfg.disturbance_path or "steady",
                  case_path=cfg.case_path, horizon=cfg.horizon,
                  stages=[(s.t_start, list(s.events)) for s in stages],
                  results=results)
