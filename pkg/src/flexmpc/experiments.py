"""Scenario execution: runs, trace files, summaries, comparisons and plots.

Every plot is rendered from CSV files after they are written, so a figure
depends on nothing but the data on disk.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from pathlib import Path
from typing import Optional

import numpy as np

from flexmpc import svg
from flexmpc.config import ExperimentConfig
from flexmpc.errors import ContractError, RunAborted
from flexmpc.lyapunov import state_norm_gdclf, verify_gdclf_sample
from flexmpc.model import BoxSet, brockett_residual_probe, brockett_variant
from flexmpc.mpc import (
    FlexStepConfig,
    MpcTrace,
    TraceTable,
    flexible_step_run,
    lyapunov_decrease_violations,
    read_trace,
    standard_run,
    total_cost_series,
    write_trace,
)
from flexmpc.ocp import OcpSpec, QuadraticStageCost, objective_gdclf


class CompareError(ValueError):
    """Traces that cannot be compared on a common cost."""


def build_problem(cfg: ExperimentConfig):
    """The model and OCP spec described by ``cfg``."""
    model = brockett_variant(h=cfg.model.h)
    o = cfg.ocp
    f0 = QuadraticStageCost(o.state_weight, o.input_weight)
    if o.lyapunov == "objective":
        gamma = cfg.run.gammas[0] if cfg.run.gammas else 1.0
        g = objective_gdclf(model, o.Np, f0, gamma=gamma, eps=o.epsilon)
    else:
        g = state_norm_gdclf(o.m, o.sigma, o.epsilon)
    return model, OcpSpec(Np=o.Np, f0=f0, gdclf=g)


def initial_guess(cfg: ExperimentConfig, N: int, p: int = 2) -> np.ndarray:
    ic = cfg.initial_control
    if ic == "ones":
        return np.ones((N, p))
    if ic == "zeros":
        return np.zeros((N, p))
    g = np.asarray(ic, dtype=float)
    if g.shape[0] < N:
        g = np.concatenate([g, np.zeros((N - g.shape[0], p))])
    return g[:N]


def convergence_step(trace_or_table, radius: float) -> Optional[int]:
    """First recorded ``k`` with ``||x(k)||_inf <= radius``."""
    if isinstance(trace_or_table, MpcTrace):
        xs, k0 = trace_or_table.state_array(), trace_or_table.k0
    else:
        xs, k0 = trace_or_table.x, int(trace_or_table.k[0])
    hit = np.flatnonzero(np.max(np.abs(xs), axis=1) <= radius)
    return int(k0 + hit[0]) if hit.size else None


def write_predictions(trace: MpcTrace, path) -> None:
    """Per-instance predicted Lyapunov values: instance_id, k_start, offset, V, chosen."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "k_start", "offset", "V", "chosen"])
        for rec in trace.instances:
            for off, v in enumerate(rec.V_pred):
                w.writerow([rec.index, rec.k_start, off, repr(float(v)), int(off == rec.l_decr)])


def trace_summary(trace: MpcTrace, cfg: ExperimentConfig) -> dict:
    xs = trace.state_array()
    costs = total_cost_series(trace)
    conv = convergence_step(trace, cfg.run.stop_radius)
    out = {
        "kind": trace.kind,
        "gamma": trace.gamma,
        "steps": trace.steps,
        "termination": trace.termination,
        "converged": conv is not None,
        "convergence_step": conv,
        "final_total_cost": float(costs[-1]),
        "final_state_inf_norm": float(np.max(np.abs(xs[-1]))),
        "min_state_inf_norm": float(np.min(np.max(np.abs(xs), axis=1))),
        "instances": len(trace.instances),
        "l_decr_histogram": {str(k): v for k, v in sorted(Counter(r.l_decr for r in trace.instances).items())},
    }
    if trace.kind == "flexstep":
        out["max_adc_residual"] = float(max(r.adc_residual for r in trace.instances)) if trace.instances else None
        out["lyapunov_strictly_decreasing"] = not lyapunov_decrease_violations(trace)
    return out


def _flexstep(cfg: ExperimentConfig, directory: Path, seed: int):
    model, spec = build_problem(cfg)
    g = spec.gdclf
    fcfg = FlexStepConfig(
        policy=cfg.run.policy,
        u_prev_update=cfg.run.u_prev_update,
        u_prev_init=np.zeros((g.q, model.p)),
        max_steps=cfg.run.max_steps,
        stop_radius=cfg.run.stop_radius,
        initial_guess=initial_guess(cfg, spec.N, model.p),
        seed=seed,
    )
    try:
        trace = flexible_step_run(model, spec, cfg.x0, fcfg, cfg.solver.options())
    except RunAborted as exc:
        if exc.trace is not None:
            write_trace(exc.trace, directory)
            write_predictions(exc.trace, directory / "predictions.csv")
        raise
    write_trace(trace, directory)
    write_predictions(trace, directory / "predictions.csv")
    return trace


def _standard(cfg: ExperimentConfig, gamma: float, directory: Path):
    model, spec = build_problem(cfg)
    try:
        trace = standard_run(
            model,
            spec,
            cfg.x0,
            gamma,
            steps_per_instance=cfg.run.steps_per_instance,
            max_steps=cfg.run.max_steps,
            opts=cfg.solver.options(),
            initial_guess=initial_guess(cfg, spec.Np, model.p),
        )
    except RunAborted as exc:
        if exc.trace is not None:
            write_trace(exc.trace, directory)
        raise
    write_trace(trace, directory)
    return trace


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_experiment(
    cfg: ExperimentConfig,
    out: str | Path | None = None,
    svg_on: Optional[bool] = None,
    seed: Optional[int] = None,
) -> dict:
    """Execute the scenario of ``cfg`` and write its artifact bundle.

    Returns the summary that is also written to ``summary.json``.
    """
    out = Path(out if out is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    svg_on = cfg.output.svg if svg_on is None else svg_on
    seed = cfg.run.seed if seed is None else seed
    summary: dict = {"scenario": cfg.scenario, "name": cfg.name, "seed": seed}
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    if cfg.scenario in ("problem3", "custom"):
        d = out / "flexstep"
        trace = _flexstep(cfg, d, seed)
        summary["runs"] = {"flexstep": trace_summary(trace, cfg)}
        if svg_on:
            plot_trace_dir(d)
    elif cfg.scenario == "problem4":
        runs, dirs = {}, []
        for gamma in cfg.run.gammas:
            d = out / f"gamma_{gamma:g}"
            runs[d.name] = trace_summary(_standard(cfg, gamma, d), cfg)
            dirs.append(d)
            if svg_on:
                plot_trace_dir(d)
        if cfg.run.compare_flexstep:
            d = out / "flexstep"
            runs["flexstep"] = trace_summary(_flexstep(cfg, d, seed), cfg)
            dirs.append(d)
            if svg_on:
                plot_trace_dir(d)
        summary["runs"] = runs
        if len(dirs) >= 2:
            compare(dirs, out / "comparison", svg_on=svg_on, horizon=cfg.run.max_steps)
    elif cfg.scenario == "gdclf-verify":
        summary["verification"] = run_verification(cfg, out, seed, svg_on)
    elif cfg.scenario == "brockett-probe":
        r = cfg.probe.box_radius
        rep = brockett_residual_probe(
            cfg.probe.y4,
            BoxSet.symmetric(r, 6),
            grid_points_per_dim=cfg.probe.grid_points_per_dim,
            refine=cfg.probe.refine,
            h=cfg.model.h,
        )
        summary["probe"] = rep.as_dict() | {"box_radius": r, "solvable": rep.residual <= 0.0}
    else:  # pragma: no cover - schema rules this out
        raise ContractError(f"unknown scenario {cfg.scenario!r}")
    _dump(summary, out / "summary.json")
    return summary


def run_verification(cfg: ExperimentConfig, out: Path, seed: int, svg_on: bool) -> dict:
    model, _ = build_problem(cfg)
    spec = state_norm_gdclf(cfg.ocp.m, cfg.ocp.sigma, cfg.ocp.epsilon)
    rng = np.random.default_rng(seed)
    states = rng.normal(0.0, cfg.verify.state_scale, (cfg.verify.states, model.n))
    rep = verify_gdclf_sample(model, spec, states, restarts=cfg.verify.restarts, seed=seed, scale=cfg.verify.input_scale)
    rep.write_csv(out / "verification.csv")
    with open(out / "v_paths.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_id", "l", "V"])
        for s in rep.states:
            for l, v in enumerate(s.V_path):
                w.writerow([s.state_id, l, repr(float(v))])
    if svg_on:
        plot_v_paths(out / "v_paths.csv", out / "v_paths.svg")
    return {
        "states": cfg.verify.states,
        "verified": sum(s.verified for s in rep.states),
        "all_verified": rep.all_verified,
        "residuals": [s.residual for s in rep.states],
    }


# ----------------------------------------------------------------------------- comparison


def _unique_names(tables: list[TraceTable]) -> list[str]:
    seen: Counter = Counter()
    names = []
    for t in tables:
        seen[t.name] += 1
        names.append(t.name if seen[t.name] == 1 else f"{t.name}_{seen[t.name]}")
    return names


def aligned_cost_series(table: TraceTable, horizon: int) -> np.ndarray:
    """Total cost on ``k = 0..horizon``.

    A run that ended by convergence incurs no further cost, so its final total
    is held; any other run is undefined (NaN) past its last recorded step.
    """
    s = table.total_cost_series()
    if len(s) > horizon + 1:
        return s[: horizon + 1]
    fill = s[-1] if table.meta.get("termination") == "converged" else np.nan
    return np.concatenate([s, np.full(horizon + 1 - len(s), fill)])


def compare(trace_dirs, out, svg_on: bool = True, horizon: Optional[int] = None) -> dict:
    """Aligned total-cost series and end-state norms of two or more traces.

    Writes ``total_cost.csv`` (k, one column per trace), ``end_states.csv``
    and, with ``svg_on``, ``total_cost.svg``.
    """
    tables = [read_trace(d) for d in trace_dirs]
    if len(tables) < 2:
        raise CompareError("compare needs at least two traces")
    costs = [t.meta.get("stage_cost") for t in tables]
    for t, c in zip(tables[1:], costs[1:]):
        if c != costs[0]:
            raise CompareError(
                f"stage cost of {t.name} ({c}) differs from {tables[0].name} ({costs[0]}); totals are not comparable"
            )
    if costs[0] is None or costs[0].get("kind") != "quadratic":
        raise CompareError("traces carry a stage cost that cannot be re-evaluated from CSV")
    names = _unique_names(tables)
    horizon = horizon if horizon is not None else max(t.u.shape[0] for t in tables)
    series = {n: aligned_cost_series(t, horizon) for n, t in zip(names, tables)}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "total_cost.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + names)
        for k in range(horizon + 1):
            w.writerow([k] + ["" if math.isnan(series[n][k]) else repr(float(series[n][k])) for n in names])
    rows = []
    with open(out / "end_states.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trace", "steps", "termination", "final_total_cost", "final_state_inf_norm", "final_state_norm"])
        for n, t in zip(names, tables):
            row = [
                n,
                int(t.u.shape[0]),
                t.meta.get("termination", ""),
                float(t.total_cost_series()[-1]),
                float(np.max(np.abs(t.x[-1]))),
                float(np.linalg.norm(t.x[-1])),
            ]
            rows.append(dict(zip(["trace", "steps", "termination", "final_total_cost", "final_state_inf_norm", "final_state_norm"], row)))
            w.writerow(row[:3] + [repr(v) for v in row[3:]])
    if svg_on:
        plot_total_cost(out / "total_cost.csv", out / "total_cost.svg")
    return {"names": names, "series": series, "end_states": rows}


# ----------------------------------------------------------------------------- plots


def _read_columns(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols: dict = {}
    for row in rows:
        for k, v in row.items():
            cols.setdefault(k, []).append(_num(v))
    return cols


def _num(v):
    if v in ("", None):
        return float("nan")
    try:
        return float(v)
    except ValueError:
        return v


def plot_total_cost(csv_path, svg_path) -> Path:
    cols = _read_columns(csv_path)
    p = svg.Plot("Closed-loop total cost", "k", "total cost")
    for name, vals in cols.items():
        if name != "k":
            p.add(name, cols["k"], vals)
    return svg.write(p, svg_path)


def plot_v_paths(csv_path, svg_path) -> Path:
    cols = _read_columns(csv_path)
    p = svg.Plot("V along verification witnesses", "predicted step l", "V", logy=True)
    ids = sorted(set(int(i) for i in cols.get("state_id", [])))
    for sid in ids:
        idx = [j for j, s in enumerate(cols["state_id"]) if int(s) == sid]
        p.add(f"state {sid}", [cols["l"][j] for j in idx], [cols["V"][j] for j in idx], markers=True)
    return svg.write(p, svg_path)


def plot_trace_dir(directory) -> list[Path]:
    """Render state, step-count and (when present) Lyapunov-prediction plots."""
    d = Path(directory)
    cols = _read_columns(d / "actual.csv")
    written = []
    p = svg.Plot(f"States ({d.name})", "k", "x")
    for i in range(1, 10):
        if f"x{i}" in cols:
            p.add(f"x{i}", cols["k"], cols[f"x{i}"])
    written.append(svg.write(p, d / "states.svg"))
    inst = _read_columns(d / "instances.csv")
    if inst:
        p = svg.Plot(f"Implemented steps per instance ({d.name})", "instance", "steps")
        p.add("l_decr", inst["instance_id"], inst["l_decr"], markers=True)
        written.append(svg.write(p, d / "steps.svg"))
    pred = d / "predictions.csv"
    if pred.exists():
        written.append(plot_predictions(pred, d / "lyapunov_instances.svg"))
    return written


def plot_predictions(csv_path, svg_path) -> Path:
    """Predicted V per instance; the kept part is solid, the discarded tail dashed."""
    cols = _read_columns(csv_path)
    p = svg.Plot("Predicted Lyapunov values per instance", "k", "V", logy=True)
    by: dict = {}
    for j, iid in enumerate(cols.get("instance_id", [])):
        by.setdefault(int(iid), []).append(j)
    for n, (iid, idx) in enumerate(sorted(by.items())):
        color = svg.PALETTE[n % len(svg.PALETTE)]
        k = [cols["k_start"][j] + cols["offset"][j] for j in idx]
        v = [cols["V"][j] for j in idx]
        c = next((i for i, j in enumerate(idx) if cols["chosen"][j] == 1), len(idx) - 1)
        p.add(f"instance {iid}" if n < 8 else "", k[: c + 1], v[: c + 1], color=color, markers=True)
        if c + 1 < len(idx):
            p.add("", k[c:], v[c:], color=color, dashed=True)
    return svg.write(p, svg_path)
