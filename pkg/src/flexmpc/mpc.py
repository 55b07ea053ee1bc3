"""Closed-loop receding-horizon engines and their traces."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from flexmpc.errors import ContractError, DescentNotFound, RunAborted
from flexmpc.lyapunov import GREATEST_DESCENT, DescentReport, GdclfSpec, adc_residual, lyapunov_values, select_index
from flexmpc.model import SystemModel, rollout
from flexmpc.nlp import BUDGET_EXHAUSTED, INFEASIBLE, NlpResult, SolverOptions, minimize
from flexmpc.ocp import OcpSpec, build_flexstep_nlp, build_standard_nlp, shift_warm_start

log = logging.getLogger(__name__)

SHIFT_OPTIMAL = "shift-optimal"
SEARCH_ALTERNATIVE = "search-alternative"


@dataclass
class InstanceRecord:
    """One optimization instance of a closed-loop run."""

    index: int
    k_start: int
    x: np.ndarray
    u_prev: np.ndarray
    u_star: np.ndarray
    x_pred: np.ndarray
    V_pred: np.ndarray  # V0, V1..Vm; empty for runs without a g-dclf
    alpha0: float
    l_decr: int
    adc_residual: float
    solve: Optional[NlpResult]
    descent: Optional[DescentReport] = None
    retried: bool = False


@dataclass
class MpcTrace:
    kind: str
    model: SystemModel
    spec: OcpSpec
    k0: int = 0
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    instances: list = field(default_factory=list)
    windows: list = field(default_factory=list)  # u_prev after each instance
    gamma: Optional[float] = None
    termination: str = ""

    @property
    def steps(self) -> int:
        return len(self.inputs)

    @property
    def k_end(self) -> int:
        return self.k0 + self.steps

    @property
    def gdclf(self) -> Optional[GdclfSpec]:
        return self.spec.gdclf

    def state_array(self) -> np.ndarray:
        return np.array(self.states, dtype=float).reshape(-1, self.model.n)

    def input_array(self) -> np.ndarray:
        return np.array(self.inputs, dtype=float).reshape(-1, self.model.p)

    def instance_of_step(self) -> list[int]:
        out = []
        for rec in self.instances:
            out += [rec.index] * rec.l_decr
        return out[: self.steps]


@dataclass
class FlexStepConfig:
    """Run options for the flexible-step engine.

    ``initial_guess`` is the solver start for the first instance (zeros when
    omitted); later instances are warm-started by shifting the previous optimum,
    or restart from ``initial_guess`` when ``warm_start`` is off.
    """

    policy: str = GREATEST_DESCENT
    u_prev_init: Optional[np.ndarray] = None
    u_prev_update: str = SHIFT_OPTIMAL
    max_steps: int = 300
    stop_radius: float = 1e-3
    initial_guess: Optional[np.ndarray] = None
    pad: str = "zeros"
    search_restarts: int = 20
    search_scale: float = 0.5
    seed: int = 0
    k0: int = 0
    warm_start: bool = True

    def __post_init__(self):
        if self.u_prev_update not in (SHIFT_OPTIMAL, SEARCH_ALTERNATIVE):
            raise ContractError(f"unknown u_prev update {self.u_prev_update!r}")
        if self.max_steps < 0 or self.stop_radius < 0:
            raise ContractError("max_steps and stop_radius must be non-negative")


def _guess(initial, N: int, p: int) -> np.ndarray:
    if initial is None:
        return np.zeros((N, p))
    g = np.asarray(initial, dtype=float)
    if g.shape == (p, N):
        g = g.T
    if g.shape != (N, p):
        raise ContractError(f"initial guess must have shape ({N}, {p}), got {g.shape}")
    return g


def _window_feasible(model, spec: OcpSpec, x, w) -> bool:
    U, X, _ = spec.boxes(model)
    if not all(U.contains(u) for u in w):
        return False
    return all(X.contains(s) for s in rollout(model, x, w)[1:])


def _search_window(model, spec: OcpSpec, x_new, shifted, bound, rng, restarts, scale):
    """Pick a window at ``x_new`` with ``V <= bound``; the shifted optimum always qualifies."""
    g = spec.gdclf
    U, _, _ = spec.boxes(model)
    best, best_v = shifted, float(g.V(x_new, shifted))
    for _ in range(restarts):
        cand = np.clip(shifted + rng.normal(0.0, scale, shifted.shape), U.lower, U.upper)
        v = float(g.V(x_new, cand))
        if v <= bound and v < best_v and _window_feasible(model, spec, x_new, cand):
            best, best_v = cand, v
    return best


def _solve_checked(inst, guess, opts, what: str, trace):
    res = minimize(inst, guess.ravel(), opts)
    if res.status in (INFEASIBLE, BUDGET_EXHAUSTED):
        raise RunAborted(
            f"{what} solve at k={trace.k_end} ended with status {res.status} "
            f"(violation {res.max_violation:.2e})",
            trace=trace,
            instance=inst,
        )
    return res


def flexible_step_run(
    model: SystemModel,
    spec: OcpSpec,
    x0,
    cfg: FlexStepConfig | None = None,
    opts: SolverOptions | None = None,
) -> MpcTrace:
    """Run the flexible-step scheme from ``x0``.

    Each instance solves the adc-constrained problem, picks a descent index
    ``l`` on the exact-model prediction, implements ``l`` inputs and hands
    the next window to the following instance.  The loop stops once
    ``||x||_inf <= stop_radius`` or ``max_steps`` steps have elapsed; the
    last instance is always implemented in full, so a run can overshoot
    ``max_steps`` by at most ``m - 1`` steps.
    """
    cfg = cfg or FlexStepConfig()
    opts = opts or SolverOptions()
    g = spec.gdclf
    if g is None:
        raise ContractError("flexible-step run needs a g-dclf in the OCP spec")
    x = np.asarray(x0, dtype=float)
    N, p, q = spec.N, model.p, g.q
    u_prev = np.zeros((q, p)) if cfg.u_prev_init is None else np.asarray(cfg.u_prev_init, float).reshape(q, p)
    guess = _guess(cfg.initial_guess, N, p)
    solve_model = model.with_smoothing(opts.smooth_abs_delta)
    rng = np.random.default_rng(cfg.seed)

    trace = MpcTrace(kind="flexstep", model=model, spec=spec, k0=cfg.k0, states=[x.copy()])
    while True:
        if np.max(np.abs(x)) <= cfg.stop_radius:
            trace.termination = "converged"
            break
        if trace.steps >= cfg.max_steps:
            trace.termination = "max-steps"
            break
        inst = build_flexstep_nlp(solve_model, spec, x, u_prev)
        res = _solve_checked(inst, guess, opts, "flexible-step", trace)
        U = res.z_star.reshape(N, p)
        V0, a0 = inst.metadata["V0"], inst.metadata["alpha0"]
        Vseq = lyapunov_values(model, g, x, U)
        retried = False
        try:
            rep = select_index(V0, a0, Vseq, cfg.policy)
        except DescentNotFound:
            # numerical slack or genuine failure: one retry with a tighter feasibility target
            retried = True
            log.info("no descent index at k=%d, retrying with tightened tolerances", trace.k_end)
            res = _solve_checked(inst, U, opts.tightened(), "flexible-step retry", trace)
            U = res.z_star.reshape(N, p)
            Vseq = lyapunov_values(model, g, x, U)
            try:
                rep = select_index(V0, a0, Vseq, cfg.policy)
            except DescentNotFound as exc:
                raise RunAborted(f"descent not found at k={trace.k_end}: {exc}", trace=trace, instance=inst) from exc
        l = rep.chosen
        x_pred = rollout(model, x, U[: spec.Np])
        rec = InstanceRecord(
            index=len(trace.instances),
            k_start=trace.k_end,
            x=x.copy(),
            u_prev=u_prev.copy(),
            u_star=U.copy(),
            x_pred=x_pred,
            V_pred=np.concatenate([[V0], Vseq]),
            alpha0=a0,
            l_decr=l,
            adc_residual=float(adc_residual(g, V0, a0, Vseq)),
            solve=res,
            descent=rep,
            retried=retried,
        )
        trace.instances.append(rec)
        for j in range(l):
            trace.inputs.append(U[j].copy())
            x = model.f(x, U[j])
            trace.states.append(x.copy())
        shifted = U[l : l + q].copy()
        if cfg.u_prev_update == SEARCH_ALTERNATIVE and q > 0:
            u_prev = _search_window(model, spec, x, shifted, V0 - a0, rng, cfg.search_restarts, cfg.search_scale)
        else:
            u_prev = shifted
        trace.windows.append(u_prev.copy())
        guess = shift_warm_start(U, l, cfg.pad) if cfg.warm_start else _guess(cfg.initial_guess, N, p)
        log.debug("instance %d at k=%d: l=%d, V %.4g -> %.4g", rec.index, rec.k_start, l, V0, Vseq[l - 1])
    return trace


def standard_run(
    model: SystemModel,
    spec: OcpSpec,
    x0,
    gamma: float,
    steps_per_instance: int = 10,
    max_steps: int = 300,
    opts: SolverOptions | None = None,
    initial_guess=None,
    pad: str = "zeros",
) -> MpcTrace:
    """Terminal-cost MPC implementing a fixed number of inputs per solve."""
    opts = opts or SolverOptions()
    if not 1 <= steps_per_instance <= spec.Np:
        raise ContractError("steps per instance must lie in 1..Np")
    x = np.asarray(x0, dtype=float)
    Np, p = spec.Np, model.p
    guess = _guess(initial_guess, Np, p)
    solve_model = model.with_smoothing(opts.smooth_abs_delta)
    g = spec.gdclf
    trace = MpcTrace(kind="standard", model=model, spec=spec, states=[x.copy()], gamma=float(gamma))
    while trace.steps < max_steps:
        inst = build_standard_nlp(solve_model, spec, x, gamma)
        res = _solve_checked(inst, guess, opts, "standard", trace)
        U = res.z_star.reshape(Np, p)
        l = min(steps_per_instance, max_steps - trace.steps)
        x_pred = rollout(model, x, U)
        if g is not None and g.q == 0 and g.m <= Np:
            V_pred = np.concatenate([[float(g.V(x, U[:0]))], lyapunov_values(model, g, x, U)])
        else:
            V_pred = np.empty(0)
        trace.instances.append(
            InstanceRecord(
                index=len(trace.instances),
                k_start=trace.k_end,
                x=x.copy(),
                u_prev=np.zeros((0, p)),
                u_star=U.copy(),
                x_pred=x_pred,
                V_pred=V_pred,
                alpha0=float("nan"),
                l_decr=l,
                adc_residual=float("nan"),
                solve=res,
            )
        )
        for j in range(l):
            trace.inputs.append(U[j].copy())
            x = model.f(x, U[j])
            trace.states.append(x.copy())
        trace.windows.append(np.zeros((0, p)))
        guess = shift_warm_start(U, l, pad)
    trace.termination = "max-steps"
    return trace


def stage_costs(trace: MpcTrace) -> np.ndarray:
    xs, us = trace.state_array(), trace.input_array()
    return np.asarray(trace.spec.f0(xs[: len(us)], us), dtype=float)


def total_cost(trace: MpcTrace, k: int) -> float:
    """Closed-loop cost ``sum_{j<k} f0(x(j), u(j))``."""
    if not 0 <= k <= trace.steps:
        raise ContractError(f"k must lie in 0..{trace.steps}")
    return float(np.sum(stage_costs(trace)[:k]))


def total_cost_series(trace: MpcTrace) -> np.ndarray:
    """Running total cost for ``k = 0..steps``."""
    return np.concatenate([[0.0], np.cumsum(stage_costs(trace))])


def lyapunov_subsequence(trace: MpcTrace) -> list[float]:
    """``V(x(k_n), u_prev_n)`` at the start of every instance."""
    g = trace.gdclf
    return [float(g.V(rec.x, rec.u_prev)) for rec in trace.instances]


def lyapunov_decrease_violations(trace: MpcTrace, feastol: float = 1e-8) -> list[tuple[int, float]]:
    """Instances whose successor fails ``V_next <= V_n - alpha_n + feastol``.

    The state reached by the final instance counts as a successor.  Returns
    ``(instance index, excess)`` pairs; an empty list means the chain holds.
    """
    g = trace.gdclf
    vals = lyapunov_subsequence(trace)
    if trace.instances:
        vals.append(float(g.V(trace.states[-1], trace.windows[-1])))
    bad = []
    for n, rec in enumerate(trace.instances):
        a = float(g.alpha(rec.x, rec.u_prev))
        excess = vals[n + 1] - (vals[n] - a)
        if excess > feastol or not vals[n + 1] < vals[n]:
            bad.append((n, excess))
    return bad


def augmented_log(trace: MpcTrace, include_terminal: bool = True) -> list[tuple[np.ndarray, np.ndarray]]:
    """Piecewise-constant ``y(k) = (x(k_n), u_prev_n)`` for ``k = k0..k_end``.

    Each instance contributes ``l_decr`` copies of its start pair.  With
    ``include_terminal`` the pair reached after the last instance is appended
    as ``y(k_end)``, so the log has ``steps + 1`` entries.
    """
    out = []
    for rec in trace.instances:
        out += [(rec.x, rec.u_prev)] * rec.l_decr
    if include_terminal and trace.instances:
        out.append((np.asarray(trace.states[-1]), trace.windows[-1]))
    return out


def replay(trace: MpcTrace) -> np.ndarray:
    """Re-simulate the recorded inputs from the first recorded state."""
    if not trace.inputs:
        return trace.state_array()
    return rollout(trace.model, trace.states[0], trace.input_array())


def trace_metadata(trace: MpcTrace) -> dict:
    f0 = trace.spec.f0
    g = trace.gdclf
    return {
        "kind": trace.kind,
        "model": trace.model.name,
        "n": trace.model.n,
        "p": trace.model.p,
        "h": trace.model.h,
        "Np": trace.spec.Np,
        "m": g.m if g else None,
        "q": g.q if g else None,
        "sigma": list(g.sigma) if g else None,
        "gamma": trace.gamma,
        "stage_cost": f0.as_dict() if hasattr(f0, "as_dict") else {"kind": repr(f0)},
        "k0": trace.k0,
        "steps": trace.steps,
        "termination": trace.termination,
    }


def _V_along(trace: MpcTrace) -> list:
    g = trace.gdclf
    if g is None:
        return [""] * len(trace.states)
    vals = []
    owner = trace.instance_of_step()
    for k, x in enumerate(trace.states):
        if g.q == 0:
            vals.append(repr(float(g.V(x, np.zeros((0, trace.model.p))))))
        elif k < len(owner):
            rec = trace.instances[owner[k]]
            off = k + trace.k0 - rec.k_start
            w = rec.u_star[off : off + g.q]
            vals.append(repr(float(g.V(x, w))) if len(w) == g.q else "")
        else:
            vals.append(repr(float(g.V(x, trace.windows[-1]))) if trace.windows else "")
    return vals


def write_trace(trace: MpcTrace, directory) -> Path:
    """Write ``actual.csv``, ``instances.csv`` and ``meta.json`` into ``directory``.

    actual.csv: k, x1..xn, u1..up, V, instance_id (the final row has no input).
    instances.csv: instance_id, k_start, l_decr, solve_status, adc_residual, objective.
    For windowed g-dclfs the V column uses the window of inputs applied from k on.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n, p = trace.model.n, trace.model.p
    owner = trace.instance_of_step()
    Vs = _V_along(trace)
    with open(d / "actual.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(p)] + ["V", "instance_id"])
        for k, x in enumerate(trace.states):
            u = [repr(float(v)) for v in trace.inputs[k]] if k < trace.steps else [""] * p
            inst = owner[k] if k < len(owner) else ""
            w.writerow([trace.k0 + k] + [repr(float(v)) for v in x] + u + [Vs[k], inst])
    with open(d / "instances.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "k_start", "l_decr", "solve_status", "adc_residual", "objective"])
        for rec in trace.instances:
            status = rec.solve.status if rec.solve else ""
            obj = repr(rec.solve.objective) if rec.solve else ""
            w.writerow([rec.index, rec.k_start, rec.l_decr, status, repr(rec.adc_residual), obj])
    (d / "meta.json").write_text(json.dumps(trace_metadata(trace), indent=2, sort_keys=True) + "\n")
    return d


@dataclass
class TraceTable:
    """A trace read back from disk: enough to compare closed-loop costs."""

    name: str
    meta: dict
    k: np.ndarray
    x: np.ndarray
    u: np.ndarray
    l_decr: np.ndarray

    def stage_costs(self) -> np.ndarray:
        sc = self.meta["stage_cost"]
        if sc.get("kind") != "quadratic":
            raise ContractError(f"trace {self.name} has a stage cost that cannot be re-evaluated")
        steps = self.u.shape[0]
        return sc["state_weight"] * np.sum(self.x[:steps] ** 2, axis=1) + sc["input_weight"] * np.sum(self.u**2, axis=1)

    def total_cost_series(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.stage_costs())])


def read_trace(directory) -> TraceTable:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    n, p = meta["n"], meta["p"]
    ks, xs, us = [], [], []
    with open(d / "actual.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            ks.append(int(row["k"]))
            xs.append([float(row[f"x{i + 1}"]) for i in range(n)])
            if row["u1"] != "":
                us.append([float(row[f"u{i + 1}"]) for i in range(p)])
    with open(d / "instances.csv", newline="") as fh:
        ls = [int(row["l_decr"]) for row in csv.DictReader(fh)]
    return TraceTable(
        name=d.name,
        meta=meta,
        k=np.array(ks),
        x=np.array(xs).reshape(-1, n),
        u=np.array(us).reshape(-1, p),
        l_decr=np.array(ls, dtype=int),
    )
