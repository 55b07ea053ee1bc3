"""Smooth constrained minimization.

Problems have the form ``min f(z)  s.t.  c(z) <= 0,  lower <= z <= upper``.
The outer loop is a Powell-Hestenes-Rockafellar augmented Lagrangian, the
inner loop a projected limited-memory BFGS with Armijo backtracking.  All
derivatives are central finite differences.

The outer stopping test measures stationarity and complementarity relative to
``max(1, |f|)``; the inner loop and feasibility use absolute tolerances.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from flexmpc.errors import InvalidStart, NonFiniteSample

OPTIMAL = "optimal"
FEASIBLE_SUBOPTIMAL = "feasible-suboptimal"
INFEASIBLE = "infeasible"
BUDGET_EXHAUSTED = "budget-exhausted"


@dataclass(frozen=True)
class SolverOptions:
    fd_step: float = 1e-6
    feastol: float = 1e-6
    opttol: float = 1e-5
    max_outer: int = 50
    max_inner: int = 500
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    smooth_abs_delta: float = 0.0
    memory: int = 10
    armijo: float = 1e-4
    record_history: bool = False
    divergence_bound: float = 1e8

    def __post_init__(self):
        for name in ("fd_step", "feastol", "opttol", "penalty_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.max_outer < 1 or self.max_inner < 1 or self.memory < 1:
            raise ValueError("iteration budgets and memory must be at least 1")
        if self.smooth_abs_delta < 0:
            raise ValueError("smooth_abs_delta must be non-negative")

    def tightened(self, factor: float = 10.0) -> "SolverOptions":
        return replace(self, feastol=self.feastol / factor)


@dataclass(frozen=True)
class NlpInstance:
    """A nonlinear program over a flat decision vector.

    ``objective`` maps ``(..., dim) -> (...)`` and ``constraints`` maps
    ``(..., dim) -> (..., n_constraints)`` with ``<= 0`` meaning feasible.
    Set ``vectorized=False`` if the callables only accept a single vector.
    """

    dim: int
    objective: Callable[[np.ndarray], np.ndarray]
    constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    n_constraints: int = 0
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    vectorized: bool = True
    metadata: dict = field(default_factory=dict)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.dim, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.dim, np.inf) if self.upper is None else np.asarray(self.upper, float)
        return lo, hi

    def constraint_values(self, z) -> np.ndarray:
        if self.constraints is None or self.n_constraints == 0:
            return np.zeros(np.shape(z)[:-1] + (0,))
        return np.asarray(self.constraints(np.asarray(z, float)), float)

    def max_violation(self, z) -> float:
        c = self.constraint_values(z)
        lo, hi = self.bounds()
        z = np.asarray(z, float)
        bound_viol = max(float(np.max(lo - z, initial=0.0)), float(np.max(z - hi, initial=0.0)))
        return max(float(np.max(c, initial=0.0)), bound_viol)


@dataclass
class NlpResult:
    z_star: np.ndarray
    objective: float
    max_violation: float
    status: str
    outer_iterations: int
    inner_iterations: int
    evaluations: int
    stationarity: float
    multipliers: np.ndarray
    history: list = field(default_factory=list, repr=False)

    @property
    def success(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE_SUBOPTIMAL)


def gradient_fd(fn, z, step: float = 1e-6, vectorized: bool = False) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    With ``vectorized=True`` the whole ``2 * len(z)`` stencil is passed to
    ``fn`` as one ``(2n, n)`` batch.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    E = np.eye(n) * step
    if vectorized:
        vals = np.asarray(fn(np.concatenate([z + E, z - E])), dtype=float)
        fp, fm = vals[:n], vals[n:]
    else:
        fp = np.array([fn(z + E[i]) for i in range(n)], dtype=float)
        fm = np.array([fn(z - E[i]) for i in range(n)], dtype=float)
    bad = ~(np.isfinite(fp) & np.isfinite(fm))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteSample(i, fp[i] if not np.isfinite(fp[i]) else fm[i])
    return (fp - fm) / (2.0 * step)


def gradient_forward(fn, z, step: float = 1e-6) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    f0 = fn(z)
    return np.array([(fn(z + step * e) - f0) / step for e in np.eye(z.size)])


class _Merit:
    """Augmented Lagrangian value with frozen multipliers and penalty."""

    def __init__(self, instance: NlpInstance, lam: np.ndarray, rho: float):
        self.inst = instance
        self.lam = lam
        self.rho = rho
        self.evaluations = 0

    def parts(self, Z):
        Z = np.asarray(Z, dtype=float)
        if self.inst.vectorized:
            f = np.asarray(self.inst.objective(Z), dtype=float)
            c = self.inst.constraint_values(Z)
        else:
            flat = Z.reshape(-1, Z.shape[-1])
            f = np.array([self.inst.objective(z) for z in flat], dtype=float).reshape(Z.shape[:-1])
            c = np.array([self.inst.constraint_values(z) for z in flat], dtype=float)
            c = c.reshape(Z.shape[:-1] + (self.inst.n_constraints,))
        self.evaluations += int(np.prod(Z.shape[:-1], dtype=int))
        return f, c

    def value(self, Z):
        f, c = self.parts(Z)
        if c.shape[-1] == 0:
            return f
        shifted = np.maximum(0.0, self.lam + self.rho * c)
        return f + (np.sum(shifted**2, axis=-1) - np.sum(self.lam**2)) / (2.0 * self.rho)


def _safe_value(merit: _Merit, z) -> float:
    with np.errstate(all="ignore"):
        v = float(merit.value(z))
    return v if np.isfinite(v) else np.inf


def _projected_gradient(z, g, lo, hi):
    return np.clip(z - g, lo, hi) - z


def _lbfgs(merit: _Merit, z0, lo, hi, opts: SolverOptions, tol: float, history=None, outer=0):
    """Projected L-BFGS on the merit function; returns (z, value, grad, iterations)."""
    step = opts.fd_step
    grad = lambda z: gradient_fd(merit.value, z, step, vectorized=True)  # noqa: E731
    z = np.clip(np.asarray(z0, float), lo, hi)
    fz = _safe_value(merit, z)
    g = grad(z)
    S, Y = deque(maxlen=opts.memory), deque(maxlen=opts.memory)
    stall = 0
    it = 0
    for it in range(1, opts.max_inner + 1):
        pg = _projected_gradient(z, g, lo, hi)
        if np.max(np.abs(pg), initial=0.0) <= tol:
            it -= 1
            break
        # variables pinned at a bound with the gradient pushing outward stay fixed
        free = ~(((z <= lo) & (g > 0)) | ((z >= hi) & (g < 0)))
        q = np.where(free, g, 0.0)
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q = q - a * y
        if S:
            s, y = S[-1], Y[-1]
            q = q * ((s @ y) / (y @ y))
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q = q + (a - b) * s
        d = -np.where(free, q, 0.0)
        if not d @ g < 0:
            S.clear()
            Y.clear()
            d = -np.where(free, g, 0.0)
        t = 1.0
        accepted = False
        for _ in range(60):
            z_new = np.clip(z + t * d, lo, hi)
            f_new = _safe_value(merit, z_new)
            if f_new <= fz + opts.armijo * (g @ (z_new - z)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        g_new = grad(z_new)
        s, y = z_new - z, g_new - g
        if s @ y > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            S.append(s)
            Y.append(y)
        decrease = fz - f_new
        z, fz, g = z_new, f_new, g_new
        if history is not None:
            history.append((outer, it, fz, merit.rho))
        if decrease <= 1e-15 * max(1.0, abs(fz)):
            stall += 1
            if stall >= 5:
                break
        else:
            stall = 0
    return z, fz, g, it


def minimize(instance: NlpInstance, guess, opts: SolverOptions | None = None) -> NlpResult:
    """Solve ``instance`` from ``guess``; deterministic for identical inputs."""
    opts = opts or SolverOptions()
    z = np.asarray(guess, dtype=float).reshape(-1)
    if z.size != instance.dim:
        raise InvalidStart(f"guess has {z.size} entries, instance expects {instance.dim}")
    lo, hi = instance.bounds()
    z = np.clip(z, lo, hi)
    with np.errstate(all="ignore"):
        f0 = np.asarray(instance.objective(z), dtype=float)
        c0 = instance.constraint_values(z)
    if not np.all(np.isfinite(f0)) or not np.all(np.isfinite(c0)):
        raise InvalidStart("objective or constraints are not finite at the initial guess")

    lam = np.zeros(instance.n_constraints)
    rho = opts.penalty_init
    history: list = [] if opts.record_history else None
    inner_total = 0
    evaluations = 0
    # incumbent (violation, objective, z, stationarity); a feasible start is
    # kept so the result never loses to its own warm start
    best = (max(float(np.max(c0, initial=0.0)), 0.0), float(f0), z.copy(), np.inf)
    violations = []
    status = BUDGET_EXHAUSTED
    stationarity = np.inf
    outer = 0

    def better(cand, cur):
        feas_c, feas_b = cand[0] <= opts.feastol, cur[0] <= opts.feastol
        if feas_c != feas_b:
            return feas_c
        if feas_c:
            return cand[1] <= cur[1]
        return cand[0] < cur[0]

    for outer in range(1, opts.max_outer + 1):
        merit = _Merit(instance, lam, rho)
        z, _, g, its = _lbfgs(merit, z, lo, hi, opts, opts.opttol, history, outer)
        inner_total += its
        f, c = merit.parts(z)
        evaluations += merit.evaluations
        f = float(f)
        viol = max(float(np.max(c, initial=0.0)), 0.0)
        violations.append(viol)
        # gradient of the merit at the new iterate equals the Lagrangian
        # gradient with the updated multipliers
        lam_new = np.maximum(0.0, lam + rho * c) if c.size else lam
        fscale = max(1.0, abs(f))
        stationarity = float(np.max(np.abs(_projected_gradient(z, g, lo, hi)), initial=0.0)) / fscale
        cand = (viol, f, z.copy(), stationarity)
        if better(cand, best):
            best = cand
        if history is not None:
            history.append((outer, -1, f, rho, viol))
        if not np.isfinite(f) or float(np.max(np.abs(z), initial=0.0)) > opts.divergence_bound:
            # iterates running off to infinity signal an unbounded problem
            status = BUDGET_EXHAUSTED
            break
        complementarity = float(np.max(np.abs(lam_new * np.minimum(c, 0.0)), initial=0.0)) / fscale
        if viol <= opts.feastol and stationarity <= opts.opttol and complementarity <= opts.opttol:
            # a feasible warm start with lower cost still wins
            status = OPTIMAL if best is cand else FEASIBLE_SUBOPTIMAL
            lam = lam_new
            break
        if instance.n_constraints == 0:
            status = FEASIBLE_SUBOPTIMAL
            break
        if len(violations) >= 2 and viol > 0.25 * violations[-2] and viol > opts.feastol:
            rho *= opts.penalty_growth
        lam = lam_new
    else:
        if best[0] <= opts.feastol:
            status = FEASIBLE_SUBOPTIMAL
        elif len(violations) >= 2 and violations[-1] > 0.9 * violations[-2]:
            status = INFEASIBLE
        else:
            status = BUDGET_EXHAUSTED

    viol, f, z_best, stat = best
    if status == INFEASIBLE and viol <= opts.feastol:
        status = FEASIBLE_SUBOPTIMAL
    return NlpResult(
        z_star=z_best,
        objective=f,
        max_violation=viol,
        status=status,
        outer_iterations=outer,
        inner_iterations=inner_total,
        evaluations=evaluations,
        stationarity=stat,
        multipliers=lam,
        history=history or [],
    )


def write_history_csv(result: NlpResult, path) -> None:
    """Write per-iteration rows: outer, inner, objective, violation, penalty.

    Inner rows carry the merit value and an empty violation; the closing row
    of each outer round has ``inner = -1`` and the true objective.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["outer", "inner", "objective", "violation", "penalty"])
        for row in result.history:
            if len(row) == 4:
                outer, inner, value, rho = row
                w.writerow([outer, inner, repr(value), "", repr(rho)])
            else:
                outer, inner, value, rho, viol = row
                w.writerow([outer, inner, repr(value), repr(viol), repr(rho)])
