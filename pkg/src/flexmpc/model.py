"""Discrete-time control systems, rollouts and the Brockett-variant benchmark.

All evaluators broadcast over leading axes: a state batch has shape
``(..., n)`` and an input batch ``(..., p)``.  The solver relies on this to
evaluate finite-difference stencils in one call.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from flexmpc.errors import ContractError

StepFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SystemModel:
    """One-step transition map ``x+ = f(x, u)`` with its dimensions.

    Parameters
    ----------
    n, p : int
        State and input dimension.
    h : float
        Sampling time in seconds.
    f : callable
        Broadcasting transition ``f(x, u)``.
    name : str
        Label used in traces and configs.
    smoothed : callable, optional
        ``smoothed(delta)`` returns a copy of the model whose nonsmooth terms
        are softened by ``delta``.  Only used inside optimizer solves.
    """

    n: int
    p: int
    h: float
    f: StepFn = field(repr=False)
    name: str = "custom"
    smoothed: Optional[Callable[[float], "SystemModel"]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ContractError(f"dimensions must be positive, got n={self.n}, p={self.p}")

    def with_smoothing(self, delta: float) -> "SystemModel":
        if delta <= 0 or self.smoothed is None:
            return self
        return self.smoothed(delta)


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box; infinite bounds mean the coordinate is free."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ContractError("box bounds have different lengths")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ContractError("box requires lower <= upper componentwise")
        both = np.isfinite(lo) & np.isfinite(hi)
        if np.any(both & ~((lo < 0) & (hi > 0))):
            raise ContractError("origin must be strictly interior to a bounded box")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, dim: int) -> "BoxSet":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def symmetric(cls, radius, dim: int) -> "BoxSet":
        r = np.broadcast_to(np.asarray(radius, dtype=float), (dim,))
        return cls(-r, r.copy())

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def is_unbounded(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))

    @property
    def is_compact(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def violation(self, v) -> np.ndarray:
        """Componentwise ``max(lower - v, v - upper)``; non-positive inside the box.

        Only finite bounds contribute, so the result has one entry per finite
        bound (lower bounds first) and broadcasts over leading axes.
        """
        v = np.asarray(v, dtype=float)
        lo_idx = np.flatnonzero(np.isfinite(self.lower))
        hi_idx = np.flatnonzero(np.isfinite(self.upper))
        return np.concatenate(
            [self.lower[lo_idx] - v[..., lo_idx], v[..., hi_idx] - self.upper[hi_idx]], axis=-1
        )

    @property
    def n_finite(self) -> int:
        return int(np.isfinite(self.lower).sum() + np.isfinite(self.upper).sum())


def _check_dims(model: SystemModel, x: np.ndarray, u: np.ndarray):
    if x.shape[-1:] != (model.n,):
        raise ContractError(f"state must have dimension {model.n}, got shape {x.shape}")
    if u.shape[-1:] != (model.p,):
        raise ContractError(f"input must have dimension {model.p}, got shape {u.shape}")


def step(model: SystemModel, x, u) -> np.ndarray:
    """Advance the model by one sampling period."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_dims(model, x, u)
    return model.f(x, u)


def rollout(model: SystemModel, x0, useq) -> np.ndarray:
    """Simulate ``len(useq)`` steps from ``x0``.

    ``useq`` has shape ``(..., N, p)`` and the result ``(..., N + 1, n)`` with
    the initial state in position 0.
    """
    x = np.asarray(x0, dtype=float)
    useq = np.asarray(useq, dtype=float)
    if useq.ndim < 2:
        useq = useq.reshape(0, model.p) if useq.size == 0 else useq.reshape(-1, model.p)
    if useq.shape[-1] != model.p:
        raise ContractError(f"inputs must have dimension {model.p}, got shape {useq.shape}")
    if x.shape[-1:] != (model.n,):
        raise ContractError(f"state must have dimension {model.n}, got shape {x.shape}")
    N = useq.shape[-2]
    batch = np.broadcast_shapes(x.shape[:-1], useq.shape[:-2])
    out = np.empty(batch + (N + 1, model.n))
    out[..., 0, :] = x
    for j in range(N):
        out[..., j + 1, :] = model.f(out[..., j, :], useq[..., j, :])
    return out


def _brockett_f(h: float, absfn: Callable[[np.ndarray], np.ndarray]) -> StepFn:
    def f(x, u):
        x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        u1, u2 = u[..., 0], u[..., 1]
        return np.stack(
            [
                x1 + h * u1,
                x2 + h * u2,
                x3 + h * (-x2 * u1 + x1 * u2),
                x4 + h * (x3 * u1 + x2 * u2 + absfn(x4)),
            ],
            axis=-1,
        )

    return f


def brockett_variant(h: float = 0.1, smooth_abs_delta: float = 0.0) -> SystemModel:
    """Brockett integrator with an ``h*|x4|`` drift on the last state.

    ``smooth_abs_delta > 0`` replaces ``|s|`` by ``sqrt(s**2 + delta**2) - delta``
    so the origin stays an equilibrium.
    """
    if smooth_abs_delta > 0:
        d = float(smooth_abs_delta)
        absfn = lambda s: np.sqrt(s * s + d * d) - d  # noqa: E731
        name = f"brockett-variant(smooth={d:g})"
    else:
        absfn = np.abs
        name = "brockett-variant"
    return SystemModel(
        n=4,
        p=2,
        h=h,
        f=_brockett_f(h, absfn),
        name=name,
        smoothed=lambda delta: brockett_variant(h, delta),
    )


def brockett_phi(x, u, h: float = 0.1) -> np.ndarray:
    """Increment map ``f(x, u) - x`` of the Brockett variant."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    u1, u2 = u[..., 0], u[..., 1]
    return h * np.stack(
        [u1, u2, -x2 * u1 + x1 * u2, x3 * u1 + x2 * u2 + np.abs(x4)], axis=-1
    )


@dataclass
class ProbeReport:
    y4: float
    residual: float
    argmin: np.ndarray
    grid_residual: float
    grid_points_per_dim: int
    refine_iterations: int

    def as_dict(self) -> dict:
        return {
            "y4": self.y4,
            "residual": self.residual,
            "argmin": self.argmin.tolist(),
            "grid_residual": self.grid_residual,
            "grid_points_per_dim": self.grid_points_per_dim,
            "refine_iterations": self.refine_iterations,
        }


def _probe_residual(z: np.ndarray, target: np.ndarray, h: float) -> np.ndarray:
    # same as ||brockett_phi(x, u) - target|| without the intermediate stacking
    x1, x2, x3, x4, u1, u2 = (z[..., i] for i in range(6))
    r2 = np.square(h * u1 - target[0])
    r2 += np.square(h * u2 - target[1])
    r2 += np.square(h * (x1 * u2 - x2 * u1) - target[2])
    r2 += np.square(h * (x3 * u1 + x2 * u2 + np.abs(x4)) - target[3])
    return np.sqrt(r2)


def brockett_residual_probe(
    y4: float,
    box: BoxSet | None = None,
    grid_points_per_dim: int = 21,
    refine: int = 200,
    h: float = 0.1,
    chunk: int = 1 << 20,
    seeds_per_slab: int = 4,
) -> ProbeReport:
    """Minimize ``||phi(x, u) - [0, 0, 0, -y4]||`` over a compact box in (x, u).

    A full tensor grid is scanned first, then the best grid point is polished
    by coordinate descent with a shrinking step and a bounded gradient solve.  The best
    ``seeds_per_slab`` points of every first-axis slab (and grid chunk) also get the gradient
    polish, since the residual has several local minima.  A strictly positive result
    certifies numerically that the target increment is unreachable.
    """
    if y4 < 0:
        raise ContractError("y4 must be non-negative")
    if box is None:
        box = BoxSet.symmetric(1.0, 6)
    if box.dim != 6 or not box.is_compact:
        raise ContractError("probe box must be a compact box in 6 dimensions")
    if np.any(box.upper - box.lower <= 0):
        raise ContractError("probe box is degenerate")
    if grid_points_per_dim < 2:
        raise ContractError("grid needs at least two points per dimension")
    target = np.array([0.0, 0.0, 0.0, -y4])
    axes = [np.linspace(lo, hi, grid_points_per_dim) for lo, hi in zip(box.lower, box.upper)]

    # scan the grid one slab of the first axis at a time to bound memory,
    # keeping the best few points of every slab as polishing seeds
    seeds, seed_vals = [], []
    inner = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, 5)
    for a in axes[0]:
        for start in range(0, inner.shape[0], chunk):
            block = inner[start : start + chunk]
            z = np.concatenate([np.full((block.shape[0], 1), a), block], axis=1)
            r = _probe_residual(z, target, h)
            top = np.argpartition(r, min(seeds_per_slab, r.size) - 1)[:seeds_per_slab]
            seeds += list(z[top])
            seed_vals += list(r[top])
    order = np.argsort(seed_vals, kind="stable")
    grid_val = float(seed_vals[order[0]])

    from flexmpc.nlp import NlpInstance, SolverOptions, minimize

    inst = NlpInstance(
        dim=6,
        objective=lambda v: _probe_residual(v, target, h) ** 2,
        lower=box.lower,
        upper=box.upper,
    )
    width0 = (box.upper - box.lower) / (grid_points_per_dim - 1)
    best_val, best_z = grid_val, seeds[order[0]]
    for rank, i in enumerate(order):
        z, val, width = seeds[i].copy(), float(seed_vals[i]), width0.copy()
        for _ in range(refine if rank == 0 else 0):
            improved = False
            for j, sign in itertools.product(range(6), (1.0, -1.0)):
                cand = z.copy()
                cand[j] = np.clip(cand[j] + sign * width[j], box.lower[j], box.upper[j])
                cv = float(_probe_residual(cand, target, h))
                if cv < val:
                    val, z, improved = cv, cand, True
            if not improved:
                width = width / 2
                if np.all(width < 1e-12):
                    break
        # coordinate moves stall on the coupled terms; finish with a bounded quasi-Newton solve
        res = minimize(inst, z, SolverOptions(max_outer=1, max_inner=2000, opttol=1e-12))
        pv = float(_probe_residual(res.z_star, target, h))
        if pv < val:
            val, z = pv, res.z_star
        if val < best_val:
            best_val, best_z = val, z
    z = best_z
    return ProbeReport(
        y4=float(y4),
        residual=best_val,
        argmin=z,
        grid_residual=grid_val,
        grid_points_per_dim=grid_points_per_dim,
        refine_iterations=refine,
    )
