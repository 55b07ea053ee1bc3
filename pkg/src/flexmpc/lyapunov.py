"""Generalized discrete-time control Lyapunov functions and the average decrease constraint.

A g-dclf of order ``m`` with window length ``q`` is a pair of evaluators
``V(x, w)`` and ``alpha(x, w)`` where ``w`` is a ``(q, p)`` input window
(empty when ``q == 0``).  Both evaluators broadcast over leading axes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from flexmpc.errors import ContractError, DescentNotFound
from flexmpc.model import SystemModel, rollout
from flexmpc.nlp import NlpInstance, SolverOptions, minimize

GREATEST_DESCENT = "greatest-descent"
FIRST_DESCENT = "first-descent"
POLICIES = (GREATEST_DESCENT, FIRST_DESCENT)

DESCENT_FEASTOL = 1e-8

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GdclfSpec:
    """Order, window length, averaging weights and the ``V``/``alpha`` pair."""

    m: int
    q: int
    sigma: tuple
    V: Evaluator = field(repr=False)
    alpha: Evaluator = field(repr=False)
    name: str = "custom"

    def __post_init__(self):
        sigma = tuple(float(s) for s in self.sigma)
        object.__setattr__(self, "sigma", sigma)
        if self.m < 1 or self.q < 0:
            raise ContractError(f"need m >= 1 and q >= 0, got m={self.m}, q={self.q}")
        if len(sigma) != self.m:
            raise ContractError(f"expected {self.m} weights, got {len(sigma)}")
        if not check_sigma(sigma, self.m):
            raise ContractError("weights must be non-negative with mean at least 1")

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.sigma)


def state_norm_gdclf(m: int, sigma: Sequence[float], eps: float = 1e-5) -> GdclfSpec:
    """``V(x) = ||x||^2`` and ``alpha(x) = eps * ||x||^4`` (window ignored, q = 0)."""

    def V(x, w):
        return np.sum(np.square(x), axis=-1)

    def alpha(x, w):
        return eps * np.sum(np.square(x), axis=-1) ** 2

    return GdclfSpec(m=m, q=0, sigma=tuple(sigma), V=V, alpha=alpha, name="state-norm")


def problem3_weights(m: int = 10) -> tuple:
    """Weight 5.5 on predicted steps 3..6 and zero elsewhere."""
    sigma = [0.0] * m
    for i in range(2, min(6, m)):
        sigma[i] = 5.5
    return tuple(sigma)


def check_sigma(sigma: Sequence[float], m: int) -> bool:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size != m:
        raise ContractError(f"expected {m} weights, got {sigma.size}")
    return bool(np.all(sigma >= 0) and sigma.mean() >= 1.0)


def adc_residual(spec: GdclfSpec, V0: float, alpha0: float, Vseq) -> np.ndarray:
    """Weighted average of ``Vseq`` minus ``V0`` plus ``alpha0``; ``<= 0`` means satisfied.

    ``Vseq`` has shape ``(..., m)``.
    """
    Vseq = np.asarray(Vseq, dtype=float)
    if Vseq.shape[-1] != spec.m:
        raise ContractError(f"expected {spec.m} predicted values, got {Vseq.shape[-1]}")
    return Vseq @ spec.weights / spec.m - V0 + alpha0


def descent_indices(V0: float, alpha0: float, Vseq, feastol: float = DESCENT_FEASTOL) -> list[int]:
    """One-based indices ``l`` with ``V_l - V0 <= -alpha0`` (up to ``feastol``)."""
    Vseq = np.asarray(Vseq, dtype=float)
    return [i + 1 for i in np.flatnonzero(Vseq - V0 <= -alpha0 + feastol)]


@dataclass
class DescentReport:
    indices: list
    chosen: int
    margin: float


def select_index(
    V0: float,
    alpha0: float,
    Vseq,
    policy: str = GREATEST_DESCENT,
    feastol: float = DESCENT_FEASTOL,
) -> DescentReport:
    """Pick the number of steps to implement.

    ``greatest-descent`` takes the smallest ``V_l`` (earliest on ties),
    ``first-descent`` the earliest qualifying index.  ``margin`` is
    ``V0 - alpha0 - V_chosen``.
    """
    if policy not in POLICIES:
        raise ContractError(f"unknown policy {policy!r}")
    Vseq = np.asarray(Vseq, dtype=float)
    idx = descent_indices(V0, alpha0, Vseq, feastol)
    margins = V0 - alpha0 - Vseq
    if not idx:
        best = float(np.max(margins)) if margins.size else -np.inf
        raise DescentNotFound(
            f"no descent index: best margin {best:.3e} (tolerance {feastol:g})", best
        )
    if policy == GREATEST_DESCENT:
        chosen = int(np.argmin(Vseq)) + 1
    else:
        chosen = idx[0]
    return DescentReport(indices=idx, chosen=chosen, margin=float(margins[chosen - 1]))


def lyapunov_values(model: SystemModel, spec: GdclfSpec, x0, useq) -> np.ndarray:
    """``V(x^l, u[l:l+q])`` for ``l = 1..m`` along the rollout of ``useq``.

    ``useq`` needs at least ``q + m`` inputs; leading batch axes broadcast.
    """
    useq = np.asarray(useq, dtype=float)
    need = spec.q + spec.m
    if useq.shape[-2] < need:
        raise ContractError(f"need {need} inputs to evaluate V up to step m, got {useq.shape[-2]}")
    xs = rollout(model, x0, useq[..., : spec.m, :])
    windows = np.stack([useq[..., l : l + spec.q, :] for l in range(1, spec.m + 1)], axis=-3)
    return spec.V(xs[..., 1:, :], windows)


@dataclass
class StateVerification:
    state_id: int
    x0: np.ndarray
    verified: bool
    residual: float
    witness: np.ndarray
    V_path: np.ndarray
    attempts: int


@dataclass
class VerificationReport:
    spec_name: str
    m: int
    q: int
    states: list

    @property
    def all_verified(self) -> bool:
        return all(s.verified for s in self.states)

    def write_csv(self, path) -> None:
        """Columns: state_id, verified, residual, then the witness inputs flattened."""
        width = max((s.witness.size for s in self.states), default=0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state_id", "verified", "residual"] + [f"w{i}" for i in range(width)])
            for s in self.states:
                w.writerow([s.state_id, int(s.verified), repr(s.residual)] + [repr(v) for v in s.witness.ravel()])


def _adc_instance(model: SystemModel, spec: GdclfSpec, x0, window) -> NlpInstance:
    N = spec.q + spec.m
    V0 = float(spec.V(x0, window))
    a0 = float(spec.alpha(x0, window))

    def objective(z):
        U = z.reshape(z.shape[:-1] + (N, model.p))
        return adc_residual(spec, V0, a0, lyapunov_values(model, spec, x0, U))

    return NlpInstance(dim=N * model.p, objective=objective, metadata={"x": x0, "V0": V0, "alpha0": a0})


def verify_gdclf_sample(
    model: SystemModel,
    spec: GdclfSpec,
    states,
    restarts: int = 50,
    seed: int = 0,
    scale: float = 1.0,
    window_sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
    opts: SolverOptions | None = None,
) -> VerificationReport:
    """Search for input sequences witnessing the average decrease at each state.

    Every restart minimizes the adc residual over ``q + m`` inputs from a
    random Gaussian start of standard deviation ``scale``; the first start is
    the zero sequence.  A state is verified once a residual ``<= 0`` appears.
    """
    if spec.q > 0 and window_sampler is None:
        raise ContractError("q > 0 needs a window_sampler for the initial input window")
    opts = opts or SolverOptions(max_outer=1, max_inner=200)
    rng = np.random.default_rng(seed)
    N = spec.q + spec.m
    out = []
    for sid, x0 in enumerate(np.atleast_2d(np.asarray(states, dtype=float))):
        window = window_sampler(x0, rng) if spec.q else np.zeros((0, model.p))
        inst = _adc_instance(model, spec, x0, window)
        best_r, best_z, attempts = np.inf, np.zeros(inst.dim), 0
        for k in range(restarts):
            attempts += 1
            guess = np.zeros(inst.dim) if k == 0 else rng.normal(0.0, scale, inst.dim)
            res = minimize(inst, guess, opts)
            r = float(inst.objective(res.z_star))
            if r < best_r:
                best_r, best_z = r, res.z_star
            if best_r <= 0:
                break
        U = best_z.reshape(N, model.p)
        xs = rollout(model, x0, U[: spec.m])
        path = np.array([float(spec.V(x, window if l == 0 else U[l : l + spec.q])) for l, x in enumerate(xs)])
        out.append(StateVerification(sid, x0, best_r <= 0, best_r, U, path, attempts))
    return VerificationReport(spec.name, spec.m, spec.q, out)
