"""Single-shooting transcription of the flexible-step and terminal-cost OCPs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from flexmpc.errors import ContractError
from flexmpc.lyapunov import GdclfSpec, adc_residual
from flexmpc.model import BoxSet, SystemModel, rollout
from flexmpc.nlp import NlpInstance

__all__ = [
    "QuadraticStageCost",
    "QuadraticTerminalCost",
    "OcpSpec",
    "NlpInstance",
    "build_flexstep_nlp",
    "build_standard_nlp",
    "shift_warm_start",
    "adc_value",
    "predicted_trajectory",
    "objective_gdclf",
]


@dataclass(frozen=True)
class QuadraticStageCost:
    """``state_weight * ||x||^2 + input_weight * ||u||^2``."""

    state_weight: float = 1.0
    input_weight: float = 5.0

    def __call__(self, x, u):
        return self.state_weight * np.sum(np.square(x), axis=-1) + self.input_weight * np.sum(
            np.square(u), axis=-1
        )

    def as_dict(self) -> dict:
        return {"kind": "quadratic", "state_weight": self.state_weight, "input_weight": self.input_weight}


@dataclass(frozen=True)
class QuadraticTerminalCost:
    weight: float = 0.0

    def __call__(self, x):
        return self.weight * np.sum(np.square(x), axis=-1)


@dataclass(frozen=True)
class OcpSpec:
    Np: int
    f0: Callable = field(default_factory=QuadraticStageCost)
    phi: Callable = field(default_factory=QuadraticTerminalCost)
    U: BoxSet | None = None
    X: BoxSet | None = None
    XNp: BoxSet | None = None
    gdclf: GdclfSpec | None = None

    def __post_init__(self):
        if self.Np < 1:
            raise ContractError("prediction horizon must be at least 1")
        g = self.gdclf
        if g is not None and not (1 <= g.m <= self.Np and g.q <= self.Np):
            raise ContractError(f"need 1 <= m <= Np and q <= Np (m={g.m}, q={g.q}, Np={self.Np})")

    @property
    def N(self) -> int:
        """Number of decision inputs, ``max(q + m, Np)``."""
        if self.gdclf is None:
            return self.Np
        return max(self.gdclf.q + self.gdclf.m, self.Np)

    def boxes(self, model: SystemModel) -> tuple[BoxSet, BoxSet, BoxSet]:
        U = self.U or BoxSet.unbounded(model.p)
        X = self.X or BoxSet.unbounded(model.n)
        XNp = self.XNp or X
        return U, X, XNp


def _check_state(model: SystemModel, spec: OcpSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ContractError(f"state must have shape ({model.n},), got {x.shape}")
    _, X, _ = spec.boxes(model)
    if not X.contains(x):
        raise ContractError("initial state lies outside the state constraint set")
    return x


def _state_constraints(X: BoxSet, XNp: BoxSet, xs: np.ndarray, Np: int) -> list[np.ndarray]:
    parts = []
    if X.n_finite and Np > 1:
        v = X.violation(xs[..., 1:Np, :])
        parts.append(v.reshape(v.shape[:-2] + (-1,)))
    if XNp.n_finite:
        parts.append(XNp.violation(xs[..., Np, :]))
    return parts


def _input_bounds(U: BoxSet, N: int) -> tuple[np.ndarray, np.ndarray]:
    return np.tile(U.lower, N), np.tile(U.upper, N)


def objective_gdclf(model: SystemModel, Np: int, f0=None, gamma: float = 1.0, eps: float = 1e-5) -> GdclfSpec:
    """The OCP objective as a g-dclf with ``m = 1``, ``sigma = [1]`` and ``q = Np``.

    ``V(x, w)`` rolls the window ``w`` out from ``x`` and returns the stage
    costs plus ``gamma * ||x^Np||^2``; ``alpha(x, w) = eps * ||x||^2``.  With
    this g-dclf the adc is the one-step descent of standard MPC.
    """
    f0 = f0 or QuadraticStageCost()

    def V(x, w):
        xs = rollout(model, x, w)
        return np.sum(f0(xs[..., :Np, :], w), axis=-1) + gamma * np.sum(np.square(xs[..., Np, :]), axis=-1)

    def alpha(x, w):
        return eps * np.sum(np.square(x), axis=-1)

    return GdclfSpec(m=1, q=Np, sigma=(1.0,), V=V, alpha=alpha, name="objective")


def build_flexstep_nlp(model: SystemModel, spec: OcpSpec, x, u_prev=None, scale: float | None = None) -> NlpInstance:
    """Problem with stage/terminal cost, state boxes and the average decrease constraint.

    The decision vector stacks ``N = max(q + m, Np)`` inputs.  Inputs past the
    horizon only enter the adc through the ``V`` windows.  The adc is the last
    constraint; ``V(x, u_prev)`` and ``alpha(x, u_prev)`` are frozen here.

    Objective and constraints are divided by ``scale``, by default
    ``min(1, V(x, u_prev))``, so solver tolerances stay meaningful close to
    the origin.  :func:`adc_value` undoes the scaling.
    """
    g = spec.gdclf
    if g is None:
        raise ContractError("flexible-step problem needs a g-dclf")
    x = _check_state(model, spec, x)
    u_prev = np.zeros((g.q, model.p)) if u_prev is None else np.asarray(u_prev, dtype=float)
    if u_prev.size == 0:
        u_prev = u_prev.reshape(0, model.p)
    if u_prev.shape != (g.q, model.p):
        raise ContractError(f"previous window must have shape ({g.q}, {model.p}), got {u_prev.shape}")
    Np, N, m, q, p = spec.Np, spec.N, g.m, g.q, model.p
    U, X, XNp = spec.boxes(model)
    V0 = float(g.V(x, u_prev))
    alpha0 = float(g.alpha(x, u_prev))
    f0, phi = spec.f0, spec.phi
    if scale is None:
        scale = min(1.0, V0) if V0 > 1e-300 else 1.0
    if not scale > 0:
        raise ContractError("scale must be positive")

    def inputs(z):
        return z.reshape(z.shape[:-1] + (N, p))

    def objective(z):
        useq = inputs(z)
        xs = rollout(model, x, useq[..., :Np, :])
        return (np.sum(f0(xs[..., :Np, :], useq[..., :Np, :]), axis=-1) + phi(xs[..., Np, :])) / scale

    def constraints(z):
        useq = inputs(z)
        xs = rollout(model, x, useq[..., :Np, :])
        windows = np.stack([useq[..., l : l + q, :] for l in range(1, m + 1)], axis=-3)
        Vseq = g.V(xs[..., 1 : m + 1, :], windows)
        adc = adc_residual(g, V0, alpha0, Vseq)
        return np.concatenate(_state_constraints(X, XNp, xs, Np) + [adc[..., None]], axis=-1) / scale

    n_state = (X.n_finite * (Np - 1) if Np > 1 else 0) + XNp.n_finite
    lo, hi = _input_bounds(U, N)
    return NlpInstance(
        dim=N * p,
        objective=objective,
        constraints=constraints,
        n_constraints=n_state + 1,
        lower=None if U.is_unbounded else lo,
        upper=None if U.is_unbounded else hi,
        metadata={
            "kind": "flexstep",
            "x": x,
            "u_prev": u_prev,
            "V0": V0,
            "alpha0": alpha0,
            "N": N,
            "Np": Np,
            "p": p,
            "scale": scale,
        },
    )


def build_standard_nlp(model: SystemModel, spec: OcpSpec, x, gamma: float) -> NlpInstance:
    """Terminal-cost problem: ``sum f0 + gamma * ||x^Np||^2`` with no adc."""
    if not gamma > 0:
        raise ContractError("terminal weight gamma must be positive")
    x = _check_state(model, spec, x)
    Np, p = spec.Np, model.p
    U, X, XNp = spec.boxes(model)
    f0 = spec.f0

    def objective(z):
        useq = z.reshape(z.shape[:-1] + (Np, p))
        xs = rollout(model, x, useq)
        return np.sum(f0(xs[..., :Np, :], useq), axis=-1) + gamma * np.sum(np.square(xs[..., Np, :]), axis=-1)

    n_state = (X.n_finite * (Np - 1) if Np > 1 else 0) + XNp.n_finite

    def constraints(z):
        xs = rollout(model, x, z.reshape(z.shape[:-1] + (Np, p)))
        return np.concatenate(_state_constraints(X, XNp, xs, Np), axis=-1)

    lo, hi = _input_bounds(U, Np)
    return NlpInstance(
        dim=Np * p,
        objective=objective,
        constraints=constraints if n_state else None,
        n_constraints=n_state,
        lower=None if U.is_unbounded else lo,
        upper=None if U.is_unbounded else hi,
        metadata={"kind": "standard", "x": x, "gamma": float(gamma), "N": Np, "Np": Np, "p": p},
    )


def adc_value(instance: NlpInstance, z) -> np.ndarray:
    """The adc residual of a flexible-step instance at decision vector(s) ``z``."""
    if instance.metadata.get("kind") != "flexstep":
        raise ContractError("instance has no average decrease constraint")
    return instance.constraint_values(np.asarray(z, float))[..., -1] * instance.metadata["scale"]


def predicted_trajectory(model: SystemModel, instance: NlpInstance, z) -> tuple[np.ndarray, np.ndarray]:
    """Inputs ``(N, p)`` and the states they produce ``(N + 1, n)``."""
    meta = instance.metadata
    useq = np.asarray(z, float).reshape(meta["N"], meta["p"])
    return useq, rollout(model, meta["x"], useq)


def shift_warm_start(u_star, l: int, pad: str = "zeros") -> np.ndarray:
    """Drop the first ``l`` inputs of ``u_star`` (shape ``(N, p)``) and pad at the end."""
    u_star = np.asarray(u_star, dtype=float)
    N = u_star.shape[0]
    if not 1 <= l <= N:
        raise ContractError(f"shift must satisfy 1 <= l <= {N}, got {l}")
    if pad == "zeros":
        tail = np.zeros((l,) + u_star.shape[1:])
    elif pad == "repeat-last":
        tail = np.repeat(u_star[-1:], l, axis=0)
    else:
        raise ContractError(f"unknown padding {pad!r}")
    return np.concatenate([u_star[l:], tail], axis=0)
