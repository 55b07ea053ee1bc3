"""Flexible-step model predictive control with generalized discrete-time control Lyapunov functions."""

from flexmpc.errors import ContractError, DescentNotFound, InvalidStart, NonFiniteSample, RunAborted
from flexmpc.lyapunov import GdclfSpec, adc_residual, descent_indices, select_index, state_norm_gdclf
from flexmpc.model import BoxSet, SystemModel, brockett_variant, rollout, step
from flexmpc.mpc import FlexStepConfig, MpcTrace, flexible_step_run, standard_run, total_cost
from flexmpc.nlp import NlpInstance, NlpResult, SolverOptions, minimize
from flexmpc.ocp import OcpSpec, build_flexstep_nlp, build_standard_nlp

__version__ = "0.1.0"

__all__ = [
    "BoxSet",
    "ContractError",
    "DescentNotFound",
    "FlexStepConfig",
    "GdclfSpec",
    "InvalidStart",
    "MpcTrace",
    "NlpInstance",
    "NlpResult",
    "NonFiniteSample",
    "OcpSpec",
    "RunAborted",
    "SolverOptions",
    "SystemModel",
    "adc_residual",
    "brockett_variant",
    "build_flexstep_nlp",
    "build_standard_nlp",
    "descent_indices",
    "flexible_step_run",
    "minimize",
    "rollout",
    "select_index",
    "standard_run",
    "state_norm_gdclf",
    "step",
    "total_cost",
]
