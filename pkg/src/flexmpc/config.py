"""Experiment configuration: JSON files validated against a schema, with presets."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import jsonschema

from flexmpc.nlp import SolverOptions

SCENARIOS = ("problem3", "problem4", "gdclf-verify", "brockett-probe", "custom")


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_nonnegint = {"type": "integer", "minimum": 0}
_vec = {"type": "array", "items": _num}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA = _obj(
    {
        "scenario": {"enum": list(SCENARIOS)},
        "name": {"type": "string"},
        "model": _obj({"h": _pos}),
        "ocp": _obj(
            {
                "Np": _posint,
                "m": _posint,
                "q": _nonnegint,
                "sigma": {"type": "array", "items": _nonneg, "minItems": 1},
                "epsilon": _nonneg,
                "state_weight": _pos,
                "input_weight": _pos,
                "lyapunov": {"enum": ["state-norm", "objective"]},
            }
        ),
        "x0": _vec,
        "initial_control": {
            "oneOf": [
                {"enum": ["ones", "zeros"]},
                {"type": "array", "items": _vec},
            ]
        },
        "solver": _obj(
            {
                "fd_step": _pos,
                "feastol": _pos,
                "opttol": _pos,
                "max_outer": _posint,
                "max_inner": _posint,
                "penalty_init": _pos,
                "penalty_growth": {"type": "number", "exclusiveMinimum": 1},
                "smooth_abs_delta": _nonneg,
            }
        ),
        "run": _obj(
            {
                "policy": {"enum": ["greatest-descent", "first-descent"]},
                "u_prev_update": {"enum": ["shift-optimal", "search-alternative"]},
                "max_steps": _nonnegint,
                "stop_radius": _nonneg,
                "gammas": {"type": "array", "items": _pos},
                "steps_per_instance": _posint,
                "compare_flexstep": {"type": "boolean"},
                "seed": _nonnegint,
            }
        ),
        "verify": _obj({"states": _posint, "state_scale": _pos, "restarts": _posint, "input_scale": _pos}),
        "probe": _obj({"y4": _nonneg, "box_radius": _pos, "grid_points_per_dim": {"type": "integer", "minimum": 2}, "refine": _nonnegint}),
        "output": _obj({"directory": {"type": "string"}, "svg": {"type": "boolean"}}),
    },
    required=("scenario",),
)


@dataclass
class ModelConfig:
    h: float = 0.1


@dataclass
class OcpConfig:
    Np: int = 10
    m: int = 10
    q: int = 0
    sigma: list = field(default_factory=lambda: [0.0, 0.0, 5.5, 5.5, 5.5, 5.5, 0.0, 0.0, 0.0, 0.0])
    epsilon: float = 1e-5
    state_weight: float = 1.0
    input_weight: float = 5.0
    lyapunov: str = "state-norm"


@dataclass
class SolverConfig:
    fd_step: float = 1e-6
    feastol: float = 1e-6
    opttol: float = 1e-5
    max_outer: int = 50
    max_inner: int = 500
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    smooth_abs_delta: float = 0.0

    def options(self) -> SolverOptions:
        return SolverOptions(**asdict(self))


@dataclass
class RunConfig:
    policy: str = "greatest-descent"
    u_prev_update: str = "shift-optimal"
    max_steps: int = 300
    stop_radius: float = 1e-3
    gammas: list = field(default_factory=lambda: [22.0, 480.0, 1920.0])
    steps_per_instance: int = 10
    compare_flexstep: bool = True
    seed: int = 0


@dataclass
class VerifyConfig:
    states: int = 5
    state_scale: float = 1.0
    restarts: int = 50
    input_scale: float = 1.0


@dataclass
class ProbeConfig:
    y4: float = 0.01
    box_radius: float = 1.0
    grid_points_per_dim: int = 21
    refine: int = 200


@dataclass
class OutputConfig:
    directory: str = "out"
    svg: bool = True


@dataclass
class ExperimentConfig:
    scenario: str
    name: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    x0: list = field(default_factory=lambda: [1.0, 2.0, 3.0, 5.0])
    initial_control: Any = "ones"
    solver: SolverConfig = field(default_factory=SolverConfig)
    run: RunConfig = field(default_factory=RunConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "model": ModelConfig,
    "ocp": OcpConfig,
    "solver": SolverConfig,
    "run": RunConfig,
    "verify": VerifyConfig,
    "probe": ProbeConfig,
    "output": OutputConfig,
}

PRESETS: dict[str, dict] = {
    "problem3": {"scenario": "problem3", "name": "problem3"},
    "problem4": {"scenario": "problem4", "name": "problem4"},
    "gdclf-verify": {"scenario": "gdclf-verify", "name": "gdclf-verify"},
    "brockett-probe": {"scenario": "brockett-probe", "name": "brockett-probe"},
}


def _line_of(text: str, path) -> Optional[int]:
    """Best-effort line number of the innermost key in ``path``."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return 1 if text.strip() else None
    m = re.search(r'"%s"\s*:' % re.escape(keys[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _consistency(cfg: ExperimentConfig) -> None:
    o = cfg.ocp
    if len(o.sigma) != o.m:
        raise ConfigError(f"ocp.sigma has {len(o.sigma)} entries but m = {o.m}")
    if sum(o.sigma) / o.m < 1:
        raise ConfigError("ocp.sigma must average at least 1")
    if not (o.m <= o.Np and o.q <= o.Np):
        raise ConfigError("need m <= Np and q <= Np")
    if o.lyapunov == "state-norm" and o.q != 0:
        raise ConfigError("the state-norm Lyapunov function needs q = 0")
    if o.lyapunov == "objective" and o.q != o.Np:
        raise ConfigError("the objective Lyapunov function needs q = Np")
    if len(cfg.x0) != 4:
        raise ConfigError("x0 must have 4 entries")
    if isinstance(cfg.initial_control, list):
        n_in = max(o.Np, o.q + o.m)
        if len(cfg.initial_control) != n_in or any(len(r) != 2 for r in cfg.initial_control):
            raise ConfigError(f"initial_control must be a {n_in} x 2 array")


def from_dict(data: dict, text: Optional[str] = None) -> ExperimentConfig:
    """Validate ``data`` and fill defaults from the scenario preset."""
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}", _line_of(text or "", list(exc.absolute_path))) from None
    merged = copy.deepcopy(PRESETS.get(data["scenario"], {}))
    for k, v in data.items():
        if isinstance(v, dict):
            merged.setdefault(k, {}).update(v)
        else:
            merged[k] = v
    kwargs = {}
    for f in fields(ExperimentConfig):
        if f.name not in merged:
            continue
        v = merged[f.name]
        kwargs[f.name] = _SECTIONS[f.name](**v) if f.name in _SECTIONS else v
    cfg = ExperimentConfig(**kwargs)
    if not cfg.name:
        cfg.name = cfg.scenario
    _consistency(cfg)
    return cfg


def loads(text: str) -> ExperimentConfig:
    if not text.strip():
        raise ConfigError("configuration is empty", 1)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object", 1)
    return from_dict(data, text)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no such configuration file: {p}")
    return loads(p.read_text())


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return from_dict(PRESETS[name])


def emit(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
