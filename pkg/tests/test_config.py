import json

import pytest

from flexmpc.config import PRESETS, ConfigError, emit, from_dict, load_config, loads, preset


def test_problem3_preset_defaults():
    cfg = preset("problem3")
    o = cfg.ocp
    assert (o.Np, o.m, o.q) == (10, 10, 0)
    assert o.sigma == [0, 0, 5.5, 5.5, 5.5, 5.5, 0, 0, 0, 0]
    assert o.epsilon == 1e-5
    assert (o.state_weight, o.input_weight) == (1.0, 5.0)
    assert cfg.x0 == [1.0, 2.0, 3.0, 5.0]
    assert cfg.initial_control == "ones"
    assert cfg.model.h == 0.1
    assert (cfg.run.max_steps, cfg.run.stop_radius) == (300, 1e-3)


def test_problem4_preset_gammas():
    cfg = preset("problem4")
    assert cfg.run.gammas == [22.0, 480.0, 1920.0]
    assert cfg.run.steps_per_instance == 10


def test_all_presets_load_and_roundtrip():
    for name in PRESETS:
        cfg = preset(name)
        assert loads(emit(cfg)) == cfg


def test_roundtrip_custom(tmp_path):
    cfg = from_dict({"scenario": "custom", "ocp": {"m": 2, "Np": 4, "sigma": [0, 2]}, "x0": [0, 0, 0, 1]})
    path = tmp_path / "c.json"
    path.write_text(emit(cfg))
    assert load_config(path) == cfg


def test_empty_file_is_error(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 1


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.json")


def test_syntax_error_line_anchored():
    text = '{\n  "scenario": "problem3",\n  "x0": [1, 2,, 3]\n}'
    with pytest.raises(ConfigError) as info:
        loads(text)
    assert info.value.line == 3
    assert "line 3" in str(info.value)


def test_unknown_key_rejected_with_line():
    text = '{\n  "scenario": "problem3",\n  "run": {\n    "max_stepz": 10\n  }\n}'
    with pytest.raises(ConfigError) as info:
        loads(text)
    assert "max_stepz" in str(info.value)
    assert info.value.line == 3


def test_bad_value_line_anchored():
    text = '{\n  "scenario": "problem3",\n  "solver": {\n    "feastol": -1\n  }\n}'
    with pytest.raises(ConfigError) as info:
        loads(text)
    assert info.value.line == 4


@pytest.mark.parametrize(
    "data",
    [
        {},
        {"scenario": "problem9"},
        {"scenario": "problem3", "ocp": {"sigma": [1, 1]}},
        {"scenario": "problem3", "ocp": {"m": 2, "sigma": [0.5, 0.4]}},
        {"scenario": "problem3", "ocp": {"m": 12, "sigma": [1] * 12}},
        {"scenario": "problem3", "ocp": {"q": 2}},
        {"scenario": "problem3", "x0": [1, 2]},
        {"scenario": "problem3", "initial_control": [[1, 1]]},
        {"scenario": "problem3", "solver": {"penalty_growth": 1.0}},
        [1, 2],
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        loads(json.dumps(data))


def test_user_values_override_preset():
    cfg = from_dict({"scenario": "problem4", "run": {"gammas": [22], "max_steps": 40}})
    assert cfg.run.gammas == [22] and cfg.run.max_steps == 40
    assert cfg.run.steps_per_instance == 10


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("nope")


def test_solver_options_mapping():
    opts = from_dict({"scenario": "problem3", "solver": {"feastol": 1e-7}}).solver.options()
    assert opts.feastol == 1e-7 and opts.fd_step == 1e-6
