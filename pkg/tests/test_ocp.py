import numpy as np
import pytest

from flexmpc.errors import ContractError
from flexmpc.lyapunov import adc_residual, lyapunov_values, state_norm_gdclf
from flexmpc.model import BoxSet, rollout
from flexmpc.ocp import (
    OcpSpec,
    QuadraticStageCost,
    QuadraticTerminalCost,
    adc_value,
    build_flexstep_nlp,
    build_standard_nlp,
    objective_gdclf,
    predicted_trajectory,
    shift_warm_start,
)

X0 = np.array([1.0, 2.0, 3.0, 5.0])


def test_problem3_instance_shape(brockett, problem3_spec):
    inst = build_flexstep_nlp(brockett, problem3_spec, X0)
    assert inst.dim == 20
    assert inst.n_constraints == 1
    assert inst.lower is None and inst.upper is None
    assert inst.metadata["V0"] == 39.0
    assert inst.metadata["alpha0"] == pytest.approx(1e-5 * 39.0**2)


def test_objective_matches_rollout(brockett, problem3_spec, rng):
    inst = build_flexstep_nlp(brockett, problem3_spec, X0)
    f0 = QuadraticStageCost()
    for _ in range(20):
        z = rng.normal(size=20)
        U = z.reshape(10, 2)
        xs = rollout(brockett, X0, U)
        expected = float(np.sum(f0(xs[:10], U)))
        assert float(inst.objective(z)) * inst.metadata["scale"] == pytest.approx(expected, rel=1e-13)


def test_adc_constraint_consistent_with_lyapunov_module(brockett, problem3_spec, rng):
    g = problem3_spec.gdclf
    inst = build_flexstep_nlp(brockett, problem3_spec, X0)
    for _ in range(50):
        z = rng.normal(size=20)
        Vs = lyapunov_values(brockett, g, X0, z.reshape(10, 2))
        direct = adc_residual(g, 39.0, 1e-5 * 39.0**2, Vs)
        assert float(adc_value(inst, z)) == pytest.approx(float(direct), rel=1e-12, abs=1e-12)


def test_batch_evaluation_matches_single(brockett, problem3_spec, rng):
    inst = build_flexstep_nlp(brockett, problem3_spec, X0)
    Z = rng.normal(size=(8, 20))
    np.testing.assert_allclose(inst.objective(Z), [inst.objective(z) for z in Z], rtol=1e-14)
    np.testing.assert_allclose(inst.constraint_values(Z), [inst.constraint_values(z) for z in Z], rtol=1e-14)


def test_frozen_metadata_rebuild_identical(brockett, problem3_spec, rng):
    a = build_flexstep_nlp(brockett, problem3_spec, X0)
    b = build_flexstep_nlp(brockett, problem3_spec, X0)
    z = rng.normal(size=20)
    assert a.objective(z) == b.objective(z)
    assert np.array_equal(a.constraint_values(z), b.constraint_values(z))


def test_origin_zero_inputs_feasible(brockett, problem3_spec):
    inst = build_flexstep_nlp(brockett, problem3_spec, np.zeros(4))
    z = np.zeros(20)
    assert float(inst.objective(z)) == 0.0
    assert float(adc_value(inst, z)) <= 0.0


def test_objective_nonnegative(brockett, problem3_spec, rng):
    inst = build_flexstep_nlp(brockett, problem3_spec, X0)
    std = build_standard_nlp(brockett, problem3_spec, X0, 22.0)
    Z = rng.normal(0, 3, size=(200, 20))
    assert np.all(inst.objective(Z) >= 0) and np.all(std.objective(Z) >= 0)


def test_recovery_adc_equals_one_step_descent(brockett, rng):
    Np, gamma, eps = 10, 22.0, 1e-5
    g = objective_gdclf(brockett, Np, gamma=gamma, eps=eps)
    spec = OcpSpec(Np=Np, gdclf=g)
    assert spec.N == Np + 1
    f0 = QuadraticStageCost()

    def J(x, w):
        xs = rollout(brockett, x, w)
        return float(np.sum(f0(xs[:Np], w)) + gamma * xs[Np] @ xs[Np])

    for _ in range(100):
        x = rng.normal(size=4)
        u_prev = rng.normal(size=(Np, 2))
        inst = build_flexstep_nlp(brockett, spec, x, u_prev)
        z = rng.normal(size=inst.dim)
        U = z.reshape(Np + 1, 2)
        x1 = rollout(brockett, x, U[:1])[1]
        hand = J(x1, U[1 : Np + 1]) - J(x, u_prev) + eps * x @ x
        assert float(adc_value(inst, z)) == pytest.approx(hand, rel=1e-12, abs=1e-9)


def test_state_boxes_enter_as_constraints(brockett):
    X = BoxSet.symmetric(10.0, 4)
    spec = OcpSpec(Np=3, X=X, gdclf=state_norm_gdclf(2, [1, 1]))
    inst = build_flexstep_nlp(brockett, spec, X0)
    assert inst.n_constraints == 8 * 2 + 8 + 1
    assert inst.constraint_values(np.zeros(inst.dim)).shape == (25,)


def test_input_boxes_become_bounds(brockett):
    spec = OcpSpec(Np=3, U=BoxSet.symmetric(2.0, 2), gdclf=state_norm_gdclf(2, [1, 1]))
    inst = build_flexstep_nlp(brockett, spec, X0)
    np.testing.assert_array_equal(inst.lower, -2.0 * np.ones(6))


def test_contracts(brockett, problem3_spec):
    with pytest.raises(ContractError):
        OcpSpec(Np=0)
    with pytest.raises(ContractError):
        OcpSpec(Np=3, gdclf=state_norm_gdclf(4, [1, 1, 1, 1]))
    with pytest.raises(ContractError):
        build_standard_nlp(brockett, problem3_spec, X0, 0.0)
    with pytest.raises(ContractError):
        build_flexstep_nlp(brockett, OcpSpec(Np=3), X0)
    with pytest.raises(ContractError):
        build_flexstep_nlp(brockett, problem3_spec, np.zeros(3))
    with pytest.raises(ContractError):
        build_flexstep_nlp(brockett, OcpSpec(Np=3, X=BoxSet.symmetric(1.0, 4), gdclf=state_norm_gdclf(1, [1])), X0)


def test_standard_instance(brockett, problem3_spec, rng):
    inst = build_standard_nlp(brockett, problem3_spec, X0, 480.0)
    assert inst.dim == 20 and inst.n_constraints == 0
    z = rng.normal(size=20)
    xs = rollout(brockett, X0, z.reshape(10, 2))
    expected = float(np.sum(QuadraticStageCost()(xs[:10], z.reshape(10, 2))) + 480.0 * xs[10] @ xs[10])
    assert float(inst.objective(z)) == pytest.approx(expected, rel=1e-13)
    origin = build_standard_nlp(brockett, problem3_spec, np.zeros(4), 22.0)
    assert float(origin.objective(np.zeros(20))) == 0.0


def test_terminal_cost():
    assert QuadraticTerminalCost(2.0)(np.array([1.0, 2.0])) == 10.0


def test_predicted_trajectory(brockett, problem3_spec):
    inst = build_flexstep_nlp(brockett, problem3_spec, X0)
    U, xs = predicted_trajectory(brockett, inst, np.zeros(20))
    assert U.shape == (10, 2) and xs.shape == (11, 4)


def test_shift_warm_start():
    u = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(shift_warm_start(u, 1), [[2.0], [3.0], [0.0]])
    np.testing.assert_array_equal(shift_warm_start(u, 3), np.zeros((3, 1)))
    np.testing.assert_array_equal(shift_warm_start(u, 2, "repeat-last"), [[3.0], [3.0], [3.0]])
    with pytest.raises(ContractError):
        shift_warm_start(u, 0)
    with pytest.raises(ContractError):
        shift_warm_start(u, 1, "mirror")
