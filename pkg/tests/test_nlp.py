import csv

import numpy as np
import pytest

from flexmpc.errors import InvalidStart, NonFiniteSample
from flexmpc.nlp import (
    BUDGET_EXHAUSTED,
    FEASIBLE_SUBOPTIMAL,
    INFEASIBLE,
    OPTIMAL,
    NlpInstance,
    SolverOptions,
    _Merit,
    gradient_fd,
    gradient_forward,
    minimize,
    write_history_csv,
)

OPTS = SolverOptions()


def quadratic(c):
    c = np.asarray(c, float)
    return NlpInstance(dim=c.size, objective=lambda z: np.sum((z - c) ** 2, axis=-1))


def halfplane():
    # min z1^2 + z2^2 subject to z1 + z2 >= 1
    return NlpInstance(
        dim=2,
        objective=lambda z: np.sum(z**2, axis=-1),
        constraints=lambda z: (1.0 - z[..., 0] - z[..., 1])[..., None],
        n_constraints=1,
    )


def test_unconstrained_quadratic():
    res = minimize(quadratic([1.0, -2.0, 3.0]), np.zeros(3), OPTS)
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.z_star, [1.0, -2.0, 3.0], atol=OPTS.opttol)


def test_halfplane_kkt_point():
    res = minimize(halfplane(), np.zeros(2), OPTS)
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.z_star, [0.5, 0.5], atol=1e-5)
    assert res.objective == pytest.approx(0.5, abs=1e-5)
    assert res.max_violation <= OPTS.feastol
    assert res.multipliers[0] == pytest.approx(1.0, abs=1e-3)


def test_box_bounds_active():
    inst = NlpInstance(dim=2, objective=lambda z: np.sum((z - 2.0) ** 2, axis=-1), lower=-np.ones(2), upper=np.ones(2))
    res = minimize(inst, np.zeros(2), OPTS)
    np.testing.assert_allclose(res.z_star, [1.0, 1.0], atol=1e-8)
    assert res.success


def test_rosenbrock():
    def f(z):
        return 100 * (z[..., 1] - z[..., 0] ** 2) ** 2 + (1 - z[..., 0]) ** 2

    res = minimize(NlpInstance(dim=2, objective=f), [-1.2, 1.0], SolverOptions(max_inner=2000))
    np.testing.assert_allclose(res.z_star, [1.0, 1.0], atol=1e-3)


def test_infeasible_problem_is_reported():
    inst = NlpInstance(
        dim=1,
        objective=lambda z: z[..., 0] ** 2,
        constraints=lambda z: np.stack([1.0 - z[..., 0], z[..., 0] + 1.0], axis=-1),
        n_constraints=2,
    )
    res = minimize(inst, [0.0], SolverOptions(max_outer=8))
    assert res.status in (INFEASIBLE, BUDGET_EXHAUSTED)
    assert not res.success
    assert res.max_violation > 0.5


def test_unbounded_problem_is_budget_exhausted():
    inst = NlpInstance(dim=1, objective=lambda z: -z[..., 0], constraints=lambda z: -z, n_constraints=1)
    res = minimize(inst, [0.0], SolverOptions(max_outer=3, max_inner=50))
    assert res.status != OPTIMAL


def test_nonfinite_start_rejected():
    inst = NlpInstance(dim=1, objective=lambda z: np.log(z[..., 0]))
    with pytest.raises(InvalidStart):
        minimize(inst, [-1.0])
    with pytest.raises(InvalidStart):
        minimize(quadratic([0.0, 0.0]), np.zeros(3))


def test_feasible_start_dominance():
    # from a feasible point the answer can only improve
    rng = np.random.default_rng(3)
    for _ in range(20):
        z0 = rng.uniform(0.5, 2.0, 2)
        inst = halfplane()
        res = minimize(inst, z0, SolverOptions(max_outer=2, max_inner=3))
        assert res.objective <= float(inst.objective(z0)) + OPTS.opttol
        assert res.max_violation <= OPTS.feastol


def test_deterministic():
    opts = SolverOptions(record_history=True)
    a = minimize(halfplane(), [3.0, -1.0], opts)
    b = minimize(halfplane(), [3.0, -1.0], opts)
    assert np.array_equal(a.z_star, b.z_star)
    assert a.history == b.history


def test_status_optimal_implies_tolerances():
    res = minimize(halfplane(), [2.0, 2.0], OPTS)
    assert res.status == OPTIMAL
    assert res.max_violation <= OPTS.feastol and res.stationarity <= OPTS.opttol


def test_merit_nonincreasing_within_each_inner_solve():
    res = minimize(halfplane(), [3.0, -1.0], SolverOptions(record_history=True))
    rows = [r for r in res.history if r[1] >= 0]
    for outer in {r[0] for r in rows}:
        vals = [r[2] for r in rows if r[0] == outer]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_history_csv(tmp_path):
    res = minimize(halfplane(), [3.0, -1.0], SolverOptions(record_history=True))
    path = tmp_path / "h.csv"
    write_history_csv(res, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["outer", "inner", "objective", "violation", "penalty"]
    assert len(rows) == len(res.history) + 1


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(feastol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(penalty_growth=1.0)
    with pytest.raises(ValueError):
        SolverOptions(max_outer=0)
    assert SolverOptions().tightened().feastol == pytest.approx(1e-7)


def test_scalar_callables_supported():
    inst = NlpInstance(dim=2, objective=lambda z: float(np.sum((z - 1) ** 2)), vectorized=False)
    res = minimize(inst, np.zeros(2))
    np.testing.assert_allclose(res.z_star, [1.0, 1.0], atol=1e-5)


# ----------------------------------------------------------------------------- gradients

SMOOTH = [
    (lambda z: np.sum(z**2, axis=-1), lambda z: 2 * z),
    (lambda z: np.sin(z[..., 0]) * np.exp(0.3 * z[..., 1]), lambda z: np.array([np.cos(z[0]) * np.exp(0.3 * z[1]), 0.3 * np.sin(z[0]) * np.exp(0.3 * z[1])])),
    (lambda z: np.log1p(np.sum(z**2, axis=-1)), lambda z: 2 * z / (1 + z @ z)),
    (lambda z: z[..., 0] * z[..., 1] ** 3 - z[..., 2], lambda z: np.array([z[1] ** 3, 3 * z[0] * z[1] ** 2, -1.0])),
]


def test_gradient_examples():
    np.testing.assert_allclose(gradient_fd(lambda z: z @ z, [1.0, 2.0]), [2.0, 4.0], atol=1e-6)
    a = np.array([3.0, -1.0, 0.5])
    np.testing.assert_allclose(gradient_fd(lambda z: a @ z + 2.0, np.ones(3)), a, atol=1e-9)


@pytest.mark.parametrize("k", range(len(SMOOTH)))
def test_fd_matches_analytic(k):
    f, grad = SMOOTH[k]
    rng = np.random.default_rng(k)
    step = OPTS.fd_step
    for _ in range(20):
        dim = 3 if k == 3 else 2
        z = rng.normal(size=dim)
        np.testing.assert_allclose(gradient_fd(f, z, step), grad(z), atol=10 * step)
        np.testing.assert_allclose(gradient_fd(f, z, step, vectorized=True), grad(z), atol=10 * step)


def test_forward_and_central_agree_to_step_order():
    f, _ = SMOOTH[1]
    z = np.array([0.4, -0.7])
    assert np.max(np.abs(gradient_forward(f, z, 1e-6) - gradient_fd(f, z, 1e-6))) < 1e-5


def test_nonfinite_sample_names_component():
    def f(z):
        with np.errstate(invalid="ignore"):
            return np.sqrt(z[..., 1])

    with pytest.raises(NonFiniteSample) as info:
        gradient_fd(f, np.array([1.0, 0.0]), 1e-6)
    assert info.value.component == 1


def test_merit_matches_definition():
    inst = halfplane()
    lam, rho = np.array([0.7]), 10.0
    z = np.array([0.2, 0.3])
    c = float(inst.constraint_values(z)[0])
    expected = 0.13 + (max(0.0, 0.7 + rho * c) ** 2 - 0.49) / (2 * rho)
    assert float(_Merit(inst, lam, rho).value(z)) == pytest.approx(expected, rel=1e-14)


def test_first_problem3_instance_feasible(brockett, problem3_spec):
    from flexmpc.ocp import adc_value, build_flexstep_nlp

    inst = build_flexstep_nlp(brockett, problem3_spec, [1.0, 2.0, 3.0, 5.0])
    res = minimize(inst, np.ones(20), OPTS)
    assert res.success
    assert float(adc_value(inst, res.z_star)) <= OPTS.feastol
