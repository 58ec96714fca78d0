import numpy as np
import pytest

from ofu_lqr import CostPair, DynamicsParameter, NoiseModel, Policy, run_policy, solve_dare, step
from ofu_lqr.exceptions import BlowUpError, DimensionError, NotStabilizableError
from ofu_lqr.simulate import ce_estimate, certainty_equivalence_policy, propagate

from conftest import K_SCALAR, L_SCALAR


def test_step_example():
    th = DynamicsParameter([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]])
    assert np.allclose(step(th, [1, 0], [1], [0, 0]), [1, 1])
    with pytest.raises(DimensionError):
        step(th, [1, 0, 0], [1], [0, 0])


def test_zero_noise_optimal_from_origin(scalar_theta, unit_cost, scalar_noise):
    rec = run_policy(scalar_theta, unit_cost, scalar_noise, Policy.optimal(), 50, zero_noise=True)
    assert not rec.states.any()
    assert np.allclose(rec.regret, -K_SCALAR * np.arange(1, 51))


def test_record_shapes_and_regret(scalar_theta, unit_cost, scalar_noise):
    rec = run_policy(scalar_theta, unit_cost, scalar_noise, Policy.optimal(), 200, seed=4)
    assert rec.states.shape == (201, 1)
    assert rec.inputs.shape == (200, 1)
    assert rec.costs.shape == (200,)
    assert rec.J_star == pytest.approx(K_SCALAR)
    assert np.allclose(rec.inputs[:, 0], L_SCALAR * rec.states[:-1, 0])
    x = rec.states[1:, 0]
    assert np.allclose(rec.costs, x**2 * (1 + L_SCALAR**2))
    assert rec.regret_at(0) == 0.0
    assert rec.regret_at(200) == pytest.approx(rec.costs.sum() - 200 * K_SCALAR)


def test_determinism_and_prefix(scalar_theta, unit_cost, scalar_noise):
    a = run_policy(scalar_theta, unit_cost, scalar_noise, Policy.optimal(), 5000, seed=9)
    b = run_policy(scalar_theta, unit_cost, scalar_noise, Policy.optimal(), 5000, seed=9)
    c = run_policy(scalar_theta, unit_cost, scalar_noise, Policy.optimal(), 300, seed=9)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.regret[:300], c.regret)
    d = run_policy(scalar_theta, unit_cost, scalar_noise, Policy.optimal(), 300, seed=10)
    assert not np.array_equal(c.states, d.states)


def test_propagate_matches_loop():
    rng = np.random.default_rng(0)
    for p in (1, 3):
        D = 0.3 * rng.standard_normal((p, p))
        W = rng.standard_normal((5000, p))
        x0 = rng.standard_normal(p)
        X = propagate(D, x0, W)
        x = x0.copy()
        for t in range(5000):
            x = D @ x + W[t]
        assert np.allclose(X[-1], x)


def test_blow_up_guard():
    th = DynamicsParameter([[1.5]], [[1.0]])
    cost = CostPair([[1.0]], [[1.0]])
    with pytest.raises(BlowUpError) as err:
        run_policy(th, cost, NoiseModel.gaussian([[1.0]]), Policy.fixed([[0.0]]), 10_000, seed=0)
    assert err.value.step > 0


def test_not_stabilizable_plant():
    th = DynamicsParameter([[2.0]], [[0.0]])
    with pytest.raises(NotStabilizableError):
        run_policy(th, CostPair([[1.0]], [[1.0]]), NoiseModel.gaussian([[1.0]]), Policy.fixed([[0.0]]), 10)


def test_fixed_gain_shape_check(scalar_theta, unit_cost, scalar_noise):
    with pytest.raises(DimensionError):
        run_policy(scalar_theta, unit_cost, scalar_noise, Policy.fixed([[0.0, 1.0]]), 10)


def test_ce_exact_recovery_without_noise():
    th = DynamicsParameter([[0.5, 0.2], [0.1, 0.3]], [[1.0], [0.5]])
    rng = np.random.default_rng(0)
    states = [rng.standard_normal(2)]
    inputs = []
    for _ in range(10):
        u = rng.standard_normal(1)
        inputs.append(u)
        states.append(th.A @ states[-1] + th.B @ u)
    est = ce_estimate(np.array(states), np.array(inputs), ridge=0.0)
    assert np.allclose(est.matrix, th.matrix, atol=1e-9)


def test_ce_policy_fallback_and_estimate():
    cost = CostPair(np.eye(2), [[1.0]])
    u, gain = certainty_equivalence_policy((np.ones((2, 2)), np.ones((1, 1))), cost, [[0.1, 0.2]])
    assert np.allclose(gain, [[0.1, 0.2]])
    assert u == pytest.approx([0.3])


def test_ce_run_approaches_optimal_gain(scalar_theta, unit_cost, scalar_noise):
    rec = run_policy(scalar_theta, unit_cost, scalar_noise, Policy.certainty_equivalence([[-0.5]]), 4000, seed=1)
    final = rec.inputs[-1, 0] / rec.states[-2, 0]
    assert final == pytest.approx(L_SCALAR, abs=0.05)


def test_ofu_kind_rejected(scalar_theta, unit_cost, scalar_noise):
    with pytest.raises(ValueError):
        run_policy(scalar_theta, unit_cost, scalar_noise, Policy("ofu"), 10)


@pytest.mark.parametrize("A,B,x,u,w,expected", [
    (np.eye(2), np.eye(2), [1, 0], [0, 0], [0, 0], [1, 0]),
    (np.zeros((2, 2)), np.eye(2), [7, -3], [2, 3], [1, -1], [3, 2]),
    ([[0.9]], [[1.0]], [1.0], [-0.5], [0.1], [0.5]),
])
def test_step_spec_examples(A, B, x, u, w, expected):
    assert np.allclose(step(DynamicsParameter(A, B), x, u, w), expected)


def test_zero_horizon(scalar_theta, unit_cost, scalar_noise):
    rec = run_policy(scalar_theta, unit_cost, scalar_noise, Policy.optimal(), 0, x0=[2.0])
    assert rec.costs.shape == (0,) and rec.regret.shape == (0,)
    assert np.array_equal(rec.states, [[2.0]])


def _exciting_history(th, n, rng):
    states = [rng.standard_normal(th.p)]
    inputs = []
    for _ in range(n):
        u = rng.standard_normal(th.r)
        inputs.append(u)
        states.append(th.A @ states[-1] + th.B @ u)
    return np.array(states), np.array(inputs)


def test_ce_a_zero_gain_is_zero():
    th = DynamicsParameter(np.zeros((2, 2)), np.eye(2))
    cost = CostPair(np.eye(2), np.eye(2))
    history = _exciting_history(th, 20, np.random.default_rng(0))
    u, gain = certainty_equivalence_policy(history, cost, np.eye(2))
    assert np.abs(gain).max() < 1e-6


def test_ce_random_system_long_prefix():
    rng = np.random.default_rng(5)
    th = DynamicsParameter(0.5 * rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
    cost = CostPair(np.eye(2), np.eye(2))
    states, inputs = _exciting_history(th, 200, rng)
    Z = np.hstack([states[:-1], inputs])
    oracle = np.linalg.solve(Z.T @ Z, Z.T @ states[1:]).T
    est = ce_estimate(states, inputs)
    assert np.linalg.norm(est.matrix - oracle, 2) < 1e-6
    assert np.linalg.norm(est.matrix - th.matrix, 2) < 1e-6
    _, gain = certainty_equivalence_policy((states, inputs), cost, np.zeros((2, 2)))
    assert np.linalg.norm(gain - solve_dare(th, cost).L) < 1e-4


def test_ce_zero_history_uses_initial_gain():
    cost = CostPair([[1.0]], [[1.0]])
    u, gain = certainty_equivalence_policy((np.array([[2.0]]), np.zeros((0, 1))), cost, [[-0.25]])
    assert u == pytest.approx([-0.5])
