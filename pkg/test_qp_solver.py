#!/usr/bin/env python3
"""
Test QP Solver
Generalized SMO against closed-form cases and a dense SLSQP reference
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import brentq

from recourse.solvers.qp_solver import QuadraticProgram, kkt_residual, solve, solve_dense
from recourse.utils.errors import ConditioningError, ContractViolation, InfeasibleProblemError


def two_point_svm(nu=10.0):
    # x = +1 (y = +1) and x = -1 (y = -1): M_ij = y_i y_j x_i x_j = 1
    return QuadraticProgram(
        M=np.ones((2, 2)),
        e=-np.ones(2),
        a=np.array([1.0, -1.0]),
        lower=np.zeros(2),
        upper=np.full(2, nu),
    )


def random_qp(rng, m, zero_last_coef=False):
    A = rng.standard_normal((m, m + 2))
    M = A @ A.T / m
    e = rng.standard_normal(m)
    a = rng.choice([-1.0, 1.0], size=m) * rng.uniform(0.5, 2.0, size=m)
    if zero_last_coef:
        a[-1] = 0.0
    lower = -rng.uniform(0.1, 2.0, size=m)
    upper = rng.uniform(0.1, 2.0, size=m)
    return QuadraticProgram(M=M, e=e, a=a, lower=lower, upper=upper)


def project(v, qp):
    """Euclidean projection onto {lower <= μ <= upper, a·μ = 0} by bisection on the multiplier"""
    def imbalance(tau):
        return float(qp.a @ np.clip(v - tau * qp.a, qp.lower, qp.upper))

    bound = 1e3 * (1.0 + float(np.max(np.abs(v))))
    tau = brentq(imbalance, -bound, bound, xtol=1e-15, rtol=1e-15)
    return np.clip(v - tau * qp.a, qp.lower, qp.upper)


def projected_gradient(qp, iterations=5000):
    step = 1.0 / float(np.linalg.eigvalsh(qp.M)[-1])
    mu = project(np.zeros(qp.m), qp)
    for _ in range(iterations):
        mu = project(mu - step * qp.gradient(mu), qp)
    return mu


def test_two_point_closed_form():
    sol = solve(two_point_svm())
    assert sol.converged
    assert_allclose(sol.mu, [0.5, 0.5], atol=1e-10)
    assert sol.objective == pytest.approx(-0.5)
    assert sol.kkt_residual <= 1e-6


def test_kkt_residual_at_origin():
    qp = two_point_svm()
    assert kkt_residual(qp, np.zeros(2)) == pytest.approx(1.0, abs=1e-9)


def test_kkt_residual_counts_equality_violation():
    qp = two_point_svm()
    # stationary-looking point that breaks a·μ = 0 by 0.2
    assert kkt_residual(qp, np.array([0.6, 0.4])) >= 0.2 - 1e-12


@pytest.mark.parametrize("seed", range(12))
def test_matches_dense_reference(seed):
    rng = np.random.default_rng(seed)
    qp = random_qp(rng, m=int(rng.integers(3, 15)), zero_last_coef=seed % 3 == 0)
    sol = solve(qp, tol=1e-8, max_iters=20000)
    dense = solve_dense(qp, tol=1e-8)

    assert sol.converged
    assert abs(float(qp.a @ sol.mu)) <= 1e-9
    assert np.all(sol.mu >= qp.lower) and np.all(sol.mu <= qp.upper)
    scale = max(1.0, abs(dense.objective))
    assert sol.objective <= dense.objective + 1e-6 * scale
    assert sol.objective == pytest.approx(dense.objective, abs=1e-5 * scale)


def test_objective_history_is_monotone():
    rng = np.random.default_rng(3)
    sol = solve(random_qp(rng, m=12), record_history=True)
    history = np.array(sol.history)
    assert len(history) >= 2
    assert np.all(np.diff(history) <= 1e-12 * np.maximum(1.0, np.abs(history[1:])))


def test_deterministic():
    rng = np.random.default_rng(11)
    qp = random_qp(rng, m=10)
    first, second = solve(qp), solve(qp)
    assert np.array_equal(first.mu, second.mu)
    assert first.iterations == second.iterations


def test_zero_coefficient_variable_is_optimized_alone():
    # second variable does not enter the equality; its optimum is -e/M = 0.5 inside the box
    qp = QuadraticProgram(
        M=np.diag([1.0, 2.0]),
        e=np.array([0.0, -1.0]),
        a=np.array([1.0, 0.0]),
        lower=np.array([-1.0, -1.0]),
        upper=np.array([1.0, 1.0]),
    )
    sol = solve(qp)
    assert sol.converged
    assert_allclose(sol.mu, [0.0, 0.5], atol=1e-9)


def test_fixed_variable_stays_at_zero():
    qp = QuadraticProgram(
        M=np.ones((3, 3)),
        e=np.array([-1.0, -1.0, 0.0]),
        a=np.array([1.0, -1.0, 0.7]),
        lower=np.array([0.0, 0.0, -0.0]),
        upper=np.array([10.0, 10.0, 0.0]),
    )
    sol = solve(qp)
    assert sol.mu[2] == 0.0
    assert_allclose(sol.mu[:2], [0.5, 0.5], atol=1e-9)


def test_infeasible_equality():
    qp = QuadraticProgram(
        M=np.eye(2), e=np.zeros(2), a=np.ones(2), lower=np.ones(2), upper=np.full(2, 2.0)
    )
    with pytest.raises(InfeasibleProblemError):
        solve(qp)


def test_empty_box_is_infeasible():
    qp = QuadraticProgram(
        M=np.eye(2), e=np.zeros(2), a=np.array([1.0, -1.0]), lower=np.array([0.0, 1.0]), upper=np.array([1.0, 0.0])
    )
    with pytest.raises(InfeasibleProblemError):
        solve(qp)


def test_indefinite_matrix_raises_after_jitter():
    qp = QuadraticProgram(
        M=np.diag([1.0, -1.0]), e=np.zeros(2), a=np.array([1.0, -1.0]), lower=-np.ones(2), upper=np.ones(2)
    )
    with pytest.raises(ConditioningError):
        solve(qp)


def test_tiny_negative_eigenvalue_is_tolerated():
    M = np.ones((2, 2))
    M[0, 0] -= 1e-9
    qp = QuadraticProgram(M=M, e=-np.ones(2), a=np.array([1.0, -1.0]), lower=np.zeros(2), upper=np.full(2, 10.0))
    assert solve(qp).converged


def test_asymmetric_matrix_rejected():
    qp = QuadraticProgram(
        M=np.array([[1.0, 0.5], [0.0, 1.0]]), e=np.zeros(2), a=np.ones(2), lower=-np.ones(2), upper=np.ones(2)
    )
    with pytest.raises(ContractViolation):
        solve(qp)


def test_shape_mismatch_rejected():
    with pytest.raises(ContractViolation):
        QuadraticProgram(M=np.eye(3), e=np.zeros(2), a=np.ones(3), lower=np.zeros(3), upper=np.ones(3))


def test_kkt_residual_grows_away_from_optimum():
    # (0.5 + δ, 0.5 + δ) keeps a·μ = 0 and both variables free; the gradient is 2δ on each
    qp = two_point_svm()
    residuals = [kkt_residual(qp, np.array([0.5 + delta, 0.5 + delta])) for delta in (0.0, 0.01, 0.05, 0.1, 0.4)]
    assert residuals[0] <= 1e-12
    assert np.all(np.diff(residuals) > 0.0)
    assert residuals[-1] == pytest.approx(0.8, abs=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(4))
def test_matches_projected_gradient(seed):
    rng = np.random.default_rng(100 + seed)
    m = int(rng.integers(3, 7))
    A = rng.standard_normal((m, 3 * m))
    qp = QuadraticProgram(
        M=A @ A.T / m,
        e=rng.standard_normal(m),
        a=rng.choice([-1.0, 1.0], size=m) * rng.uniform(0.5, 2.0, size=m),
        lower=-rng.uniform(0.1, 2.0, size=m),
        upper=rng.uniform(0.1, 2.0, size=m),
    )
    reference = projected_gradient(qp)
    sol = solve(qp, tol=1e-8, dense_fallback_limit=0)

    scale = max(1.0, abs(qp.objective(reference)))
    assert sol.converged
    assert sol.objective <= qp.objective(reference) + 1e-6 * scale
    assert sol.objective == pytest.approx(qp.objective(reference), abs=1e-6 * scale)


def test_default_budget_converges_on_larger_problem():
    rng = np.random.default_rng(21)
    m = 80
    A = rng.standard_normal((m, 2 * m))
    qp = QuadraticProgram(
        M=A @ A.T / m,
        e=rng.standard_normal(m),
        a=rng.choice([-1.0, 1.0], size=m),
        lower=np.zeros(m),
        upper=np.full(m, 5.0),
    )
    sol = solve(qp, dense_fallback_limit=0)
    assert sol.converged
    assert sol.method == "smo"
    assert sol.kkt_residual <= 1e-6
