#!/usr/bin/env python3
"""
Test Kernels
Scalar kernel values, Gram matrices and cost scaling
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from recourse.solvers.kernels import (
    CostMatrix,
    KernelKind,
    KernelSpec,
    apply_cost,
    gram,
    k,
    parse_kernel,
)
from recourse.utils.errors import ContractViolation, UsageError

KERNELS = [
    KernelSpec(KernelKind.LINEAR),
    KernelSpec(KernelKind.POLYNOMIAL, degree=3, coef0=1.0),
    KernelSpec(KernelKind.RBF, gamma=0.7),
]


def test_polynomial_unit_example():
    spec = KernelSpec(KernelKind.POLYNOMIAL, degree=2, coef0=0.0, scale=1.0)
    assert k(spec, [1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)


def test_linear_is_dot_product():
    assert k(KernelSpec(), [1.0, 2.0, 3.0], [4.0, 5.0, 6.0]) == 32.0


def test_rbf_default_gamma_is_one_over_d():
    x, y = np.array([0.0, 1.0]), np.array([1.0, 3.0])
    expected = np.exp(-np.sum((x - y) ** 2) / 2.0)
    assert k(KernelSpec(KernelKind.RBF), x, y) == pytest.approx(expected)


def test_polynomial_default_scale_is_one_over_d():
    resolved = KernelSpec(KernelKind.POLYNOMIAL, degree=2).resolve(4)
    assert resolved.scale == 0.25


@pytest.mark.parametrize("spec", KERNELS, ids=lambda s: s.label())
def test_gram_matches_scalar_kernel(spec):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    Y = rng.standard_normal((4, 3))
    G = gram(spec, X, Y)
    expected = np.array([[k(spec, x, y) for y in Y] for x in X])
    assert_allclose(G, expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("spec", KERNELS, ids=lambda s: s.label())
def test_scalar_kernel_is_symmetric(spec):
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    assert k(spec, x, y) == k(spec, y, x)


def test_gram_psd_on_random_points():
    X = np.random.default_rng(2).standard_normal((20, 3))
    for spec in KERNELS:
        assert np.linalg.eigvalsh(gram(spec, X)).min() >= -1e-8


def test_dimension_mismatch():
    with pytest.raises(ContractViolation):
        k(KernelSpec(), [1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ContractViolation):
        gram(KernelSpec(), np.ones((2, 2)), np.ones((2, 3)))


def test_cost_scaling():
    cost = CostMatrix((1.0, 2.0))
    assert_allclose(apply_cost(cost, np.array([[1.0, 1.0], [3.0, -1.0]])), [[1.0, 2.0], [3.0, -2.0]])
    assert CostMatrix.identity(3).is_identity()
    assert not cost.is_identity()


def test_cost_must_be_positive():
    with pytest.raises(ContractViolation):
        CostMatrix((1.0, 0.0))
    with pytest.raises(ContractViolation):
        apply_cost(CostMatrix((1.0, 2.0)), np.ones(3))


def test_parse_kernel():
    assert parse_kernel("linear").kind is KernelKind.LINEAR
    poly = parse_kernel("poly:3")
    assert poly.kind is KernelKind.POLYNOMIAL and poly.degree == 3
    rbf = parse_kernel("rbf:0.5")
    assert rbf.kind is KernelKind.RBF and rbf.gamma == 0.5
    assert parse_kernel("rbf").gamma is None


@pytest.mark.parametrize("text", ["sigmoid", "poly:x", "rbf:-1", "poly:0"])
def test_parse_kernel_rejects(text):
    with pytest.raises((UsageError, ContractViolation)):
        parse_kernel(text)


def test_kernel_spec_serialization_is_exact():
    spec = KernelSpec(KernelKind.POLYNOMIAL, degree=5, coef0=0.1, scale=1.0 / 3.0)
    assert KernelSpec.from_dict(spec.to_dict()) == spec


def test_identity_cost_leaves_points_unchanged():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert_allclose(apply_cost(CostMatrix.identity(2), x), x)
    with pytest.raises(ContractViolation):
        apply_cost(CostMatrix.identity(3), x)
