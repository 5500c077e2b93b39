#!/usr/bin/env python3
"""
Test Re-weighting Equalizer
namd weights and the fit / explain / reweight / refit pipeline
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from recourse.classifiers.blackbox import BlackBoxKind, BlackBoxSpec
from recourse.explainers import reweight_equalizer
from recourse.explainers.local_explainer import ExplainerConfig
from recourse.explainers.reweight_equalizer import DISTANCE_FLOOR, compute_namd, equalize
from recourse.models.dataset import SyntheticSpec, make_synthetic
from recourse.utils.errors import ContractViolation, DegenerateNeighborhoodError, EqualizationError

SMALL_EXPLAINER = ExplainerConfig(n_samples=300, n_sets=1, n_candidates=2, top_k=2, seed=3)


@pytest.fixture(scope="module")
def dataset():
    return make_synthetic(SyntheticSpec(n_per_cell=20, seed=11))


def test_namd_example():
    assert_allclose(compute_namd([1.0, 2.0, 4.0], [-1, -1, -1]), [1.0, 0.5, 0.25])


def test_namd_positives_keep_unit_weight():
    assert_allclose(compute_namd([0.0, 2.0, 5.0, 4.0], [1, -1, 1, -1]), [1.0, 1.0, 1.0, 0.5])


def test_namd_equal_distances():
    assert_allclose(compute_namd([3.0, 3.0, 3.0], [-1, -1, -1]), [1.0, 1.0, 1.0])


def test_namd_single_negative():
    assert_allclose(compute_namd([0.4, 0.0], [-1, 1]), [1.0, 1.0])


def test_namd_without_negatives():
    assert_allclose(compute_namd([0.0, 0.0], [1, 1]), [1.0, 1.0])


def test_namd_clamps_zero_distance():
    weights = compute_namd([0.0, 1.0], [-1, -1])
    assert weights[0] == 1.0
    assert weights[1] == pytest.approx(DISTANCE_FLOOR)


def test_namd_rejects_bad_input():
    with pytest.raises(ContractViolation):
        compute_namd([1.0, 2.0], [-1])
    with pytest.raises(ContractViolation):
        compute_namd([-1.0, 2.0], [-1, -1])


def test_equalize_weight_bounds(dataset):
    result = equalize(dataset, BlackBoxSpec(kind=BlackBoxKind.LOGISTIC, epochs=200), SMALL_EXPLAINER)
    negatives = result.before.negatives_pos_group + result.before.negatives_neg_group
    assert negatives > 0
    assert np.all(result.weights > 0.0) and np.all(result.weights <= 1.0)
    assert np.sum(result.weights < 1.0) <= negatives
    assert result.after.u_abs >= 0.0


def test_equalize_reuses_neighborhood_samples(dataset):
    result = equalize(dataset, BlackBoxSpec(kind=BlackBoxKind.LOGISTIC, epochs=200), SMALL_EXPLAINER)
    assert len(result.sets) == len(result.sets_after) == SMALL_EXPLAINER.n_sets
    for before, after in zip(result.sets, result.sets_after):
        assert after.samples is before.samples


@pytest.mark.slow
def test_equalize_is_deterministic(dataset):
    spec = BlackBoxSpec(kind=BlackBoxKind.ADABOOST, n_stumps=5)
    first = equalize(dataset, spec, SMALL_EXPLAINER)
    second = equalize(dataset, spec, SMALL_EXPLAINER)
    assert_array_equal(first.weights, second.weights)
    assert first.after.u_abs == second.after.u_abs


def test_equalize_reports_failing_stage(monkeypatch, dataset):
    def no_sets(ds, bb, cfg):
        raise DegenerateNeighborhoodError("every neighborhood candidate was labelled with a single class")

    monkeypatch.setattr(reweight_equalizer, "select_neighborhoods", no_sets)
    with pytest.raises(EqualizationError) as info:
        equalize(dataset, BlackBoxSpec(epochs=50), SMALL_EXPLAINER)
    assert info.value.stage == "explain_before"


@pytest.mark.slow
def test_equalize_completes_on_shifted_layout_across_seeds():
    downweighted = 0
    for seed in range(10):
        ds = make_synthetic(SyntheticSpec(n_per_cell=50, seed=seed))
        cfg = ExplainerConfig(n_samples=1000, n_sets=1, n_candidates=2, top_k=2, seed=seed)
        result = equalize(ds, BlackBoxSpec(kind=BlackBoxKind.LOGISTIC), cfg)

        assert np.all(result.weights > 0.0) and np.all(result.weights <= 1.0)
        assert np.isfinite(result.after.u_abs)
        negatives = result.weights < 1.0
        far = result.weights[negatives & (ds.groups == -1)]
        near = result.weights[negatives & (ds.groups == 1)]
        if far.size and near.size and far.mean() < near.mean():
            downweighted += 1
    assert downweighted >= 8
