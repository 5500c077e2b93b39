"""
Equal Recourse - Re-weighting Equalizer
Weights negatively predicted points by their normalized minimum average
distance and retrains the black box once
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from recourse.classifiers.blackbox import BlackBoxSpec, FittedBlackBox, fit, predict
from recourse.explainers.local_explainer import (
    ExplainerConfig,
    NeighborhoodSet,
    average_distances,
    select_neighborhoods,
)
from recourse.models.dataset import GroupedDataset
from recourse.models.evaluation import RecourseEvaluation, group_recourse
from recourse.utils.errors import ContractViolation, DataError, EqualizationError, NumericError

logger = logging.getLogger(__name__)

DISTANCE_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class ReweightResult:
    """
    Outcome of one equalization pass.
    - weights: 1 for predicted positives, namd in (0, 1] for predicted negatives
    - sets / sets_after: the same samples, labelled by the model before and after retraining
    """

    weights: np.ndarray
    before: RecourseEvaluation
    after: RecourseEvaluation
    model_before: FittedBlackBox
    model_after: FittedBlackBox
    sets: tuple = ()
    sets_after: tuple = ()


def compute_namd(distances: Sequence[float], predictions: Sequence[int]) -> np.ndarray:
    """min distance over predicted negatives divided by each negative's distance"""
    distances = np.asarray(distances, dtype=np.float64).ravel()
    predictions = np.asarray(predictions).ravel()
    if distances.shape != predictions.shape:
        raise ContractViolation(f"{distances.shape[0]} distances for {predictions.shape[0]} predictions")

    weights = np.ones(distances.shape[0])
    negatives = predictions == -1
    if not negatives.any():
        return weights

    negative_distances = distances[negatives]
    if np.any(negative_distances < 0):
        raise ContractViolation("distances must be non-negative")
    if np.any(negative_distances < DISTANCE_FLOOR):
        logger.warning(
            f"⚠️ {int(np.sum(negative_distances < DISTANCE_FLOOR))} negative point(s) at zero distance; "
            f"clamping to {DISTANCE_FLOOR}"
        )
        negative_distances = np.maximum(negative_distances, DISTANCE_FLOOR)
    weights[negatives] = negative_distances.min() / negative_distances
    return weights


def estimate_group_recourse(
    ds: GroupedDataset, bb: FittedBlackBox, sets: List[NeighborhoodSet], cfg: ExplainerConfig
) -> RecourseEvaluation:
    """Group recourse of any dataset from estimated distances against fixed sets"""
    distances = average_distances(ds, bb, cfg, sets=sets)
    return group_recourse(distances, predict(bb, ds.features), ds.groups)


def equalize(ds: GroupedDataset, spec: BlackBoxSpec, cfg: ExplainerConfig) -> ReweightResult:
    """Unit-weight fit, namd re-weighting, single retrain; same sets before and after"""
    if not (np.any(ds.groups == 1) and np.any(ds.groups == -1)):
        raise DataError("equalization needs both groups present")

    stage = "fit_before"
    try:
        model_before = fit(spec, ds, np.ones(ds.n_samples))

        stage = "explain_before"
        sets = select_neighborhoods(ds, model_before, cfg)
        distances = average_distances(ds, model_before, cfg, sets=sets)
        predictions = predict(model_before, ds.features)
        before = group_recourse(distances, predictions, ds.groups)

        stage = "reweight"
        weights = compute_namd(distances, predictions)

        stage = "fit_after"
        model_after = fit(spec, ds, weights)

        stage = "explain_after"
        sets_after = [ns.relabel(model_after, cfg.ridge_alpha) for ns in sets]
        after = estimate_group_recourse(ds, model_after, sets_after, cfg)
    except NumericError as e:
        raise EqualizationError(str(e), stage) from e

    logger.info(
        f"📊 Equalized {spec.kind.value}: u_abs {before.u_abs:.4f} -> {after.u_abs:.4f} "
        f"(min weight {weights.min():.3f})"
    )
    return ReweightResult(
        weights=weights,
        before=before,
        after=after,
        model_before=model_before,
        model_after=model_after,
        sets=tuple(sets),
        sets_after=tuple(sets_after),
    )
