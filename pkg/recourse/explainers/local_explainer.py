"""
Equal Recourse - Local Explainer
LIME-style local linear surrogates that estimate how far each point sits
from a black box's decision boundary
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from recourse.classifiers.blackbox import FittedBlackBox, predict
from recourse.models.dataset import GroupedDataset
from recourse.utils.errors import ContractViolation, DegenerateNeighborhoodError, DegenerateSurrogateError

logger = logging.getLogger(__name__)

_NORMALIZATION_MODES = ("range", "minmax")
COEF_NORM_EPS = 1e-10
WIDTH_DOUBLINGS = 6
MIN_LABEL_SHARE = 1e-3


@dataclass(frozen=True)
class ExplainerConfig:
    """
    Neighborhood sampling and surrogate settings.
    - kernel_width: None resolves to 0.75·√d
    - normalization: "range" divides by (max - min); "minmax" also shifts by min
    """

    n_samples: int = 5000
    n_sets: int = 2
    n_candidates: int = 5
    top_k: int = 10
    kernel_width: Optional[float] = None
    ridge_alpha: float = 1.0
    normalization: str = "range"
    seed: int = 0

    def __post_init__(self):
        if int(self.n_sets) < 1:
            raise ContractViolation(f"n_sets must be >= 1, got {self.n_sets}")
        if int(self.n_candidates) < int(self.n_sets):
            raise ContractViolation(f"n_candidates ({self.n_candidates}) must be >= n_sets ({self.n_sets})")
        if int(self.top_k) < 1:
            raise ContractViolation(f"top_k must be >= 1, got {self.top_k}")
        if self.kernel_width is not None and not self.kernel_width > 0:
            raise ContractViolation(f"kernel_width must be positive, got {self.kernel_width}")
        if not self.ridge_alpha > 0:
            raise ContractViolation(f"ridge_alpha must be positive, got {self.ridge_alpha}")
        if self.normalization not in _NORMALIZATION_MODES:
            raise ContractViolation(f"normalization must be one of {_NORMALIZATION_MODES}, got {self.normalization!r}")

    def width(self, n_features: int) -> float:
        return self.kernel_width if self.kernel_width is not None else 0.75 * np.sqrt(n_features)


@dataclass(frozen=True, eq=False)
class NeighborhoodSet:
    """Samples around the dataset mean, labelled by one black box"""

    samples: np.ndarray
    blackbox_labels: np.ndarray
    fidelity: float
    seed: int = 0

    def relabel(self, bb: FittedBlackBox, ridge_alpha: float = 1.0) -> "NeighborhoodSet":
        """Same samples, labels from another black box"""
        labels = predict(bb, self.samples)
        _check_both_labels(labels)
        return NeighborhoodSet(
            samples=self.samples,
            blackbox_labels=labels,
            fidelity=_global_fidelity(self.samples, labels, ridge_alpha),
            seed=self.seed,
        )


@dataclass(frozen=True, eq=False)
class LocalLinearModel:
    selected_features: np.ndarray
    coefficients: np.ndarray
    intercept: float


def _check_both_labels(labels: np.ndarray):
    if not (np.any(labels == 1) and np.any(labels == -1)):
        raise DegenerateNeighborhoodError(f"neighborhood labelled with a single class ({int(labels[0]):+d})")


def weighted_ridge(X: np.ndarray, y: np.ndarray, weights: np.ndarray, alpha: float) -> Tuple[np.ndarray, float]:
    """Closed-form weighted ridge on centered data; the intercept is not penalized"""
    total = float(weights.sum())
    if not total > 0:
        raise DegenerateSurrogateError("surrogate sample weights sum to zero")
    x_mean = weights @ X / total
    y_mean = float(weights @ y / total)
    Xc = X - x_mean
    gram = (Xc * weights[:, None]).T @ Xc
    rhs = Xc.T @ (weights * (y - y_mean))

    for attempt, penalty in enumerate((alpha, 10.0 * alpha)):
        try:
            coef = np.linalg.solve(gram + penalty * np.eye(X.shape[1]), rhs)
            break
        except np.linalg.LinAlgError as e:
            if attempt == 1:
                raise DegenerateSurrogateError(f"ridge normal equations singular even with alpha={penalty}") from e
            logger.warning(f"⚠️ Ridge normal equations singular with alpha={alpha}; retrying with {10.0 * alpha}")
    return coef, y_mean - float(x_mean @ coef)


def _global_fidelity(samples: np.ndarray, labels: np.ndarray, alpha: float) -> float:
    """Agreement between the black box and one global linear surrogate on the set"""
    coef, intercept = weighted_ridge(samples, labels.astype(np.float64), np.ones(samples.shape[0]), alpha)
    surrogate = np.where(samples @ coef + intercept >= 0.0, 1, -1)
    return float(np.mean(surrogate == labels))


def sample_neighborhood(
    ds: GroupedDataset, bb: FittedBlackBox, cfg: ExplainerConfig, seed: Optional[int] = None, scale: float = 1.0
) -> NeighborhoodSet:
    """Independent normal draws per feature around the dataset mean (sd = feature sd · scale)"""
    d = ds.n_features
    if bb.n_features != d:
        raise ContractViolation(f"black box expects {bb.n_features} features, dataset has {d}")
    if int(cfg.n_samples) < 10 * d:
        raise ContractViolation(f"n_samples must be >= 10·d = {10 * d}, got {cfg.n_samples}")

    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    means = ds.features.mean(axis=0)
    sds = ds.features.std(axis=0, ddof=1) if ds.n_samples > 1 else np.zeros(d)
    samples = means + (sds * scale) * rng.standard_normal((int(cfg.n_samples), d))

    labels = predict(bb, samples)
    _check_both_labels(labels)
    return NeighborhoodSet(
        samples=samples,
        blackbox_labels=labels,
        fidelity=_global_fidelity(samples, labels, cfg.ridge_alpha),
        seed=int(seed),
    )


def _draw_set(ds: GroupedDataset, bb: FittedBlackBox, cfg: ExplainerConfig, seed: int) -> NeighborhoodSet:
    try:
        return sample_neighborhood(ds, bb, cfg, seed=seed)
    except DegenerateNeighborhoodError as e:
        logger.warning(f"⚠️ {e}; resampling once with doubled spread")
        return sample_neighborhood(ds, bb, cfg, seed=seed, scale=2.0)


def select_neighborhoods(ds: GroupedDataset, bb: FittedBlackBox, cfg: ExplainerConfig) -> List[NeighborhoodSet]:
    """Draw n_candidates sets and keep the n_sets with the best fidelity (stable on ties)"""
    children = np.random.SeedSequence(cfg.seed).spawn(int(cfg.n_candidates))
    candidates = []
    for child in children:
        seed = int(child.generate_state(1)[0])
        try:
            candidates.append(_draw_set(ds, bb, cfg, seed))
        except DegenerateNeighborhoodError as e:
            logger.warning(f"⚠️ Dropping neighborhood candidate (seed {seed}): {e}")

    if not candidates:
        raise DegenerateNeighborhoodError("every neighborhood candidate was labelled with a single class")
    ranked = sorted(candidates, key=lambda ns: -ns.fidelity)
    chosen = ranked[: int(cfg.n_sets)]
    logger.debug(f"Neighborhood fidelities kept: {[round(ns.fidelity, 4) for ns in chosen]}")
    return chosen


def _fit_weighted(samples: np.ndarray, targets: np.ndarray, weights: np.ndarray, cfg: ExplainerConfig) -> LocalLinearModel:
    d = samples.shape[1]
    coef_all, _ = weighted_ridge(samples, targets, weights, cfg.ridge_alpha)
    k = min(int(cfg.top_k), d)
    selected = np.sort(np.argsort(-np.abs(coef_all), kind="stable")[:k])

    coef, intercept = weighted_ridge(samples[:, selected], targets, weights, cfg.ridge_alpha)
    if np.linalg.norm(coef) <= COEF_NORM_EPS:
        raise DegenerateSurrogateError("local surrogate has (near) zero coefficients")
    return LocalLinearModel(selected_features=selected, coefficients=coef, intercept=intercept)


def _minority_share(weights: np.ndarray, targets: np.ndarray) -> float:
    total = float(weights.sum())
    if not total > 0:
        return 0.0
    positive = float(weights[targets > 0].sum()) / total
    return min(positive, 1.0 - positive)


def fit_local(ns: NeighborhoodSet, x: Sequence[float], cfg: ExplainerConfig) -> LocalLinearModel:
    """
    Exponential-kernel weighted ridge around x, refit on the top_k features.
    Points far from every sample of one label get the width doubled (up to
    WIDTH_DOUBLINGS times) until both labels carry weight; past that the set's
    unweighted surrogate is used.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    d = ns.samples.shape[1]
    if x.shape[0] != d:
        raise ContractViolation(f"neighborhood has {d} features, point has {x.shape[0]}")

    targets = ns.blackbox_labels.astype(np.float64)
    if not (np.any(targets > 0) and np.any(targets < 0)):
        raise DegenerateSurrogateError("neighborhood labels are constant; no boundary to fit")

    sq_dist = np.sum((ns.samples - x) ** 2, axis=1)
    # shifting by the smallest distance rescales all weights alike and avoids underflow
    shifted = sq_dist - sq_dist.min()
    width = cfg.width(d)
    for doubling in range(WIDTH_DOUBLINGS + 1):
        weights = np.exp(-shifted / width**2)
        if _minority_share(weights, targets) >= MIN_LABEL_SHARE:
            try:
                if doubling:
                    logger.debug(f"Local surrogate at distance {np.sqrt(sq_dist.min()):.3g} uses width {width:.3g}")
                return _fit_weighted(ns.samples, targets, weights, cfg)
            except DegenerateSurrogateError:
                pass
        width *= 2.0

    logger.warning(
        f"⚠️ Local surrogate stayed degenerate after {WIDTH_DOUBLINGS} width doublings; "
        "using the unweighted surrogate of the set"
    )
    return _fit_weighted(ns.samples, targets, np.ones(ns.samples.shape[0]), cfg)


def estimate_distance(lm: LocalLinearModel, x: Sequence[float]) -> float:
    """Point-to-hyperplane distance in the selected feature subspace"""
    x = np.asarray(x, dtype=np.float64).ravel()
    norm = float(np.linalg.norm(lm.coefficients))
    if norm <= COEF_NORM_EPS:
        raise DegenerateSurrogateError("surrogate coefficient norm is zero")
    return abs(float(lm.coefficients @ x[lm.selected_features]) + lm.intercept) / norm


def normalize_distances(values: np.ndarray, mode: str = "range") -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    spread = float(values.max() - values.min())
    if spread <= 1e-12 * max(1.0, float(values.max())):
        logger.warning(f"⚠️ Distances of {values.size} negative point(s) have no spread; using raw distances")
        return values
    if mode == "minmax":
        return (values - values.min()) / spread
    return values / spread


def set_distances(ds: GroupedDataset, negatives: np.ndarray, ns: NeighborhoodSet, cfg: ExplainerConfig) -> np.ndarray:
    """Normalized estimated distances of the negative rows against one set"""
    raw = np.array([estimate_distance(fit_local(ns, ds.features[i], cfg), ds.features[i]) for i in negatives])
    return normalize_distances(raw, cfg.normalization)


def average_distances(
    ds: GroupedDataset,
    bb: FittedBlackBox,
    cfg: ExplainerConfig,
    sets: Optional[List[NeighborhoodSet]] = None,
) -> np.ndarray:
    """
    Per-point distance averaged over the neighborhood sets.
    Only black-box negatives get a value; positives are left at 0.
    """
    if sets is None:
        sets = select_neighborhoods(ds, bb, cfg)
    if not sets:
        raise DegenerateNeighborhoodError("no neighborhood sets to average over")

    negatives = np.flatnonzero(predict(bb, ds.features) == -1)
    distances = np.zeros(ds.n_samples)
    if negatives.size == 0:
        logger.warning("⚠️ Black box predicts no negatives; every distance is 0")
        return distances

    per_set = np.array([set_distances(ds, negatives, ns, cfg) for ns in sets])
    distances[negatives] = per_set.mean(axis=0)
    return distances
