"""
Equal Recourse - Black-Box Classifiers
Sample-weighted logistic regression, AdaBoost over stumps and a random forest
behind one fit/predict interface
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit
from sklearn.tree import DecisionTreeClassifier

from recourse.models.dataset import GroupedDataset
from recourse.models.evaluation import accuracy as label_accuracy
from recourse.utils.errors import ContractViolation, DataError, DegenerateFitError

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1
SEED_BOUND = 2**31 - 1


class BlackBoxKind(Enum):
    LOGISTIC = "logistic"
    ADABOOST = "adaboost"
    RANDOM_FOREST = "random_forest"


@dataclass(frozen=True)
class BlackBoxSpec:
    """
    Which classifier to fit and its hyperparameters.
    Only the fields of the chosen kind are used.
    """

    kind: BlackBoxKind = BlackBoxKind.LOGISTIC
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    n_stumps: int = 50
    n_trees: int = 100
    max_depth: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", BlackBoxKind(self.kind))
        if int(self.epochs) < 1:
            raise ContractViolation(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ContractViolation(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 < 0:
            raise ContractViolation(f"l2 must be non-negative, got {self.l2}")
        if int(self.n_stumps) < 1:
            raise ContractViolation(f"n_stumps must be >= 1, got {self.n_stumps}")
        if int(self.n_trees) < 1:
            raise ContractViolation(f"n_trees must be >= 1, got {self.n_trees}")
        if int(self.max_depth) < 1:
            raise ContractViolation(f"max_depth must be >= 1, got {self.max_depth}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "learning_rate": float(self.learning_rate).hex(),
            "epochs": int(self.epochs),
            "l2": float(self.l2).hex(),
            "n_stumps": int(self.n_stumps),
            "n_trees": int(self.n_trees),
            "max_depth": int(self.max_depth),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BlackBoxSpec":
        return cls(
            kind=BlackBoxKind(data["kind"]),
            learning_rate=float.fromhex(data["learning_rate"]),
            epochs=int(data["epochs"]),
            l2=float.fromhex(data["l2"]),
            n_stumps=int(data["n_stumps"]),
            n_trees=int(data["n_trees"]),
            max_depth=int(data["max_depth"]),
            seed=int(data["seed"]),
        )


@dataclass(frozen=True, eq=False)
class FlatTree:
    """
    Binary tree as parallel node arrays (leaves have left == right == -1).
    value holds 2·P(+1) - 1 at each node, so its sign is the node's vote.
    """

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray

    @classmethod
    def from_estimator(cls, estimator: DecisionTreeClassifier) -> "FlatTree":
        tree = estimator.tree_
        counts = tree.value[:, 0, :]
        totals = counts.sum(axis=1)
        classes = list(estimator.classes_)
        if 1 in classes:
            positive = counts[:, classes.index(1)]
            p_pos = np.divide(positive, totals, out=np.zeros_like(positive), where=totals > 0)
        else:
            p_pos = np.zeros(tree.node_count)
        return cls(
            left=tree.children_left.astype(np.int64).copy(),
            right=tree.children_right.astype(np.int64).copy(),
            feature=tree.feature.astype(np.int64).copy(),
            threshold=tree.threshold.astype(np.float64).copy(),
            value=2.0 * p_pos - 1.0,
        )

    def scores(self, X: np.ndarray) -> np.ndarray:
        # trees were grown on float32 inputs; compare the same way
        X32 = X.astype(np.float32).astype(np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        internal = self.left[node] != -1
        while internal.any():
            rows = np.flatnonzero(internal)
            current = node[rows]
            go_left = X32[rows, self.feature[current]] <= self.threshold[current]
            node[rows] = np.where(go_left, self.left[current], self.right[current])
            internal = self.left[node] != -1
        return self.value[node]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "feature": self.feature.tolist(),
            "threshold": [float(t).hex() for t in self.threshold],
            "value": [float(v).hex() for v in self.value],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FlatTree":
        return cls(
            left=np.array(data["left"], dtype=np.int64),
            right=np.array(data["right"], dtype=np.int64),
            feature=np.array(data["feature"], dtype=np.int64),
            threshold=np.array([float.fromhex(t) for t in data["threshold"]]),
            value=np.array([float.fromhex(v) for v in data["value"]]),
        )


@dataclass(frozen=True, eq=False)
class FittedBlackBox:
    """Learned parameters; predictions are labels only"""

    spec: BlackBoxSpec
    n_features: int
    coef: Optional[np.ndarray] = None
    intercept: float = 0.0
    trees: Tuple[FlatTree, ...] = field(default_factory=tuple)
    tree_weights: Optional[np.ndarray] = None


def _check_weights(ds: GroupedDataset, sample_weights: Optional[Sequence[float]]) -> np.ndarray:
    if sample_weights is None:
        return np.ones(ds.n_samples)
    weights = np.asarray(sample_weights, dtype=np.float64).ravel()
    if weights.shape[0] != ds.n_samples:
        raise ContractViolation(f"expected {ds.n_samples} sample weights, got {weights.shape[0]}")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ContractViolation("sample weights must be finite and non-negative")
    if not np.any(weights > 0):
        raise ContractViolation("sample weights are all zero")
    return weights


def _fit_logistic(spec: BlackBoxSpec, X: np.ndarray, y: np.ndarray, weights: np.ndarray) -> FittedBlackBox:
    """Full-batch gradient descent on the weighted, normalized log-loss (bias unpenalized)"""
    share = weights / weights.sum()
    coef = np.zeros(X.shape[1])
    intercept = 0.0
    for _ in range(int(spec.epochs)):
        margins = y * (X @ coef + intercept)
        residual = -share * y * expit(-margins)
        coef -= spec.learning_rate * (X.T @ residual + spec.l2 * coef)
        intercept -= spec.learning_rate * float(residual.sum())
    return FittedBlackBox(spec=spec, n_features=X.shape[1], coef=coef, intercept=intercept)


def _fit_adaboost(spec: BlackBoxSpec, X: np.ndarray, y: np.ndarray, weights: np.ndarray) -> FittedBlackBox:
    distribution = weights / weights.sum()
    trees, alphas = [], []
    for round_index in range(int(spec.n_stumps)):
        stump = DecisionTreeClassifier(max_depth=1, random_state=spec.seed)
        stump.fit(X, y, sample_weight=distribution)
        flat = FlatTree.from_estimator(stump)
        votes = np.where(flat.scores(X) >= 0.0, 1, -1)
        error = float(distribution[votes != y].sum())

        if error >= 0.5:
            if not trees:
                trees.append(flat)
                alphas.append(1.0)
            logger.debug(f"AdaBoost stopped at round {round_index}: weighted error {error:.4f}")
            break
        if error <= 1e-12:
            trees.append(flat)
            alphas.append(0.5 * np.log((1.0 - 1e-12) / 1e-12))
            break

        alpha = 0.5 * np.log((1.0 - error) / error)
        trees.append(flat)
        alphas.append(alpha)
        distribution = distribution * np.exp(-alpha * y * votes)
        distribution /= distribution.sum()

    return FittedBlackBox(
        spec=spec, n_features=X.shape[1], trees=tuple(trees), tree_weights=np.array(alphas, dtype=np.float64)
    )


def _fit_forest(spec: BlackBoxSpec, X: np.ndarray, y: np.ndarray, weights: np.ndarray) -> FittedBlackBox:
    """Bootstrap rows drawn with probability proportional to their weight"""
    rng = np.random.default_rng(spec.seed)
    probabilities = weights / weights.sum()
    n = X.shape[0]
    trees = []
    for _ in range(int(spec.n_trees)):
        rows = rng.choice(n, size=n, replace=True, p=probabilities)
        tree = DecisionTreeClassifier(
            max_depth=int(spec.max_depth),
            max_features="sqrt",
            random_state=int(rng.integers(SEED_BOUND)),
        )
        tree.fit(X[rows], y[rows])
        trees.append(FlatTree.from_estimator(tree))
    return FittedBlackBox(
        spec=spec, n_features=X.shape[1], trees=tuple(trees), tree_weights=np.full(len(trees), 1.0 / len(trees))
    )


def fit(spec: BlackBoxSpec, ds: GroupedDataset, sample_weights: Optional[Sequence[float]] = None) -> FittedBlackBox:
    """Fit the chosen black box with per-sample weights (uniform when omitted)"""
    weights = _check_weights(ds, sample_weights)
    y = ds.labels
    weighted_classes = set(np.unique(y[weights > 0]).tolist())
    if weighted_classes != {-1, 1}:
        raise DegenerateFitError(f"need both labels with positive weight, got {sorted(weighted_classes)}")

    X = ds.features
    if spec.kind is BlackBoxKind.LOGISTIC:
        model = _fit_logistic(spec, X, y, weights)
    elif spec.kind is BlackBoxKind.ADABOOST:
        model = _fit_adaboost(spec, X, y, weights)
    else:
        model = _fit_forest(spec, X, y, weights)
    logger.debug(f"Fitted {spec.kind.value} black box on {ds.n_samples} rows")
    return model


def scores(m: FittedBlackBox, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != m.n_features:
        raise ContractViolation(f"model expects {m.n_features} features, got {X.shape[1]}")
    if m.spec.kind is BlackBoxKind.LOGISTIC:
        return X @ m.coef + m.intercept
    if m.spec.kind is BlackBoxKind.ADABOOST:
        votes = np.array([np.where(tree.scores(X) >= 0.0, 1.0, -1.0) for tree in m.trees])
        return m.tree_weights @ votes
    return m.tree_weights @ np.array([tree.scores(X) for tree in m.trees])


def predict(m: FittedBlackBox, X: np.ndarray) -> np.ndarray:
    """±1 labels for each row of X; a zero score counts as +1"""
    return np.where(scores(m, X) >= 0.0, 1, -1)


def predict_one(m: FittedBlackBox, x: Sequence[float]) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractViolation(f"expected a single d-vector, got shape {x.shape}")
    return int(predict(m, x[None, :])[0])


def accuracy(m: FittedBlackBox, ds: GroupedDataset) -> float:
    return label_accuracy(predict(m, ds.features), ds.labels)


# PERSISTENCE
def model_to_dict(m: FittedBlackBox) -> Dict[str, Any]:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "model": "blackbox",
        "spec": m.spec.to_dict(),
        "n_features": int(m.n_features),
        "coef": None if m.coef is None else [float(c).hex() for c in m.coef],
        "intercept": float(m.intercept).hex(),
        "trees": [tree.to_dict() for tree in m.trees],
        "tree_weights": None if m.tree_weights is None else [float(w).hex() for w in m.tree_weights],
    }


def model_from_dict(data: Dict[str, Any]) -> FittedBlackBox:
    if data.get("schema_version") != MODEL_SCHEMA_VERSION or data.get("model") != "blackbox":
        raise DataError(
            f"unsupported model file (model={data.get('model')!r}, schema_version={data.get('schema_version')!r})"
        )
    return FittedBlackBox(
        spec=BlackBoxSpec.from_dict(data["spec"]),
        n_features=int(data["n_features"]),
        coef=None if data["coef"] is None else np.array([float.fromhex(c) for c in data["coef"]]),
        intercept=float.fromhex(data["intercept"]),
        trees=tuple(FlatTree.from_dict(tree) for tree in data["trees"]),
        tree_weights=None if data["tree_weights"] is None else np.array([float.fromhex(w) for w in data["tree_weights"]]),
    )


def save_blackbox(m: FittedBlackBox, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(m)))
    logger.info(f"💾 Saved {m.spec.kind.value} black box to {path}")
    return path


def load_blackbox(path: Union[str, Path]) -> FittedBlackBox:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise DataError(f"model file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"model file {path} is not valid JSON: {e}") from e
    try:
        return model_from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"model file {path} is malformed: {e}") from e
