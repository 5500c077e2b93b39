"""
Equal Recourse - Recourse Evaluation
Per-group recourse and recourse difference shared by the SVM and black-box paths
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecourseEvaluation:
    """
    Group recourse over negatively predicted points.
    A group without negative predictions reports recourse 0 and is flagged.
    """

    recourse_pos_group: float
    recourse_neg_group: float
    u_abs: float
    negatives_pos_group: int
    negatives_neg_group: int
    flagged: bool = False

    @property
    def negative_counts(self) -> Dict[int, int]:
        return {1: self.negatives_pos_group, -1: self.negatives_neg_group}

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def group_recourse(distances: np.ndarray, predictions: np.ndarray, groups: np.ndarray) -> RecourseEvaluation:
    """Mean distance of predicted-negative points per group, and |difference|"""
    distances = np.asarray(distances, dtype=np.float64)
    predictions = np.asarray(predictions)
    groups = np.asarray(groups)

    recourse = {}
    counts = {}
    flagged = False
    for group in (1, -1):
        mask = (groups == group) & (predictions == -1)
        counts[group] = int(mask.sum())
        if counts[group] == 0:
            recourse[group] = 0.0
            flagged = True
            logger.warning(f"⚠️ Group {group:+d} has no negative predictions; its recourse is reported as 0")
        else:
            recourse[group] = float(distances[mask].mean())

    return RecourseEvaluation(
        recourse_pos_group=recourse[1],
        recourse_neg_group=recourse[-1],
        u_abs=abs(recourse[1] - recourse[-1]),
        negatives_pos_group=counts[1],
        negatives_neg_group=counts[-1],
        flagged=flagged,
    )


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.asarray(predictions) == np.asarray(labels)))
