"""
Equal Recourse - Kernels
Kernel functions and cost-scaled evaluations K(x,y), K(x,Cy), K(Cx,Cy)
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, Optional, Sequence

import numpy as np
from sklearn.metrics.pairwise import linear_kernel, polynomial_kernel, rbf_kernel

from recourse.utils.errors import ContractViolation, UsageError

logger = logging.getLogger(__name__)


class KernelKind(Enum):
    LINEAR = "linear"
    POLYNOMIAL = "poly"
    RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    """
    Kernel choice and parameters.
    scale / gamma left as None resolve to 1/d on first use (see resolve()).
    """

    kind: KernelKind = KernelKind.LINEAR
    degree: int = 2
    coef0: float = 1.0
    scale: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.POLYNOMIAL and int(self.degree) < 1:
            raise ContractViolation(f"polynomial degree must be >= 1, got {self.degree}")
        if self.kind is KernelKind.RBF and self.gamma is not None and not self.gamma > 0:
            raise ContractViolation(f"rbf gamma must be positive, got {self.gamma}")

    def resolve(self, n_features: int) -> "KernelSpec":
        """Fill in dimension-dependent defaults"""
        if self.kind is KernelKind.POLYNOMIAL and self.scale is None:
            return replace(self, scale=1.0 / n_features)
        if self.kind is KernelKind.RBF and self.gamma is None:
            return replace(self, gamma=1.0 / n_features)
        return self

    def label(self) -> str:
        if self.kind is KernelKind.POLYNOMIAL:
            return f"poly:{self.degree}"
        if self.kind is KernelKind.RBF:
            return f"rbf:{self.gamma}" if self.gamma is not None else "rbf"
        return "linear"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "degree": int(self.degree),
            "coef0": float(self.coef0).hex(),
            "scale": None if self.scale is None else float(self.scale).hex(),
            "gamma": None if self.gamma is None else float(self.gamma).hex(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KernelSpec":
        def real(value):
            return None if value is None else float.fromhex(value)

        return cls(
            kind=KernelKind(data["kind"]),
            degree=int(data["degree"]),
            coef0=float.fromhex(data["coef0"]),
            scale=real(data.get("scale")),
            gamma=real(data.get("gamma")),
        )


def parse_kernel(text: str) -> KernelSpec:
    """Parse 'linear', 'poly:D' or 'rbf:G' (gamma optional)"""
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    try:
        if name == "linear":
            return KernelSpec(KernelKind.LINEAR)
        if name in ("poly", "polynomial"):
            return KernelSpec(KernelKind.POLYNOMIAL, degree=int(arg or 2))
        if name == "rbf":
            return KernelSpec(KernelKind.RBF, gamma=float(arg) if arg else None)
    except ValueError as e:
        raise UsageError(f"invalid kernel argument in '{text}': {e}") from e
    raise UsageError(f"unknown kernel '{text}' (expected linear, poly:D or rbf:G)")


@dataclass(frozen=True)
class CostMatrix:
    """Diagonal per-feature modification costs c_j > 0"""

    diag: tuple

    def __post_init__(self):
        values = tuple(float(c) for c in self.diag)
        if not values:
            raise ContractViolation("cost matrix needs at least one entry")
        if not all(c > 0 for c in values):
            raise ContractViolation("all feature costs must be positive")
        object.__setattr__(self, "diag", values)

    @classmethod
    def identity(cls, n_features: int) -> "CostMatrix":
        return cls(tuple([1.0] * n_features))

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.diag, dtype=np.float64)

    def is_identity(self) -> bool:
        return all(c == 1.0 for c in self.diag)

    def to_list(self) -> list:
        return [c.hex() for c in self.diag]

    @classmethod
    def from_list(cls, values: Sequence[str]) -> "CostMatrix":
        return cls(tuple(float.fromhex(v) for v in values))


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise ContractViolation(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def k(spec: KernelSpec, x: Sequence[float], y: Sequence[float]) -> float:
    """Kernel value for a single pair of d-vectors"""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    _check_dims(x, y)
    spec = spec.resolve(x.shape[0])
    if spec.kind is KernelKind.LINEAR:
        return float(np.dot(x, y))
    if spec.kind is KernelKind.POLYNOMIAL:
        return float((spec.scale * np.dot(x, y) + spec.coef0) ** int(spec.degree))
    diff = x - y
    return float(np.exp(-spec.gamma * np.dot(diff, diff)))


def gram(spec: KernelSpec, X: np.ndarray, Y: Optional[np.ndarray] = None) -> np.ndarray:
    """Kernel matrix K[i, j] = k(X[i], Y[j])"""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=np.float64))
    _check_dims(X, Y)
    spec = spec.resolve(X.shape[1])
    if spec.kind is KernelKind.LINEAR:
        return linear_kernel(X, Y)
    if spec.kind is KernelKind.POLYNOMIAL:
        return polynomial_kernel(X, Y, degree=int(spec.degree), gamma=spec.scale, coef0=spec.coef0)
    return rbf_kernel(X, Y, gamma=spec.gamma)


def apply_cost(c: CostMatrix, x: np.ndarray) -> np.ndarray:
    """x -> Cx for a vector or row-wise for a matrix"""
    x = np.asarray(x, dtype=np.float64)
    costs = c.vector
    _check_dims(x, costs)
    if c.is_identity():
        return x
    return x * costs
