"""
Equal Recourse - Recourse-Regularized SVM
Kernel SVM whose dual carries one extra "pseudo point" that penalizes the
difference in recourse between the two groups; trained iteratively
"""

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from math import fsum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from recourse.models.dataset import GroupedDataset
from recourse.models.evaluation import RecourseEvaluation, group_recourse
from recourse.models.evaluation import accuracy as label_accuracy
from recourse.solvers.kernels import CostMatrix, KernelKind, KernelSpec, apply_cost, gram
from recourse.solvers.qp_solver import QPSolution, QuadraticProgram, solve
from recourse.utils.errors import (
    ContractViolation,
    DataError,
    DegenerateModelError,
    FlipsetUnavailableError,
    NumericError,
    TrainingError,
)

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1
TINY = np.finfo(np.float64).tiny
FLIPSET_STEP = 1e-6
_FLIPSET_SEARCH_STEPS = 50


class GroupDenominator(Enum):
    """Denominator |G| used in the pseudo weights"""
    NEGATIVES = "negatives"
    FULL_GROUP = "full_group"


@dataclass(frozen=True)
class TrainConfig:
    """
    Hyperparameters for iterative training.
    - lam: weight of the recourse penalty (box of the pseudo variable)
    - nu: soft-margin box bound
    - sv_threshold: None resolves to 1e-5 * nu
    """

    lam: float = 10.0
    nu: float = 10.0
    max_iters: int = 10
    sv_threshold: Optional[float] = None
    qp_tol: float = 1e-6
    group_denominator: GroupDenominator = GroupDenominator.NEGATIVES

    def __post_init__(self):
        object.__setattr__(self, "group_denominator", GroupDenominator(self.group_denominator))
        if self.lam < 0:
            raise ContractViolation(f"lambda must be non-negative, got {self.lam}")
        if not self.nu > 0:
            raise ContractViolation(f"nu must be positive, got {self.nu}")
        if int(self.max_iters) < 1:
            raise ContractViolation(f"max_iters must be >= 1, got {self.max_iters}")
        if self.sv_threshold is not None and not self.sv_threshold > 0:
            raise ContractViolation(f"sv_threshold must be positive, got {self.sv_threshold}")
        if not self.qp_tol > 0:
            raise ContractViolation(f"qp_tol must be positive, got {self.qp_tol}")

    @property
    def threshold(self) -> float:
        return self.sv_threshold if self.sv_threshold is not None else 1e-5 * self.nu


@dataclass(frozen=True, eq=False)
class PseudoWeights:
    p: np.ndarray
    y_c: float
    negative_counts: Dict[int, int]


@dataclass(frozen=True, eq=False)
class RecourseSvmModel:
    """
    Trained dual solution plus everything needed to evaluate the kernel expansion.
    - training rows are retained: decision values, recourse and flipsets need them
    - lam_used is the λ of the final QP (0 when only the vanilla stage ran)
    """

    gammas: np.ndarray
    gamma_pseudo: float
    bias: float
    norm_w: float
    kernel: KernelSpec
    cost: CostMatrix
    pseudo: PseudoWeights
    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    nu: float
    lam_used: float
    bias_fallback: bool = False
    iterations: int = 1
    u_abs_trace: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def expansion_coefficients(self) -> np.ndarray:
        return self.gammas * self.labels

    @property
    def pseudo_coefficients(self) -> np.ndarray:
        return self.gamma_pseudo * self.groups * self.pseudo.p


def pseudo_weights(
    ds: GroupedDataset,
    prev_predictions: Sequence[int],
    denominator: GroupDenominator = GroupDenominator.NEGATIVES,
) -> PseudoWeights:
    """Uniform weights over each group's predicted negatives; y_c = Σ g_i p_i"""
    predictions = np.asarray(prev_predictions).ravel()
    if predictions.shape[0] != ds.n_samples:
        raise ContractViolation(
            f"expected {ds.n_samples} predictions, got {predictions.shape[0]}"
        )

    denominator = GroupDenominator(denominator)
    p = np.zeros(ds.n_samples)
    counts: Dict[int, int] = {}
    for group in (1, -1):
        negatives = (ds.groups == group) & (predictions == -1)
        counts[group] = int(negatives.sum())
        if counts[group] == 0:
            continue
        size = counts[group] if denominator is GroupDenominator.NEGATIVES else int((ds.groups == group).sum())
        p[negatives] = 1.0 / size

    y_c = fsum(float(g) * float(w) for g, w in zip(ds.groups, p) if w)
    return PseudoWeights(p=p, y_c=y_c, negative_counts=counts)


def _check_cost(ds: GroupedDataset, cost: CostMatrix):
    if len(cost.diag) != ds.n_features:
        raise ContractViolation(f"cost matrix has {len(cost.diag)} entries for {ds.n_features} features")


def build_dual(
    ds: GroupedDataset, pw: PseudoWeights, kernel: KernelSpec, cost: CostMatrix, cfg: TrainConfig
) -> QuadraticProgram:
    """(n+1)-variable dual; the last variable belongs to the pseudo recourse point"""
    _check_cost(ds, cost)
    if pw.p.shape[0] != ds.n_samples:
        raise ContractViolation(f"pseudo weights have length {pw.p.shape[0]}, dataset has {ds.n_samples}")

    kernel = kernel.resolve(ds.n_features)
    n = ds.n_samples
    X = ds.features
    y = ds.labels.astype(np.float64)
    gp = ds.groups * pw.p
    active = gp != 0.0

    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = np.outer(y, y) * gram(kernel, X)
    if active.any():
        CX = apply_cost(cost, X[active])
        cross = gram(kernel, X, CX) @ gp[active]
        M[:n, n] = y * cross
        M[n, :n] = M[:n, n]
        M[n, n] = float(gp[active] @ gram(kernel, CX) @ gp[active])
    M = 0.5 * (M + M.T)

    e = np.concatenate([-np.ones(n), [0.0]])
    a = np.concatenate([y, [pw.y_c]])
    lower = np.concatenate([np.zeros(n), [-cfg.lam]])
    upper = np.concatenate([np.full(n, cfg.nu), [cfg.lam]])
    return QuadraticProgram(M=M, e=e, a=a, lower=lower, upper=upper)


def _training_scores(ds: GroupedDataset, pw: PseudoWeights, kernel: KernelSpec, cost: CostMatrix,
                     gammas: np.ndarray, gamma_pseudo: float) -> np.ndarray:
    """Kernel expansion at the training rows, without bias"""
    scores = gram(kernel, ds.features) @ (gammas * ds.labels)
    gp = ds.groups * pw.p
    active = gp != 0.0
    if gamma_pseudo != 0.0 and active.any():
        scores = scores + gamma_pseudo * (gram(kernel, ds.features, apply_cost(cost, ds.features[active])) @ gp[active])
    return scores


def recover_model(
    ds: GroupedDataset,
    pw: PseudoWeights,
    kernel: KernelSpec,
    cost: CostMatrix,
    cfg: TrainConfig,
    sol: QPSolution,
    qp: Optional[QuadraticProgram] = None,
) -> RecourseSvmModel:
    """‖w‖ from μᵀMμ and the bias averaged over margin support vectors"""
    kernel = kernel.resolve(ds.n_features)
    qp = qp if qp is not None else build_dual(ds, pw, kernel, cost, cfg)
    mu = np.asarray(sol.mu, dtype=np.float64)
    n = ds.n_samples
    gammas = mu[:n].copy()
    gamma_pseudo = float(mu[n])

    norm_sq = float(mu @ qp.M @ mu)
    if norm_sq <= 1e-12 * max(1.0, float(np.max(np.abs(qp.M)))):
        raise DegenerateModelError(f"dual solution gives a zero weight vector (μᵀMμ = {norm_sq:.3e})")
    norm_w = float(np.sqrt(max(norm_sq, TINY)))

    threshold = cfg.threshold
    margin = (gammas > threshold) & (gammas < cfg.nu - threshold)
    fallback = False
    if not margin.any():
        margin = gammas > threshold
        fallback = True
        logger.warning(f"⚠️ No margin support vectors strictly inside (0, ν); using all {int(margin.sum())} γ > threshold for the bias")
    if not margin.any():
        raise DegenerateModelError("no support vectors available to fix the bias")

    scores = _training_scores(ds, pw, kernel, cost, gammas, gamma_pseudo)
    bias = float(np.mean(ds.labels[margin] - scores[margin]))

    return RecourseSvmModel(
        gammas=gammas,
        gamma_pseudo=gamma_pseudo,
        bias=bias,
        norm_w=norm_w,
        kernel=kernel,
        cost=cost,
        pseudo=pw,
        features=ds.features,
        labels=ds.labels,
        groups=ds.groups,
        nu=cfg.nu,
        lam_used=cfg.lam,
        bias_fallback=fallback,
    )


def decision_function(m: RecourseSvmModel, X: np.ndarray) -> np.ndarray:
    """Pre-sign decision values for each row of X"""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != m.n_features:
        raise ContractViolation(f"model expects {m.n_features} features, got {X.shape[1]}")

    support = m.gammas != 0.0
    values = np.full(X.shape[0], m.bias)
    if support.any():
        values += gram(m.kernel, X, m.features[support]) @ m.expansion_coefficients[support]
    pseudo = m.pseudo_coefficients
    active = pseudo != 0.0
    if active.any():
        values += gram(m.kernel, X, apply_cost(m.cost, m.features[active])) @ pseudo[active]
    return values


def decision_value(m: RecourseSvmModel, x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractViolation(f"expected a single d-vector, got shape {x.shape}")
    return float(decision_function(m, x[None, :])[0])


def _sign(values: np.ndarray) -> np.ndarray:
    return np.where(values >= 0.0, 1, -1)


def predict(m: RecourseSvmModel, X: np.ndarray) -> np.ndarray:
    """±1 labels; a zero decision value counts as +1"""
    return _sign(decision_function(m, X))


def evaluate_recourse(m: RecourseSvmModel, ds: GroupedDataset) -> RecourseEvaluation:
    """
    Per-group mean distance to the boundary of the currently negative points.
    Distances are reported positive: -f(Cx) / ‖w‖ for a point with f(x) < 0.
    """
    predictions = predict(m, ds.features)
    distances = -decision_function(m, apply_cost(m.cost, ds.features)) / m.norm_w
    return group_recourse(distances, predictions, ds.groups)


def accuracy(m: RecourseSvmModel, ds: GroupedDataset) -> float:
    return label_accuracy(predict(m, ds.features), ds.labels)


def _solve_stage(ds, pw, kernel, cost, cfg, iteration) -> RecourseSvmModel:
    try:
        qp = build_dual(ds, pw, kernel, cost, cfg)
        sol = solve(qp, tol=cfg.qp_tol)
        if not sol.converged:
            if sol.kkt_residual > 100 * cfg.qp_tol:
                raise TrainingError(f"QP did not converge (KKT residual {sol.kkt_residual:.3e})", iteration)
            logger.warning(f"⚠️ Iteration {iteration}: accepting QP with KKT residual {sol.kkt_residual:.3e}")
        return recover_model(ds, pw, kernel, cost, cfg, sol, qp)
    except TrainingError:
        raise
    except NumericError as e:
        raise TrainingError(str(e), iteration) from e


def train_iterative(
    ds: GroupedDataset, kernel: KernelSpec, cost: CostMatrix, cfg: TrainConfig
) -> RecourseSvmModel:
    """
    Vanilla SVM first (λ = 0), then re-solve with the recourse penalty using
    pseudo weights from the previous model's predictions until the training
    predictions stop changing or max_iters models have been trained.
    """
    _check_cost(ds, cost)
    if not (np.any(ds.labels == 1) and np.any(ds.labels == -1)):
        raise DataError("training needs both labels present")
    kernel = kernel.resolve(ds.n_features)

    predictions = ds.labels.copy()
    trace = []
    model = None
    iteration = 0
    for iteration in range(int(cfg.max_iters)):
        stage_cfg = replace(cfg, lam=0.0) if iteration == 0 else cfg
        pw = pseudo_weights(ds, predictions, cfg.group_denominator)
        model = _solve_stage(ds, pw, kernel, cost, stage_cfg, iteration)

        new_predictions = predict(model, ds.features)
        evaluation = evaluate_recourse(model, ds)
        trace.append(evaluation.u_abs)
        logger.debug(
            f"Iteration {iteration}: λ={stage_cfg.lam}, γ_pseudo={model.gamma_pseudo:.4g}, "
            f"‖w‖={model.norm_w:.4g}, u_abs={evaluation.u_abs:.4g}"
        )

        if iteration > 0 and np.array_equal(new_predictions, predictions):
            break
        predictions = new_predictions

    logger.info(
        f"✅ Trained recourse SVM ({kernel.label()}, λ={cfg.lam}, ν={cfg.nu}) in {iteration + 1} iteration(s); "
        f"u_abs {trace[0]:.4f} -> {trace[-1]:.4f}"
    )
    return replace(model, iterations=iteration + 1, u_abs_trace=tuple(trace))


def materialize_linear_weights(m: RecourseSvmModel) -> np.ndarray:
    """Explicit w for a linear-kernel model"""
    if m.kernel.kind is not KernelKind.LINEAR:
        raise ContractViolation(f"explicit weights exist only for the linear kernel, not {m.kernel.label()}")
    w = m.expansion_coefficients @ m.features
    pseudo = m.pseudo_coefficients
    if np.any(pseudo != 0.0):
        w = w + pseudo @ apply_cost(m.cost, m.features)
    return w


def dual_feasibility_residual(m: RecourseSvmModel) -> float:
    """Largest box violation or equality residual of the stored dual variables"""
    box = max(
        float(np.max(np.maximum(0.0, -m.gammas))),
        float(np.max(np.maximum(0.0, m.gammas - m.nu))),
        max(0.0, abs(m.gamma_pseudo) - m.lam_used),
    )
    equality = abs(fsum(np.append(m.expansion_coefficients, m.gamma_pseudo * m.pseudo.y_c)))
    return max(box, equality)


def check_dual_feasibility(m: RecourseSvmModel, tol: float = 1e-5) -> bool:
    residual = dual_feasibility_residual(m)
    if residual > tol:
        logger.warning(f"⚠️ Model dual infeasible by {residual:.3e} (tolerance {tol:.1e})")
        return False
    return True


# FLIPSETS
def _cost_distance(m: RecourseSvmModel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(a - b) * m.cost.vector, axis=1)


def _linear_flipset(m: RecourseSvmModel, x: np.ndarray) -> np.ndarray:
    w = materialize_linear_weights(m)
    direction = w / m.cost.vector ** 2
    curvature = float(w @ direction)
    if curvature <= 0.0:
        raise DegenerateModelError("linear model has a zero weight vector")
    # cheapest move onto the hyperplane under the cost-weighted norm
    f = float(w @ x + m.bias)
    boundary = x - (f / curvature) * direction
    unit = direction / np.linalg.norm(direction)
    step = FLIPSET_STEP
    candidate = boundary + step * unit
    for _ in range(60):
        if decision_value(m, candidate) >= 0.0:
            return candidate
        step *= 2.0
        candidate = boundary + step * unit
    raise FlipsetUnavailableError("could not step across the linear boundary")


def _numeric_gradient(m: RecourseSvmModel, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    d = x.shape[0]
    stencil = np.vstack([x + h * np.eye(d), x - h * np.eye(d)])
    values = decision_function(m, stencil)
    return (values[:d] - values[d:]) / (2.0 * h)


def _kernel_flipset(m: RecourseSvmModel, x: np.ndarray) -> np.ndarray:
    positives = m.features[predict(m, m.features) == 1]
    if positives.shape[0] == 0:
        raise FlipsetUnavailableError("no positively classified training point to move towards")

    anchor = positives[int(np.argmin(_cost_distance(m, positives, x)))]

    # bisection on the segment x -> anchor; hi stays on the positive side
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if decision_value(m, x + mid * (anchor - x)) >= 0.0:
            hi = mid
        else:
            lo = mid
    best = x + hi * (anchor - x)
    best_distance = float(_cost_distance(m, best, x)[0])

    eta = 0.5
    for _ in range(_FLIPSET_SEARCH_STEPS):
        candidate = best + eta * (x - best)
        gradient = _numeric_gradient(m, candidate)
        grad_sq = float(gradient @ gradient)
        if grad_sq > 0.0:
            # project back onto (just past) the boundary along the gradient
            candidate = candidate - ((decision_value(m, candidate) - FLIPSET_STEP) / grad_sq) * gradient
        distance = float(_cost_distance(m, candidate, x)[0])
        if decision_value(m, candidate) >= 0.0 and distance < best_distance:
            best, best_distance = candidate, distance
        else:
            eta *= 0.5
    return best


def flipset(m: RecourseSvmModel, x: Sequence[float]) -> np.ndarray:
    """Nearby point (cost-weighted) that the model classifies positive"""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != m.n_features:
        raise ContractViolation(f"model expects {m.n_features} features, got {x.shape[0]}")
    if decision_value(m, x) >= 0.0:
        raise ContractViolation("flipsets are defined only for negatively classified points")
    if m.kernel.kind is KernelKind.LINEAR:
        return _linear_flipset(m, x)
    return _kernel_flipset(m, x)


# PERSISTENCE
def _hex_list(values: np.ndarray) -> list:
    return [float(v).hex() for v in np.asarray(values, dtype=np.float64).ravel()]


def _from_hex(values: Sequence[str]) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=np.float64)


def model_to_dict(m: RecourseSvmModel) -> Dict[str, Any]:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "model": "recourse_svm",
        "kernel": m.kernel.to_dict(),
        "cost": m.cost.to_list(),
        "gammas": _hex_list(m.gammas),
        "gamma_pseudo": float(m.gamma_pseudo).hex(),
        "bias": float(m.bias).hex(),
        "norm_w": float(m.norm_w).hex(),
        "nu": float(m.nu).hex(),
        "lam_used": float(m.lam_used).hex(),
        "bias_fallback": bool(m.bias_fallback),
        "iterations": int(m.iterations),
        "u_abs_trace": [float(u).hex() for u in m.u_abs_trace],
        "pseudo": {
            "p": _hex_list(m.pseudo.p),
            "y_c": float(m.pseudo.y_c).hex(),
            "negative_counts": {str(g): int(c) for g, c in m.pseudo.negative_counts.items()},
        },
        "training": {
            "n_features": m.n_features,
            "features": _hex_list(m.features),
            "labels": [int(v) for v in m.labels],
            "groups": [int(v) for v in m.groups],
        },
    }


def model_from_dict(data: Dict[str, Any]) -> RecourseSvmModel:
    if data.get("schema_version") != MODEL_SCHEMA_VERSION or data.get("model") != "recourse_svm":
        raise DataError(
            f"unsupported model file (model={data.get('model')!r}, schema_version={data.get('schema_version')!r})"
        )
    training = data["training"]
    d = int(training["n_features"])
    features = _from_hex(training["features"]).reshape(-1, d)
    pseudo = data["pseudo"]
    return RecourseSvmModel(
        gammas=_from_hex(data["gammas"]),
        gamma_pseudo=float.fromhex(data["gamma_pseudo"]),
        bias=float.fromhex(data["bias"]),
        norm_w=float.fromhex(data["norm_w"]),
        kernel=KernelSpec.from_dict(data["kernel"]),
        cost=CostMatrix.from_list(data["cost"]),
        pseudo=PseudoWeights(
            p=_from_hex(pseudo["p"]),
            y_c=float.fromhex(pseudo["y_c"]),
            negative_counts={int(g): int(c) for g, c in pseudo["negative_counts"].items()},
        ),
        features=features,
        labels=np.array(training["labels"], dtype=np.int64),
        groups=np.array(training["groups"], dtype=np.int64),
        nu=float.fromhex(data["nu"]),
        lam_used=float.fromhex(data["lam_used"]),
        bias_fallback=bool(data["bias_fallback"]),
        iterations=int(data["iterations"]),
        u_abs_trace=tuple(float.fromhex(u) for u in data["u_abs_trace"]),
    )


def save_model(m: RecourseSvmModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(m), indent=2))
    logger.info(f"💾 Saved recourse SVM model to {path}")
    return path


def load_model(path: Union[str, Path]) -> RecourseSvmModel:
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
