"""
Equal Recourse - Experiment Harness
Repeated subsample -> split -> cross-validate -> train -> evaluate runs with
before/after statistics and machine-readable reports
"""

import asyncio
import logging
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.model_selection import StratifiedKFold

from recourse.classifiers import blackbox, recourse_svm
from recourse.classifiers.blackbox import BlackBoxKind, BlackBoxSpec
from recourse.classifiers.recourse_svm import GroupDenominator, TrainConfig
from recourse.explainers.local_explainer import ExplainerConfig
from recourse.explainers.reweight_equalizer import equalize, estimate_group_recourse
from recourse.models.dataset import (
    NAMED_DATASETS,
    GroupedDataset,
    SyntheticKind,
    SyntheticSpec,
    load_csv,
    load_named,
    make_synthetic,
    roundtrip_spec,
    split,
    subsample,
)
from recourse.models.evaluation import RecourseEvaluation
from recourse.harness.progress import ProgressTracker
from recourse.harness.report_writer import csv_path_for, save_report
from recourse.solvers.kernels import CostMatrix, KernelKind, KernelSpec
from recourse.utils.errors import ContractViolation, CrossValidationError, ExperimentError, RecourseError

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REDUCTION_EPS = 1e-12
DEFAULT_LAMBDA_GRID = (0.2, 0.5, 1.0, 2.0, 10.0, 50.0, 100.0)
DEFAULT_DEGREE_GRID = (2, 3, 5)
SYNTHETIC_DATASETS = {
    "synthetic_linear": SyntheticKind.LINEAR_SHIFTED_GAUSSIANS,
    "synthetic_ring": SyntheticKind.RING_VS_CLUSTER,
}
RECORD_COLUMNS = [
    "run_id", "seed", "method", "model", "phase", "split", "accuracy", "u_abs",
    "recourse_pos_group", "recourse_neg_group", "flagged", "lam", "kernel",
]
METRICS = [(split_name, metric) for split_name in ("train", "test") for metric in ("accuracy", "u_abs")]


class Method(Enum):
    SVM = "svm"
    AGNOSTIC = "agnostic"


class KernelFamily(Enum):
    LINEAR = "linear"
    POLY = "poly"


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment: which data, which method and which grids.
    - sample_size None means 5000 for credit and 1000 otherwise, times scale
    - blackbox_kind is used by the agnostic method only
    """

    dataset: str
    method: Method = Method.SVM
    blackbox_kind: BlackBoxKind = BlackBoxKind.LOGISTIC
    kernel_family: KernelFamily = KernelFamily.POLY
    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDA_GRID
    degree_grid: Tuple[int, ...] = DEFAULT_DEGREE_GRID
    n_runs: int = 10
    sample_size: Optional[int] = None
    scale: float = 1.0
    cv_folds: int = 10
    train_frac: float = 0.8
    nu: float = 10.0
    max_iters: int = 10
    qp_tol: float = 1e-6
    group_denominator: GroupDenominator = GroupDenominator.NEGATIVES
    explainer: ExplainerConfig = field(default_factory=ExplainerConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "blackbox_kind", BlackBoxKind(self.blackbox_kind))
        object.__setattr__(self, "kernel_family", KernelFamily(self.kernel_family))
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        object.__setattr__(self, "degree_grid", tuple(int(v) for v in self.degree_grid))
        if int(self.n_runs) < 1:
            raise ContractViolation(f"n_runs must be >= 1, got {self.n_runs}")
        if self.method is Method.SVM:
            if not self.lambda_grid:
                raise ContractViolation("lambda grid must not be empty")
            if self.kernel_family is KernelFamily.POLY and not self.degree_grid:
                raise ContractViolation("degree grid must not be empty for the polynomial family")
        if any(v < 0 for v in self.lambda_grid):
            raise ContractViolation("lambda values must be non-negative")
        if int(self.cv_folds) < 2:
            raise ContractViolation(f"cv_folds must be >= 2, got {self.cv_folds}")
        if not self.scale > 0:
            raise ContractViolation(f"scale must be positive, got {self.scale}")
        if int(self.workers) < 1:
            raise ContractViolation(f"workers must be >= 1, got {self.workers}")

    @property
    def resolved_sample_size(self) -> int:
        base = self.sample_size if self.sample_size is not None else (5000 if self.dataset == "credit" else 1000)
        return max(2, int(round(base * self.scale)))

    def kernels(self) -> List[KernelSpec]:
        if self.kernel_family is KernelFamily.LINEAR:
            return [KernelSpec(KernelKind.LINEAR)]
        return [KernelSpec(KernelKind.POLYNOMIAL, degree=d) for d in self.degree_grid]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["method"] = self.method.value
        data["blackbox_kind"] = self.blackbox_kind.value
        data["kernel_family"] = self.kernel_family.value
        data["group_denominator"] = self.group_denominator.value
        data["lambda_grid"] = list(self.lambda_grid)
        data["degree_grid"] = list(self.degree_grid)
        data["resolved_sample_size"] = self.resolved_sample_size
        return data


@dataclass(frozen=True)
class CvChoice:
    lam: float
    kernel: KernelSpec
    mean_u_abs: float
    mean_accuracy: float


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    median: float
    q25: float
    q75: float
    min: float
    max: float
    count: int

    @classmethod
    def of(cls, values: Sequence[float]) -> "MetricSummary":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            nan = float("nan")
            return cls(nan, nan, nan, nan, nan, nan, 0)
        q25, median, q75 = np.percentile(values, [25, 50, 75])
        return cls(
            mean=float(values.mean()),
            median=float(median),
            q25=float(q25),
            q75=float(q75),
            min=float(values.min()),
            max=float(values.max()),
            count=int(values.size),
        )


@dataclass(frozen=True)
class RunStatistics:
    """
    Box statistics per "<split>/<metric>/<phase>" key plus recourse reductions.
    reduction[split] compares the mean u_abs before and after; a zero "before"
    gives 0 and sets reduction_flagged[split].
    """

    metrics: Dict[str, MetricSummary]
    reduction: Dict[str, float]
    reduction_flagged: Dict[str, bool]
    run_reductions: Dict[str, MetricSummary]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metrics": {key: asdict(value) for key, value in self.metrics.items()},
            "reduction": dict(self.reduction),
            "reduction_flagged": dict(self.reduction_flagged),
            "run_reductions": {key: asdict(value) for key, value in self.run_reductions.items()},
        }


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    statistics: RunStatistics
    records: List[Dict[str, Any]]
    failures: List[Dict[str, Any]]

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "statistics": self.statistics.to_dict(),
            "n_runs": self.config.n_runs,
            "n_failed": self.n_failed,
            "failures": self.failures,
            "records": self.records,
        }


def percent_reduction(before: float, after: float) -> Tuple[float, bool]:
    """(before - after) / before; a numerically zero before gives (0, flagged)"""
    if abs(before) < REDUCTION_EPS:
        return 0.0, True
    return (before - after) / before, False


def resolve_dataset(name: str, data_dir: Union[str, Path], seed: int = 0) -> GroupedDataset:
    """Synthetic layout, preset name, or a CSV path with label/group columns"""
    if name in SYNTHETIC_DATASETS:
        return make_synthetic(SyntheticSpec(kind=SYNTHETIC_DATASETS[name], seed=seed))
    if name in NAMED_DATASETS:
        return load_named(name, data_dir)
    return load_csv(name, roundtrip_spec())


def _cell_codes(ds: GroupedDataset) -> np.ndarray:
    return (ds.labels + 1) + (ds.groups + 1) // 2


def _train_config(cfg: ExperimentConfig, lam: float, max_iters: Optional[int] = None) -> TrainConfig:
    return TrainConfig(
        lam=lam,
        nu=cfg.nu,
        max_iters=max_iters if max_iters is not None else cfg.max_iters,
        qp_tol=cfg.qp_tol,
        group_denominator=cfg.group_denominator,
    )


def cross_validate(train: GroupedDataset, cfg: ExperimentConfig, seed: int = 0) -> CvChoice:
    """
    Grid point with the lowest mean validation u_abs.
    Ties go to the higher mean validation accuracy, then the smaller λ.
    """
    grid = [(lam, kernel) for kernel in cfg.kernels() for lam in cfg.lambda_grid]
    if len(grid) == 1:
        lam, kernel = grid[0]
        return CvChoice(lam=lam, kernel=kernel, mean_u_abs=float("nan"), mean_accuracy=float("nan"))

    codes = _cell_codes(train)
    smallest = int(np.min(np.bincount(codes, minlength=4)[np.unique(codes)]))
    folds = min(int(cfg.cv_folds), smallest)
    if folds < 2:
        raise CrossValidationError(f"smallest (label, group) cell has {smallest} row(s); cannot cross-validate")
    if folds < cfg.cv_folds:
        logger.warning(f"⚠️ Reducing CV folds from {cfg.cv_folds} to {folds} (smallest cell has {smallest} rows)")

    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=int(seed % (2**32)))
    fold_indices = list(splitter.split(train.features, codes))
    cost = CostMatrix.identity(train.n_features)

    scored = []
    for lam, kernel in grid:
        u_values, acc_values = [], []
        try:
            for fit_idx, val_idx in fold_indices:
                fold_train, fold_val = train.subset(fit_idx), train.subset(val_idx)
                model = recourse_svm.train_iterative(fold_train, kernel, cost, _train_config(cfg, lam))
                evaluation = recourse_svm.evaluate_recourse(model, fold_val)
                if evaluation.flagged:
                    continue
                u_values.append(evaluation.u_abs)
                acc_values.append(recourse_svm.accuracy(model, fold_val))
        except RecourseError as e:
            logger.warning(f"⚠️ CV grid point λ={lam}, {kernel.label()} failed: {e}")
            continue
        if not u_values:
            logger.warning(f"⚠️ CV grid point λ={lam}, {kernel.label()} produced no usable folds")
            continue
        scored.append(CvChoice(lam, kernel, float(np.mean(u_values)), float(np.mean(acc_values))))

    if not scored:
        raise CrossValidationError("every grid point failed during cross-validation")
    best = min(scored, key=lambda c: (round(c.mean_u_abs, 12), -round(c.mean_accuracy, 12), c.lam))
    logger.info(
        f"📊 CV chose λ={best.lam}, {best.kernel.label()} (u_abs={best.mean_u_abs:.4f}, acc={best.mean_accuracy:.3f})"
    )
    return best


def _record(run_id: int, seed: int, cfg: ExperimentConfig, phase: str, split_name: str, accuracy: float,
            evaluation: RecourseEvaluation, lam: Optional[float], kernel: str) -> Dict[str, Any]:
    return {
        "run_id": run_id,
        "seed": seed,
        "method": cfg.method.value,
        "model": cfg.blackbox_kind.value if cfg.method is Method.AGNOSTIC else "recourse_svm",
        "phase": phase,
        "split": split_name,
        "accuracy": accuracy,
        "u_abs": evaluation.u_abs,
        "recourse_pos_group": evaluation.recourse_pos_group,
        "recourse_neg_group": evaluation.recourse_neg_group,
        "flagged": evaluation.flagged,
        "lam": lam,
        "kernel": kernel,
    }


def _svm_run(cfg: ExperimentConfig, train: GroupedDataset, test: GroupedDataset, run_id: int, seed: int):
    choice = cross_validate(train, cfg, seed)
    cost = CostMatrix.identity(train.n_features)
    vanilla = recourse_svm.train_iterative(train, choice.kernel, cost, _train_config(cfg, 0.0, max_iters=1))
    equalized = recourse_svm.train_iterative(train, choice.kernel, cost, _train_config(cfg, choice.lam))

    records = []
    for phase, model, lam in (("before", vanilla, 0.0), ("after", equalized, choice.lam)):
        for split_name, part in (("train", train), ("test", test)):
            records.append(_record(
                run_id, seed, cfg, phase, split_name,
                recourse_svm.accuracy(model, part),
                recourse_svm.evaluate_recourse(model, part),
                lam, choice.kernel.label(),
            ))
    return records


def _agnostic_run(cfg: ExperimentConfig, train: GroupedDataset, test: GroupedDataset, run_id: int, seed: int):
    spec = BlackBoxSpec(kind=cfg.blackbox_kind, seed=seed)
    explainer = replace(cfg.explainer, seed=seed)
    result = equalize(train, spec, explainer)

    test_before = estimate_group_recourse(test, result.model_before, list(result.sets), explainer)
    test_after = estimate_group_recourse(test, result.model_after, list(result.sets_after), explainer)
    rows = (
        ("before", "train", result.model_before, result.before),
        ("before", "test", result.model_before, test_before),
        ("after", "train", result.model_after, result.after),
        ("after", "test", result.model_after, test_after),
    )
    return [
        _record(run_id, seed, cfg, phase, split_name,
                blackbox.accuracy(model, train if split_name == "train" else test),
                evaluation, None, "")
        for phase, split_name, model, evaluation in rows
    ]


def execute_run(cfg: ExperimentConfig, ds: GroupedDataset, run_id: int, seed: int) -> List[Dict[str, Any]]:
    """One subsample -> split -> train -> evaluate cycle (picklable for process pools)"""
    children = np.random.SeedSequence(seed).spawn(3)
    sub_seed, split_seed, model_seed = (int(c.generate_state(1)[0]) for c in children)
    sample = subsample(ds, cfg.resolved_sample_size, sub_seed)
    train, test = split(sample, cfg.train_frac, split_seed)
    if cfg.method is Method.SVM:
        return _svm_run(cfg, train, test, run_id, model_seed)
    return _agnostic_run(cfg, train, test, run_id, model_seed)


def summarize(records: List[Dict[str, Any]]) -> RunStatistics:
    """Box statistics and reductions; recomputable from the raw records alone"""
    metrics: Dict[str, MetricSummary] = {}
    for split_name, metric in METRICS:
        for phase in ("before", "after"):
            values = [r[metric] for r in records if r["split"] == split_name and r["phase"] == phase]
            metrics[f"{split_name}/{metric}/{phase}"] = MetricSummary.of(values)

    reduction, flagged, run_reductions = {}, {}, {}
    for split_name in ("train", "test"):
        before_mean = metrics[f"{split_name}/u_abs/before"].mean
        after_mean = metrics[f"{split_name}/u_abs/after"].mean
        reduction[split_name], flagged[split_name] = percent_reduction(before_mean, after_mean)

        per_run = []
        by_run: Dict[int, Dict[str, float]] = {}
        for r in records:
            if r["split"] == split_name:
                by_run.setdefault(r["run_id"], {})[r["phase"]] = r["u_abs"]
        for run_id in sorted(by_run):
            pair = by_run[run_id]
            if "before" in pair and "after" in pair:
                per_run.append(percent_reduction(pair["before"], pair["after"])[0])
        run_reductions[split_name] = MetricSummary.of(per_run)

    return RunStatistics(metrics=metrics, reduction=reduction, reduction_flagged=flagged, run_reductions=run_reductions)


def _run_seeds(cfg: ExperimentConfig) -> List[int]:
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(cfg.seed).spawn(int(cfg.n_runs))]


async def _tracked(future, tracker: ProgressTracker, run_id: int):
    try:
        result = await future
    except Exception as e:
        tracker.record_failure(run_id, e)
        raise
    tracker.record_success(run_id)
    return result


async def _run_all(cfg: ExperimentConfig, ds: GroupedDataset, progress_interval: float):
    seeds = _run_seeds(cfg)
    tracker = ProgressTracker(total=len(seeds), interval=progress_interval, label=f"{cfg.method.value} on {cfg.dataset}")
    loop = asyncio.get_running_loop()
    executor: Executor = (
        ProcessPoolExecutor(max_workers=int(cfg.workers)) if cfg.workers > 1 else ThreadPoolExecutor(max_workers=1)
    )
    tracker.start()
    try:
        tasks = [
            _tracked(loop.run_in_executor(executor, execute_run, cfg, ds, run_id, seed), tracker, run_id)
            for run_id, seed in enumerate(seeds)
        ]
        results = await asyncio.gather(*tasks, return_exceptions=True)
    finally:
        tracker.stop()
        executor.shutdown(wait=True)
    return seeds, results


def run_experiment(
    cfg: ExperimentConfig,
    data_dir: Union[str, Path] = "./data",
    progress_interval: float = 30.0,
    dataset: Optional[GroupedDataset] = None,
) -> ExperimentReport:
    """
    Run cfg.n_runs independent cycles concurrently and aggregate them.
    Failed runs are recorded and excluded; more than half failing is an error.
    """
    ds = dataset if dataset is not None else resolve_dataset(cfg.dataset, data_dir, cfg.seed)
    logger.info(f"🚀 Experiment: {cfg.method.value} on {cfg.dataset} ({ds.n_samples} rows, {cfg.n_runs} runs)")

    seeds, results = asyncio.run(_run_all(cfg, ds, progress_interval))

    records: List[Dict[str, Any]] = []
    failures: List[Dict[str, Any]] = []
    for run_id, (seed, result) in enumerate(zip(seeds, results)):
        if isinstance(result, BaseException):
            failures.append({"run_id": run_id, "seed": seed, "error": type(result).__name__, "message": str(result)})
        else:
            records.extend(result)

    if len(failures) * 2 > len(seeds) or not records:
        raise ExperimentError(
            f"{len(failures)} of {len(seeds)} runs failed", failed=len(failures), total=len(seeds)
        )

    statistics = summarize(records)
    logger.info(
        f"✅ Experiment finished: {len(seeds) - len(failures)}/{len(seeds)} runs; "
        f"recourse difference reduction train={statistics.reduction['train']:.1%}, "
        f"test={statistics.reduction['test']:.1%}"
    )
    return ExperimentReport(config=cfg, statistics=statistics, records=records, failures=failures)


def write_report(report: ExperimentReport, json_path: Union[str, Path]) -> Tuple[Path, Path]:
    """JSON summary plus the raw records CSV next to it"""
    return asyncio.run(
        save_report(report.to_dict(), report.records, RECORD_COLUMNS, json_path, csv_path_for(json_path))
    )
