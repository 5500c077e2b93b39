"""
Equal Recourse - Command Line
Subcommands: synth, train-svm, train-blackbox, equalize, evaluate, experiment, flipset
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from recourse.classifiers import blackbox, recourse_svm
from recourse.classifiers.blackbox import BlackBoxKind, BlackBoxSpec
from recourse.classifiers.recourse_svm import GroupDenominator, TrainConfig
from recourse.explainers.local_explainer import ExplainerConfig, select_neighborhoods
from recourse.explainers.reweight_equalizer import equalize, estimate_group_recourse
from recourse.harness.experiment import (
    DEFAULT_DEGREE_GRID,
    DEFAULT_LAMBDA_GRID,
    ExperimentConfig,
    KernelFamily,
    Method,
    run_experiment,
    write_report,
)
from recourse.harness.report_writer import write_json
from recourse.models.dataset import GroupedDataset, SyntheticKind, SyntheticSpec, load_csv, make_synthetic, roundtrip_spec, write_csv
from recourse.solvers.kernels import CostMatrix, parse_kernel
from recourse.utils.config import Settings, load_settings
from recourse.utils.errors import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, DataError, RecourseError, UsageError

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
BLACKBOX_CHOICES = {"logistic": BlackBoxKind.LOGISTIC, "adaboost": BlackBoxKind.ADABOOST, "forest": BlackBoxKind.RANDOM_FOREST}
SYNTH_CHOICES = {"linear": SyntheticKind.LINEAR_SHIFTED_GAUSSIANS, "ring": SyntheticKind.RING_VS_CLUSTER}


class _Parser(argparse.ArgumentParser):
    """argparse with usage problems raised as UsageError (exit code 1)"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def configure_logging(settings: Settings, level: Optional[str] = None):
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file))
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(f"expected comma-separated numbers, got '{text}'") from e


def _cost(text: Optional[str], n_features: int) -> CostMatrix:
    if not text:
        return CostMatrix.identity(n_features)
    values = _floats(text)
    if len(values) != n_features:
        raise UsageError(f"--cost has {len(values)} entries for {n_features} features")
    try:
        return CostMatrix(tuple(values))
    except ValueError as e:
        raise UsageError(str(e)) from e


def _load_data(args) -> GroupedDataset:
    return load_csv(args.data, roundtrip_spec(args.label_column, args.group_column))


def _write_json(path: str, payload: Dict[str, Any]):
    asyncio.run(write_json(path, payload))


def _load_any_model(path: str):
    try:
        kind = json.loads(Path(path).read_text()).get("model")
    except FileNotFoundError as e:
        raise DataError(f"model file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"model file {path} is not valid JSON: {e}") from e
    if kind == "recourse_svm":
        return recourse_svm.load_model(path)
    if kind == "blackbox":
        return blackbox.load_blackbox(path)
    raise DataError(f"unknown model type {kind!r} in {path}")


def _explainer_config(args) -> ExplainerConfig:
    return ExplainerConfig(
        n_samples=args.samples,
        n_sets=args.sets,
        top_k=args.top_k,
        normalization=args.normalization,
        seed=args.seed,
    )


# COMMANDS
def cmd_synth(args, settings: Settings) -> int:
    ds = make_synthetic(SyntheticSpec(
        kind=SYNTH_CHOICES[args.kind],
        n_per_cell=args.n_per_cell,
        group_shift=args.shift,
        noise_sd=args.noise,
        seed=args.seed,
    ))
    write_csv(ds, args.out)
    logger.info(f"✅ Wrote {ds.n_samples} synthetic rows to {args.out}")
    return EXIT_OK


def cmd_train_svm(args, settings: Settings) -> int:
    kernel = parse_kernel(args.kernel)
    ds = _load_data(args)
    cfg = TrainConfig(
        lam=args.lam,
        nu=args.nu,
        max_iters=args.max_iters,
        qp_tol=args.qp_tol if args.qp_tol is not None else settings.qp_tol,
        group_denominator=GroupDenominator(args.denominator),
    )
    model = recourse_svm.train_iterative(ds, kernel, _cost(args.cost, ds.n_features), cfg)
    recourse_svm.save_model(model, args.model)
    if not recourse_svm.check_dual_feasibility(recourse_svm.load_model(args.model)):
        logger.error("❌ Saved model failed the dual feasibility check")
        return EXIT_NUMERIC
    evaluation = recourse_svm.evaluate_recourse(model, ds)
    logger.info(
        f"📊 Training accuracy {recourse_svm.accuracy(model, ds):.3f}, u_abs {evaluation.u_abs:.4f} "
        f"after {model.iterations} iteration(s)"
    )
    return EXIT_OK


def cmd_train_blackbox(args, settings: Settings) -> int:
    ds = _load_data(args)
    model = blackbox.fit(BlackBoxSpec(kind=BLACKBOX_CHOICES[args.blackbox], seed=args.seed), ds)
    blackbox.save_blackbox(model, args.model)
    logger.info(f"📊 Training accuracy {blackbox.accuracy(model, ds):.3f}")
    return EXIT_OK


def cmd_equalize(args, settings: Settings) -> int:
    ds = _load_data(args)
    spec = BlackBoxSpec(kind=BLACKBOX_CHOICES[args.blackbox], seed=args.seed)
    result = equalize(ds, spec, _explainer_config(args))
    _write_json(args.out, {
        "blackbox": spec.to_dict(),
        "weights": result.weights.tolist(),
        "before": result.before.to_dict(),
        "after": result.after.to_dict(),
        "accuracy_before": blackbox.accuracy(result.model_before, ds),
        "accuracy_after": blackbox.accuracy(result.model_after, ds),
    })
    if args.model:
        blackbox.save_blackbox(result.model_after, args.model)
    return EXIT_OK


def cmd_evaluate(args, settings: Settings) -> int:
    ds = _load_data(args)
    model = _load_any_model(args.model)
    if isinstance(model, recourse_svm.RecourseSvmModel):
        evaluation = recourse_svm.evaluate_recourse(model, ds)
        payload = {
            "model": "recourse_svm",
            "accuracy": recourse_svm.accuracy(model, ds),
            "recourse": evaluation.to_dict(),
            "dual_feasible": recourse_svm.check_dual_feasibility(model),
        }
    else:
        cfg = _explainer_config(args)
        evaluation = estimate_group_recourse(ds, model, select_neighborhoods(ds, model, cfg), cfg)
        payload = {
            "model": "blackbox",
            "accuracy": blackbox.accuracy(model, ds),
            "recourse": evaluation.to_dict(),
        }
    _write_json(args.out, payload)
    logger.info(f"📊 Accuracy {payload['accuracy']:.3f}, u_abs {evaluation.u_abs:.4f}")
    return EXIT_OK


def cmd_experiment(args, settings: Settings) -> int:
    cfg = ExperimentConfig(
        dataset=args.dataset,
        method=Method(args.method),
        blackbox_kind=BLACKBOX_CHOICES[args.blackbox],
        kernel_family=KernelFamily(args.kernel_family),
        lambda_grid=tuple(_floats(args.lambdas)),
        degree_grid=tuple(int(d) for d in _floats(args.degrees)),
        n_runs=args.runs,
        sample_size=args.sample_size,
        scale=args.scale,
        cv_folds=args.folds,
        nu=args.nu,
        max_iters=args.max_iters,
        qp_tol=settings.qp_tol,
        explainer=_explainer_config(args),
        seed=args.seed,
        workers=args.workers if args.workers is not None else settings.workers,
    )
    data_dir = args.data_dir if args.data_dir else settings.data_dir
    report = run_experiment(cfg, data_dir=data_dir, progress_interval=settings.progress_interval)
    write_report(report, args.out)
    return EXIT_OK


def cmd_flipset(args, settings: Settings) -> int:
    model = recourse_svm.load_model(args.model)
    point = np.array(_floats(args.point))
    flipped = recourse_svm.flipset(model, point)
    _write_json(args.out, {
        "point": point.tolist(),
        "flipset": flipped.tolist(),
        "change": (flipped - point).tolist(),
        "cost_distance": float(np.linalg.norm((flipped - point) * model.cost.vector)),
    })
    logger.info(f"✅ Flipset written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="equal-recourse", description="Classifiers with equalized recourse across two groups")
    parser.add_argument("--log-level", default=None, help="override RECOURSE_LOG_LEVEL (DEBUG, INFO, ...)")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_common(sub):
        sub.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        return sub

    def with_data(sub):
        sub.add_argument("--data", required=True, help="input CSV with features, label and group columns")
        sub.add_argument("--label-column", default="label", help="label column name (default label, +1 = '1')")
        sub.add_argument("--group-column", default="group", help="group column name (default group, +1 = '1')")
        return sub

    def with_explainer(sub):
        sub.add_argument("--samples", type=int, default=5000, help="neighborhood samples per set (default 5000)")
        sub.add_argument("--sets", type=int, default=2, help="neighborhood sets kept (default 2)")
        sub.add_argument("--top-k", type=int, default=10, help="features kept by local surrogates (default 10)")
        sub.add_argument("--normalization", choices=("range", "minmax"), default="range",
                         help="distance normalization per set (default range)")
        return sub

    synth = with_common(commands.add_parser("synth", help="write a synthetic two-group dataset"))
    synth.add_argument("--kind", choices=sorted(SYNTH_CHOICES), default="linear", help="layout (default linear)")
    synth.add_argument("--out", required=True, help="output CSV path")
    synth.add_argument("--n-per-cell", type=int, default=100, help="rows per (label, group) cell (default 100)")
    synth.add_argument("--shift", type=float, default=4.0, help="extra distance of group -1 negatives (default 4)")
    synth.add_argument("--noise", type=float, default=0.5, help="noise standard deviation (default 0.5)")
    synth.set_defaults(handler=cmd_synth)

    train_svm = with_data(with_common(commands.add_parser("train-svm", help="train the recourse-regularized SVM")))
    train_svm.add_argument("--model", required=True, help="output model JSON")
    train_svm.add_argument("--lambda", dest="lam", type=float, default=10.0, help="recourse penalty λ (default 10)")
    train_svm.add_argument("--nu", type=float, default=10.0, help="soft-margin bound ν (default 10)")
    train_svm.add_argument("--kernel", default="linear", help="linear | poly:D | rbf:G (default linear)")
    train_svm.add_argument("--cost", default=None, help="comma-separated per-feature costs (default all 1)")
    train_svm.add_argument("--max-iters", type=int, default=10, help="training iterations (default 10)")
    train_svm.add_argument("--qp-tol", type=float, default=None, help="QP tolerance (default RECOURSE_QP_TOL)")
    train_svm.add_argument("--denominator", choices=[d.value for d in GroupDenominator],
                           default=GroupDenominator.NEGATIVES.value, help="pseudo-weight group size (default negatives)")
    train_svm.set_defaults(handler=cmd_train_svm)

    train_bb = with_data(with_common(commands.add_parser("train-blackbox", help="fit a black-box classifier")))
    train_bb.add_argument("--model", required=True, help="output model JSON")
    train_bb.add_argument("--blackbox", choices=sorted(BLACKBOX_CHOICES), default="logistic", help="classifier kind")
    train_bb.set_defaults(handler=cmd_train_blackbox)

    eq = with_explainer(with_data(with_common(commands.add_parser("equalize", help="re-weight and retrain a black box"))))
    eq.add_argument("--blackbox", choices=sorted(BLACKBOX_CHOICES), default="logistic", help="classifier kind")
    eq.add_argument("--out", required=True, help="output JSON with weights and before/after recourse")
    eq.add_argument("--model", default=None, help="optional path for the retrained model JSON")
    eq.set_defaults(handler=cmd_equalize)

    evaluate = with_explainer(with_data(with_common(commands.add_parser("evaluate", help="accuracy and group recourse of a model"))))
    evaluate.add_argument("--model", required=True, help="model JSON from train-svm or train-blackbox")
    evaluate.add_argument("--out", required=True, help="output JSON")
    evaluate.set_defaults(handler=cmd_evaluate)

    exp = with_explainer(with_common(commands.add_parser("experiment", help="repeated runs with before/after statistics")))
    exp.add_argument("--dataset", required=True,
                     help="german | credit | givemecredit | propublica | synthetic_linear | synthetic_ring | CSV path")
    exp.add_argument("--method", choices=[m.value for m in Method], default="svm", help="svm or agnostic")
    exp.add_argument("--blackbox", choices=sorted(BLACKBOX_CHOICES), default="logistic", help="agnostic classifier")
    exp.add_argument("--kernel-family", choices=[k.value for k in KernelFamily], default="poly", help="svm kernels")
    exp.add_argument("--lambdas", default=",".join(str(v) for v in DEFAULT_LAMBDA_GRID), help="λ grid")
    exp.add_argument("--degrees", default=",".join(str(v) for v in DEFAULT_DEGREE_GRID), help="polynomial degree grid")
    exp.add_argument("--runs", type=int, default=10, help="independent runs (default 10)")
    exp.add_argument("--folds", type=int, default=10, help="cross-validation folds (default 10)")
    exp.add_argument("--nu", type=float, default=10.0, help="soft-margin bound ν (default 10)")
    exp.add_argument("--max-iters", type=int, default=10, help="training iterations (default 10)")
    exp.add_argument("--sample-size", type=int, default=None, help="rows per run (default 5000 credit, 1000 others)")
    exp.add_argument("--scale", type=float, default=1.0, help="multiplier on the sample size (default 1)")
    exp.add_argument("--workers", type=int, default=None, help="parallel runs (default RECOURSE_WORKERS)")
    exp.add_argument("--data-dir", default=None, help="directory with named datasets (default RECOURSE_DATA_DIR)")
    exp.add_argument("--out", required=True, help="report JSON; raw records go to <stem>.records.csv")
    exp.set_defaults(handler=cmd_experiment)

    flip = with_common(commands.add_parser("flipset", help="nearby positively classified point for a negative one"))
    flip.add_argument("--model", required=True, help="recourse SVM model JSON")
    flip.add_argument("--point", required=True, help="comma-separated feature values")
    flip.add_argument("--out", required=True, help="output JSON")
    flip.set_defaults(handler=cmd_flipset)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    settings = load_settings()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(settings, args.log_level)
    try:
        return args.handler(args, settings)
    except RecourseError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"❌ Invalid argument: {e}")
        return EXIT_USAGE
