#!/usr/bin/env python3
"""
Final Validation Report for Equal Recourse
Desk-scale acceptance checks: solver accuracy, synthetic reproductions,
model-agnostic equalization, explainer fidelity and the german directional run
"""

import asyncio
import logging
import time

import numpy as np
from sklearn.svm import SVC

from recourse.classifiers import blackbox, recourse_svm
from recourse.classifiers.blackbox import BlackBoxKind, BlackBoxSpec, FittedBlackBox
from recourse.classifiers.recourse_svm import TrainConfig
from recourse.explainers.local_explainer import ExplainerConfig, estimate_distance, fit_local, sample_neighborhood
from recourse.explainers.reweight_equalizer import equalize, estimate_group_recourse
from recourse.harness.experiment import ExperimentConfig, KernelFamily, Method, percent_reduction, run_experiment
from recourse.models.dataset import GroupedDataset, SyntheticKind, SyntheticSpec, make_synthetic, split
from recourse.solvers.kernels import CostMatrix, KernelKind, KernelSpec
from recourse.solvers.qp_solver import QuadraticProgram, solve, solve_dense
from recourse.utils.config import load_settings
from recourse.utils.errors import DataError

# Suppress logs for clean output
logging.getLogger().setLevel(logging.CRITICAL)


def mark(ok: bool) -> str:
    return '✅' if ok else '❌'


def check_qp_accuracy():
    rng = np.random.default_rng(0)
    worst = 0.0
    started = time.monotonic()
    for index in range(200):
        m = int(rng.integers(2, 21))
        A = rng.standard_normal((m, m))
        a = rng.standard_normal(m)
        if index % 10 == 0:
            a[-1] = 0.0
        qp = QuadraticProgram(
            M=A @ A.T / m,
            e=rng.standard_normal(m),
            a=a,
            lower=-rng.uniform(0.1, 2.0, m),
            upper=rng.uniform(0.1, 2.0, m),
        )
        ours = solve(qp, tol=1e-8).objective
        reference = solve_dense(qp, tol=1e-10).objective
        worst = max(worst, (ours - reference) / max(1.0, abs(reference)))
    return worst <= 1e-6, worst, time.monotonic() - started


def check_synthetic(kind: SyntheticKind, kernel: KernelSpec):
    ds = make_synthetic(SyntheticSpec(kind=kind, n_per_cell=100, seed=0))
    train, test = split(ds, 0.8, seed=0)
    cost = CostMatrix.identity(2)
    vanilla = recourse_svm.train_iterative(train, kernel, cost, TrainConfig(lam=0.0, max_iters=1))
    final = recourse_svm.train_iterative(train, kernel, cost, TrainConfig(lam=100.0, max_iters=10))
    u_before = recourse_svm.evaluate_recourse(vanilla, train).u_abs
    u_after = recourse_svm.evaluate_recourse(final, train).u_abs
    drop = recourse_svm.accuracy(vanilla, test) - recourse_svm.accuracy(final, test)
    return u_after <= 0.5 * u_before and drop <= 0.05, u_before, u_after, drop


def check_vanilla_reduction():
    ds = make_synthetic(SyntheticSpec(n_per_cell=250, seed=1))
    model = recourse_svm.train_iterative(ds, KernelSpec(KernelKind.LINEAR), CostMatrix.identity(2),
                                         TrainConfig(lam=0.0, nu=10.0, max_iters=1))
    reference = SVC(kernel="linear", C=10.0, tol=1e-8).fit(ds.features, ds.labels)
    agreement = float(np.mean(recourse_svm.predict(model, ds.features) == reference.predict(ds.features)))
    w = recourse_svm.materialize_linear_weights(model)
    norm_error = abs(float(w @ w) - model.norm_w ** 2) / max(float(w @ w), 1e-12)
    return agreement >= 0.99 and norm_error <= 1e-6, agreement, norm_error


def check_agnostic(seeds=range(10)):
    reductions, small_drops = [], 0
    spec = BlackBoxSpec(kind=BlackBoxKind.LOGISTIC)
    for seed in seeds:
        ds = make_synthetic(SyntheticSpec(n_per_cell=100, seed=seed))
        train, test = split(ds, 0.8, seed=seed)
        cfg = ExplainerConfig(n_samples=2000, seed=seed)
        result = equalize(train, spec, cfg)
        before = estimate_group_recourse(test, result.model_before, list(result.sets), cfg).u_abs
        after = estimate_group_recourse(test, result.model_after, list(result.sets_after), cfg).u_abs
        reductions.append(percent_reduction(before, after)[0])
        drop = blackbox.accuracy(result.model_before, test) - blackbox.accuracy(result.model_after, test)
        small_drops += int(drop <= 0.05)
    median = float(np.median(reductions))
    return median >= 0.5 and small_drops >= 8, median, small_drops


def check_explainer_fidelity(d=10):
    rng = np.random.default_rng(3)
    features = rng.standard_normal((400, d))
    w, b = rng.standard_normal(d), 0.3
    labels = np.where(features @ w + b >= 0.0, 1, -1)
    ds = GroupedDataset(features, labels, np.where(np.arange(400) % 2 == 0, 1, -1))
    bb = FittedBlackBox(spec=BlackBoxSpec(), n_features=d, coef=w, intercept=b)

    cfg = ExplainerConfig(seed=3)
    ns = sample_neighborhood(ds, bb, cfg)
    negatives = np.flatnonzero(labels == -1)[:200]
    errors = []
    for i in negatives:
        exact = abs(float(features[i] @ w + b)) / np.linalg.norm(w)
        estimated = estimate_distance(fit_local(ns, features[i], cfg), features[i])
        errors.append(abs(estimated - exact) / max(exact, 1e-9))
    median = float(np.median(errors))
    return median <= 0.15, median


def check_german(data_dir):
    cfg = ExperimentConfig(
        dataset="german", method=Method.SVM, kernel_family=KernelFamily.POLY, n_runs=10, sample_size=500, seed=0
    )
    report = run_experiment(cfg, data_dir=data_dir)
    by_run = {}
    for r in report.records:
        if r["split"] == "train":
            by_run.setdefault(r["run_id"], {})[r["phase"]] = r["u_abs"]
    positive = sum(1 for pair in by_run.values() if percent_reduction(pair["before"], pair["after"])[0] > 0)
    return positive >= 8, positive, len(by_run)


async def final_validation():
    """Every desk-scale acceptance check with a printed verdict"""
    print("🔍 FINAL VALIDATION - EQUAL RECOURSE")
    print("=" * 60)
    results = []

    print("\nREQUIREMENT A1: QP solver matches a dense reference on 200 random problems")
    ok, worst, seconds = await asyncio.to_thread(check_qp_accuracy)
    print(f"   Worst relative objective gap: {worst:.2e} ({seconds:.1f}s)")
    print(f"   Solver Accuracy: {mark(ok)}")
    results.append(ok)

    print("\nREQUIREMENT A2: Linear synthetic, λ=100 halves the recourse difference")
    ok, before, after, drop = await asyncio.to_thread(
        check_synthetic, SyntheticKind.LINEAR_SHIFTED_GAUSSIANS, KernelSpec(KernelKind.LINEAR)
    )
    print(f"   u_abs {before:.4f} -> {after:.4f}, test accuracy drop {drop:+.3f}")
    print(f"   Linear Reproduction: {mark(ok)}")
    results.append(ok)

    print("\nREQUIREMENT A3: Ring synthetic, degree-2 polynomial, λ=100")
    ok, before, after, drop = await asyncio.to_thread(
        check_synthetic, SyntheticKind.RING_VS_CLUSTER, KernelSpec(KernelKind.POLYNOMIAL, degree=2)
    )
    print(f"   u_abs {before:.4f} -> {after:.4f}, test accuracy drop {drop:+.3f}")
    print(f"   Nonlinear Reproduction: {mark(ok)}")
    results.append(ok)

    print("\nREQUIREMENT A4: λ=0 agrees with an independent SVM")
    ok, agreement, norm_error = await asyncio.to_thread(check_vanilla_reduction)
    print(f"   Prediction agreement {agreement:.2%}, ‖w‖² relative error {norm_error:.2e}")
    print(f"   Vanilla Reduction: {mark(ok)}")
    results.append(ok)

    print("\nREQUIREMENT A5: Re-weighting a logistic black box over 10 seeds")
    ok, median, small_drops = await asyncio.to_thread(check_agnostic)
    print(f"   Median test reduction {median:.1%}, accuracy drop ≤ 5 points in {small_drops}/10 seeds")
    print(f"   Model-Agnostic Equalization: {mark(ok)}")
    results.append(ok)

    print("\nREQUIREMENT A6: Explainer distance error for a linear black box (d=10)")
    ok, median = await asyncio.to_thread(check_explainer_fidelity)
    print(f"   Median relative distance error {median:.1%}")
    print(f"   Explainer Fidelity: {mark(ok)}")
    results.append(ok)

    print("\nREQUIREMENT A7: German credit directional check")
    settings = load_settings()
    try:
        ok, positive, runs = await asyncio.to_thread(check_german, settings.data_dir)
        print(f"   Train reduction positive in {positive}/{runs} runs")
        print(f"   German Directional Check: {mark(ok)}")
        results.append(ok)
    except DataError as e:
        print(f"   ⚠️ Skipped: {e}")

    print("\nREQUIREMENT A8: Invariant suites")
    print("   Run with: pytest -q")

    print("\n" + "=" * 60)
    if all(results):
        print("🎉 ALL ACCEPTANCE CHECKS PASSED")
    else:
        print(f"❌ {results.count(False)} ACCEPTANCE CHECK(S) FAILED")
    print("=" * 60)
    return all(results)


if __name__ == "__main__":
    raise SystemExit(0 if asyncio.run(final_validation()) else 1)
