"""
Equal Recourse - QP Solver
Generalized two-variable SMO for  min ½μᵀMμ + eᵀμ  s.t.  a·μ = 0,  lower ≤ μ ≤ upper
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog, minimize

from recourse.utils.errors import ConditioningError, ContractViolation, InfeasibleProblemError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-6
ZERO_COEF_TOL = 1e-12
CURVATURE_EPS = 1e-14


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    """Dense convex QP with box bounds and one general equality a·μ = 0"""

    M: np.ndarray
    e: np.ndarray
    a: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=np.float64)
        m = M.shape[0]
        if M.ndim != 2 or M.shape != (m, m) or m < 1:
            raise ContractViolation(f"M must be a non-empty square matrix, got shape {M.shape}")
        vectors = {}
        for name in ("e", "a", "lower", "upper"):
            vec = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if vec.shape[0] != m:
                raise ContractViolation(f"{name} must have length {m}, got {vec.shape[0]}")
            vectors[name] = vec
        object.__setattr__(self, "M", M)
        for name, vec in vectors.items():
            object.__setattr__(self, name, vec)

    @property
    def m(self) -> int:
        return self.M.shape[0]

    def objective(self, mu: np.ndarray) -> float:
        mu = np.asarray(mu, dtype=np.float64)
        return float(0.5 * mu @ self.M @ mu + self.e @ mu)

    def gradient(self, mu: np.ndarray) -> np.ndarray:
        return self.M @ np.asarray(mu, dtype=np.float64) + self.e

    def with_jitter(self, jitter: float) -> "QuadraticProgram":
        return QuadraticProgram(self.M + jitter * np.eye(self.m), self.e, self.a, self.lower, self.upper)

    def validate(self, psd_check_limit: int = 2000):
        """Check symmetry, box consistency and (for m <= psd_check_limit) PSD-ness"""
        scale = max(1.0, float(np.max(np.abs(self.M))))
        asymmetry = float(np.max(np.abs(self.M - self.M.T)))
        if asymmetry > SYMMETRY_TOL * scale:
            raise ContractViolation(f"M is not symmetric (max asymmetry {asymmetry:.3e})")
        if np.any(self.lower > self.upper):
            bad = int(np.flatnonzero(self.lower > self.upper)[0])
            raise InfeasibleProblemError(
                f"box for variable {bad} is empty: [{self.lower[bad]}, {self.upper[bad]}]"
            )
        if self.m <= psd_check_limit:
            min_eig = float(np.linalg.eigvalsh(self.M)[0])
            if min_eig < -PSD_TOL * scale:
                raise ConditioningError(f"M is not positive semi-definite (min eigenvalue {min_eig:.3e})")
        else:
            logger.debug(f"Skipping PSD eigen-check for m={self.m} > {psd_check_limit}")


@dataclass(frozen=True, eq=False)
class QPSolution:
    mu: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    method: str = "smo"
    jitter: float = 0.0
    history: Tuple[float, ...] = field(default_factory=tuple)


def _effective_coefficients(a: np.ndarray) -> np.ndarray:
    """Equality coefficients with round-off-sized entries snapped to exactly 0"""
    snapped = a.copy()
    snapped[np.abs(a) <= ZERO_COEF_TOL * max(1.0, float(np.max(np.abs(a))))] = 0.0
    return snapped


def _initial_point(lower: np.ndarray, upper: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Point of the box satisfying a·μ = 0 (μ = 0 whenever it is feasible)"""
    mu = np.clip(np.zeros_like(lower), lower, upper)
    residual = float(a @ mu)
    if residual == 0.0:
        return mu

    low_total = float(np.sum(np.minimum(a * lower, a * upper)))
    high_total = float(np.sum(np.maximum(a * lower, a * upper)))
    slack = 1e-12 * max(1.0, abs(low_total), abs(high_total))
    if not (low_total - slack <= 0.0 <= high_total + slack):
        raise InfeasibleProblemError(
            f"equality a·μ = 0 unreachable inside the box (range [{low_total:.6g}, {high_total:.6g}])"
        )

    for k in np.flatnonzero(a):
        if residual == 0.0:
            break
        # move μ_k so that a_k μ_k absorbs as much of the residual as its box allows
        target = mu[k] - residual / a[k]
        new_value = min(max(target, lower[k]), upper[k])
        residual += a[k] * (new_value - mu[k])
        mu[k] = new_value
    return mu


def kkt_residual(qp: QuadraticProgram, mu: np.ndarray) -> float:
    """
    Projected-gradient stationarity violation, minimized over the equality
    multiplier β, plus |a·μ|.
    """
    mu = np.asarray(mu, dtype=np.float64)
    a = _effective_coefficients(qp.a)
    G = qp.gradient(mu)
    bound_tol = 1e-10 * max(1.0, float(np.max(np.abs(np.concatenate([qp.lower, qp.upper])))))

    fixed = (qp.upper - qp.lower) <= bound_tol
    at_lower = (mu <= qp.lower + bound_tol) & ~fixed
    at_upper = (mu >= qp.upper - bound_tol) & ~fixed & ~at_lower
    free = ~(fixed | at_lower | at_upper)

    # violation(β) = max over lines c + s·β (and 0); minimize the max over β via a tiny LP
    offsets = [np.zeros(1)]
    slopes = [np.zeros(1)]
    offsets += [-G[at_lower], G[at_upper], G[free], -G[free]]
    slopes += [-a[at_lower], a[at_upper], a[free], -a[free]]
    c_k = np.concatenate(offsets)
    s_k = np.concatenate(slopes)

    if np.all(s_k == 0.0):
        stationarity = float(np.max(c_k))
    else:
        A_ub = np.column_stack([-np.ones_like(s_k), s_k])
        result = linprog(
            c=[1.0, 0.0],
            A_ub=A_ub,
            b_ub=-c_k,
            bounds=[(0.0, None), (None, None)],
            method="highs",
        )
        if result.status == 0:
            stationarity = float(result.x[0])
        else:
            logger.debug(f"KKT multiplier LP did not solve ({result.message}); using β = 0")
            stationarity = float(np.max(c_k))

    return stationarity + abs(float(qp.a @ mu))


def _smo(qp: QuadraticProgram, tol: float, max_iters: int, record_history: bool) -> QPSolution:
    M, lo, hi = qp.M, qp.lower, qp.upper
    a = _effective_coefficients(qp.a)
    nonzero = a != 0.0
    zero = ~nonzero

    mu = _initial_point(lo, hi, a)
    G = qp.gradient(mu)
    objective = qp.objective(mu)
    history: List[float] = [objective] if record_history else []
    diag = np.diag(M).copy()

    inner_tol = tol
    iterations = 0
    converged = False
    residual = float("inf")
    safe_a = np.where(nonzero, a, 1.0)

    while iterations < max_iters:
        # maximal violating pair among variables tied by the equality constraint
        gap = 0.0
        i = j = -1
        if np.count_nonzero(nonzero) >= 2:
            ratio = G / safe_a
            can_receive = nonzero & (((a > 0) & (mu < hi)) | ((a < 0) & (mu > lo)))
            can_give = nonzero & (((a > 0) & (mu > lo)) | ((a < 0) & (mu < hi)))
            if can_receive.any() and can_give.any():
                i = int(np.flatnonzero(can_receive)[np.argmin(ratio[can_receive])])
                j = int(np.flatnonzero(can_give)[np.argmax(ratio[can_give])])
                gap = float(ratio[j] - ratio[i])

        # free-standing variables (zero equality coefficient) move alone
        single_gap = 0.0
        s = -1
        if zero.any():
            violation = np.where(zero & (G < 0) & (mu < hi), -G, 0.0)
            violation = np.maximum(violation, np.where(zero & (G > 0) & (mu > lo), G, 0.0))
            s = int(np.argmax(violation))
            single_gap = float(violation[s])

        if max(gap, single_gap) <= inner_tol:
            residual = kkt_residual(qp, mu)
            if residual <= tol:
                converged = True
                break
            inner_tol /= 10.0
            if inner_tol < 1e-15:
                break
            continue

        iterations += 1
        if single_gap > gap:
            curvature = diag[s]
            if curvature > CURVATURE_EPS:
                new_value = min(max(mu[s] - G[s] / curvature, lo[s]), hi[s])
            else:
                new_value = hi[s] if G[s] < 0 else lo[s]
            delta = new_value - mu[s]
            objective += G[s] * delta + 0.5 * curvature * delta * delta
            mu[s] = new_value
            G += M[s] * delta
        else:
            # flow t along a_i δ_i + a_j δ_j = 0 with δ_i = t / a_i, δ_j = -t / a_j
            ai, aj = a[i], a[j]
            slope = G[i] / ai - G[j] / aj
            curvature = diag[i] / (ai * ai) + diag[j] / (aj * aj) - 2.0 * M[i, j] / (ai * aj)
            t_i = (hi[i] - mu[i]) * ai if ai > 0 else (lo[i] - mu[i]) * ai
            t_j = (mu[j] - lo[j]) * aj if aj > 0 else (mu[j] - hi[j]) * aj
            t_max = min(t_i, t_j)
            t = min(-slope / curvature, t_max) if curvature > CURVATURE_EPS else t_max
            if not np.isfinite(t) or t <= 0.0:
                logger.debug(f"SMO stalled on pair ({i}, {j}) at iteration {iterations}")
                break

            delta_i = t / ai
            delta_j = -t / aj
            new_i = mu[i] + delta_i
            new_j = mu[j] + delta_j
            if t == t_i:
                new_i = hi[i] if ai > 0 else lo[i]
            if t == t_j:
                new_j = lo[j] if aj > 0 else hi[j]
            new_i = min(max(new_i, lo[i]), hi[i])
            new_j = min(max(new_j, lo[j]), hi[j])
            delta_i = new_i - mu[i]
            delta_j = new_j - mu[j]

            objective += slope * t + 0.5 * curvature * t * t
            mu[i] = new_i
            mu[j] = new_j
            G += M[i] * delta_i + M[j] * delta_j

        if record_history:
            history.append(objective)

    if not converged:
        residual = kkt_residual(qp, mu)
        converged = residual <= tol

    return QPSolution(
        mu=mu,
        objective=qp.objective(mu),
        kkt_residual=residual,
        iterations=iterations,
        converged=converged,
        method="smo",
        history=tuple(history),
    )


def solve_dense(qp: QuadraticProgram, tol: float = 1e-6) -> QPSolution:
    """Whole-problem SLSQP solve; meant for small m (cross-check and fallback)"""
    a = _effective_coefficients(qp.a)
    x0 = _initial_point(qp.lower, qp.upper, a)
    result = minimize(
        qp.objective,
        x0,
        jac=qp.gradient,
        bounds=list(zip(qp.lower, qp.upper)),
        constraints=[{"type": "eq", "fun": lambda mu: a @ mu, "jac": lambda mu: a}],
        method="SLSQP",
        options={"maxiter": 2000, "ftol": 1e-14},
    )
    mu = np.clip(result.x, qp.lower, qp.upper)
    residual = kkt_residual(qp, mu)
    return QPSolution(
        mu=mu,
        objective=qp.objective(mu),
        kkt_residual=residual,
        iterations=int(result.nit),
        converged=residual <= tol,
        method="dense",
    )


def solve(
    qp: QuadraticProgram,
    tol: float = 1e-6,
    max_iters: Optional[int] = None,
    dense_fallback_limit: int = 300,
    psd_check_limit: int = 2000,
    record_history: bool = False,
) -> QPSolution:
    """
    Solve the QP with generalized SMO; the default budget is 100 sweeps (100·m² pair updates).
    - conditioning error: retried once with diagonal jitter 1e-8·trace(M)/m
    - SMO not converged and m <= dense_fallback_limit: dense SLSQP result kept if better
    """
    if not tol > 0:
        raise ContractViolation(f"tol must be positive, got {tol}")

    jitter = 0.0
    try:
        qp.validate(psd_check_limit)
    except ConditioningError as e:
        trace = float(np.trace(qp.M))
        jitter = 1e-8 * trace / qp.m if trace > 0 else 1e-8
        logger.warning(f"⚠️ {e}; retrying once with diagonal jitter {jitter:.3e}")
        qp = qp.with_jitter(jitter)
        qp.validate(psd_check_limit)

    # default budget: 100 sweeps of m pair updates each
    budget = max_iters if max_iters is not None else 100 * qp.m * qp.m
    solution = _smo(qp, tol, budget, record_history)

    if not solution.converged and qp.m <= dense_fallback_limit:
        logger.warning(
            f"⚠️ SMO stopped after {solution.iterations} updates with KKT residual "
            f"{solution.kkt_residual:.3e}; trying dense fallback"
        )
        dense = solve_dense(qp, tol)
        if dense.kkt_residual < solution.kkt_residual and dense.objective <= solution.objective + tol:
            solution = dense

    if jitter:
        solution = QPSolution(
            mu=solution.mu,
            objective=solution.objective,
            kkt_residual=solution.kkt_residual,
            iterations=solution.iterations,
            converged=solution.converged,
            method=solution.method,
            jitter=jitter,
            history=solution.history,
        )

    logger.debug(
        f"QP m={qp.m} solved by {solution.method}: objective={solution.objective:.6g}, "
        f"kkt={solution.kkt_residual:.2e}, iterations={solution.iterations}, converged={solution.converged}"
    )
    return solution
