"""One-class nu-SVM: RBF-kernel dual solved by sequential minimal optimization.

The dual problem is

    min_alpha  0.5 * sum_ij alpha_i alpha_j K(x_i, x_j)
    s.t.       0 <= alpha_i <= 1/(nu*m),   sum_i alpha_i = 1

with K(x, z) = exp(-gamma * ||x - z||^2).  nu in (0, 1] upper-bounds the
fraction of flagged outliers and lower-bounds the support-vector fraction.

SMO repeatedly picks the maximally KKT-violating pair (i with the smallest
gradient among coefficients with room to grow, j with the largest among
those with room to shrink) and solves the two-variable subproblem exactly
under the box and the simplex equality.  The offset rho is the common
gradient value of the strictly interior coefficients; a new point x is
anomalous when sum_i alpha_i K(x_i, x) - rho < 0.

Kernel handling: the full m x m matrix is materialized only for
m <= full_matrix_max (default 20,000); above that, kernel columns are
computed on demand and kept in a bounded LRU cache, so 100,000-point runs
stay within ordinary memory budgets.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .features import FeatureMatrix
from .ranking import AnomalyRanking

SUPPORT_EPS = 1e-12


@dataclass
class SmoConfig:
    tol: float = 1e-3  # KKT violation tolerance
    max_passes: int = 200_000  # pair updates before giving up
    seed: int = 0  # tie-shuffling among equally violating pairs
    full_matrix_max: int = 20_000
    cache_columns: int = 512
    record_history: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


@dataclass(frozen=True)
class OcSvmModel:
    support_points: np.ndarray  # s x n
    support_alphas: np.ndarray  # s
    rho: float
    gamma: float
    nu: float
    m: int  # training size
    dual_objective: float
    converged: bool
    rho_fallback: bool
    objective_history: tuple[float, ...] = field(default=())

    @property
    def upper_bound(self) -> float:
        return 1.0 / (self.nu * self.m)


def rbf_kernel(x: np.ndarray, z: np.ndarray, gamma: float) -> float:
    """exp(-gamma * ||x - z||^2); the paper's (x - z)^2 read as the squared
    Euclidean norm, which is the only interpretation defined for vectors."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    diff = np.asarray(x, dtype=float) - np.asarray(z, dtype=float)
    return float(np.exp(-gamma * np.dot(diff, diff)))


class _KernelColumns:
    """Kernel columns of the training set, full-matrix or LRU-cached."""

    def __init__(self, X: np.ndarray, gamma: float, config: SmoConfig):
        self.X = X
        self.gamma = gamma
        self.sq = (X * X).sum(axis=1)
        self.full: np.ndarray | None = None
        if X.shape[0] <= config.full_matrix_max:
            K = X @ X.T
            K *= -2.0
            K += self.sq[:, None]
            K += self.sq[None, :]
            np.maximum(K, 0.0, out=K)
            K *= -gamma
            np.exp(K, out=K)
            self.full = K
        else:
            self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
            self._max_cols = max(2, config.cache_columns)

    def col(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        cached = self._cache.get(i)
        if cached is not None:
            self._cache.move_to_end(i)
            return cached
        d2 = self.sq - 2.0 * (self.X @ self.X[i]) + self.sq[i]
        col = np.exp(-self.gamma * np.maximum(d2, 0.0))
        self._cache[i] = col
        if len(self._cache) > self._max_cols:
            self._cache.popitem(last=False)
        return col

    def entry(self, i: int, j: int) -> float:
        if self.full is not None:
            return float(self.full[i, j])
        return float(self._cache[i][j]) if i in self._cache else float(self.col(i)[j])


def _initial_alpha(m: int, c_upper: float, nu: float) -> np.ndarray:
    alpha = np.zeros(m)
    n_full = min(int(math.floor(nu * m + 1e-9)), m)
    alpha[:n_full] = c_upper
    if n_full < m:
        alpha[n_full] = max(1.0 - n_full * c_upper, 0.0)
    return alpha


def recover_rho(
    alpha: np.ndarray, gradient: np.ndarray, c_upper: float
) -> tuple[float, bool]:
    """rho = sum_i alpha_i K(x_i, x_j) for strictly interior j.

    All interior recoveries agree within the convergence tolerance; the
    smallest one is returned so that every interior support vector scores on
    or above the boundary (with the mean, half of them would sit a rounding
    error below zero and be counted as outliers, breaking the nu bound on
    the flagged fraction).  If no interior coefficient exists the median
    over the support is used and the fallback flag is set.
    """
    interior = (alpha > SUPPORT_EPS) & (c_upper - alpha > SUPPORT_EPS)
    if interior.any():
        return float(gradient[interior].min()), False
    support = alpha > SUPPORT_EPS
    return float(np.median(gradient[support])), True


def fit_ocsvm(
    matrix: FeatureMatrix,
    nu: float,
    gamma: float | None = None,
    config: SmoConfig | None = None,
) -> OcSvmModel:
    """Solve the dual by SMO; train and detect on the same data set.

    gamma defaults to 1/n on normalized features.  Initialization puts the
    upper bound 1/(nu*m) on the first floor(nu*m) coefficients and the
    remaining mass on the next one, which is feasible by construction.
    """
    if not matrix.normalized:
        raise ValueError("expected a normalized feature matrix")
    config = config or SmoConfig()
    X = matrix.values
    m, n = X.shape
    if not 0 < nu <= 1:
        raise ValueError("nu must be in (0, 1]")
    if nu * m < 1:
        raise ValueError("infeasible: nu * m must be >= 1")
    if gamma is None:
        gamma = 1.0 / n
    if gamma <= 0:
        raise ValueError("gamma must be > 0")

    c_upper = 1.0 / (nu * m)
    kernel = _KernelColumns(X, gamma, config)
    alpha = _initial_alpha(m, c_upper, nu)

    if kernel.full is not None:
        g = kernel.full @ alpha
    else:
        g = np.zeros(m)
        for j in np.flatnonzero(alpha > 0):
            g += alpha[j] * kernel.col(int(j))

    rng = np.random.default_rng(config.seed)
    priority = rng.permutation(m)
    bound_eps = c_upper * 1e-12
    history: list[float] = []
    converged = False

    def pick(values: np.ndarray, mask: np.ndarray, largest: bool) -> int:
        masked = np.where(mask, values, -np.inf if largest else np.inf)
        extreme = masked.max() if largest else masked.min()
        ties = np.flatnonzero(masked == extreme)
        return int(ties[priority[ties].argmax()]) if len(ties) > 1 else int(ties[0])

    for _ in range(config.max_passes):
        if config.record_history:
            history.append(0.5 * float(alpha @ g))
        up = (c_upper - alpha) > bound_eps
        down = alpha > bound_eps
        if not up.any() or not down.any():
            converged = True  # feasible set is a single point
            break
        i = pick(g, up, largest=False)
        j = pick(g, down, largest=True)
        violation = g[j] - g[i]
        if violation < config.tol:
            converged = True
            break
        quad = 2.0 * (1.0 - kernel.entry(i, j))  # K_ii = K_jj = 1 for RBF
        t = violation / max(quad, 1e-12)
        t = min(t, c_upper - alpha[i], alpha[j])
        alpha[i] = min(alpha[i] + t, c_upper)
        alpha[j] = max(alpha[j] - t, 0.0)
        g += t * (kernel.col(i) - kernel.col(j))

    # Exact gradient for rho and the reported objective (the maintained g
    # accumulates rounding over many pair updates).
    if kernel.full is not None:
        g = kernel.full @ alpha
    else:
        g = np.zeros(m)
        for j in np.flatnonzero(alpha > SUPPORT_EPS):
            g += alpha[j] * kernel.col(int(j))
    if config.record_history:
        history.append(0.5 * float(alpha @ g))

    rho, fallback = recover_rho(alpha, g, c_upper)
    support = alpha > SUPPORT_EPS
    return OcSvmModel(
        support_points=X[support].copy(),
        support_alphas=alpha[support].copy(),
        rho=rho,
        gamma=gamma,
        nu=nu,
        m=m,
        dual_objective=0.5 * float(alpha @ g),
        converged=converged,
        rho_fallback=fallback,
        objective_history=tuple(history),
    )


def decision_values(model: OcSvmModel, X: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """sum_i alpha_i K(x_i, x) - rho for each row of X; negative = anomaly."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    S = model.support_points
    s_sq = (S * S).sum(axis=1)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk):
        block = X[start : start + chunk]
        d2 = (block * block).sum(axis=1)[:, None] - 2.0 * block @ S.T + s_sq[None, :]
        K = np.exp(-model.gamma * np.maximum(d2, 0.0))
        out[start : start + chunk] = K @ model.support_alphas - model.rho
    return out


def decision_value(model: OcSvmModel, x: np.ndarray) -> float:
    return float(decision_values(model, np.asarray(x, dtype=float)[None, :])[0])


def flag_anomalies(model: OcSvmModel, matrix: FeatureMatrix) -> AnomalyRanking:
    """Rank by ascending decision value; flagged = strictly negative."""
    d = decision_values(model, matrix.values)
    order = np.argsort(d, kind="stable")
    entries = tuple((matrix.entity_ids[i], float(-d[i])) for i in order)
    return AnomalyRanking(entries=entries, flagged_count=int(np.count_nonzero(d < 0)))


def tune_nu(
    user_rank_fn: Callable[[float], AnomalyRanking],
    tx_rank_fn: Callable[[float], AnomalyRanking],
    candidates: Sequence[float],
    ownership,
    n_top: int = 100,
    m_top: int = 100,
) -> tuple[float, list[tuple[float, float, float]]]:
    """Sweep nu candidates, score each with the dual-evaluation metric, and
    return the (A1+A2)/2-maximizing candidate (ties toward the earlier one)
    together with the (nu, A1, A2) curve."""
    from .evaluation import dual_evaluation

    if not candidates:
        raise ValueError("need at least one nu candidate")
    curve: list[tuple[float, float, float]] = []
    best_nu, best_score = None, -math.inf
    for nu in candidates:
        result = dual_evaluation(
            user_rank_fn(nu), tx_rank_fn(nu), ownership, n_top, m_top
        )
        curve.append((nu, result.a1, result.a2))
        if result.m_de > best_score:
            best_nu, best_score = nu, result.m_de
    return best_nu, curve


def write_nu_sweep_csv(curve: list[tuple[float, float, float]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("nu,A1,A2\n")
        for nu, a1, a2 in curve:
            fh.write(f"{nu!r},{a1!r},{a2!r}\n")


def save_model(model: OcSvmModel, path) -> None:
    payload = {
        "format": "ocsvm-v1",
        "gamma": model.gamma,
        "nu": model.nu,
        "rho": model.rho,
        "m": model.m,
        "dual_objective": model.dual_objective,
        "converged": model.converged,
        "rho_fallback": model.rho_fallback,
        "alphas": model.support_alphas.tolist(),
        "support": model.support_points.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path) -> OcSvmModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "ocsvm-v1":
        raise ValueError(f"unsupported model format {payload.get('format')!r}")
    return OcSvmModel(
        support_points=np.array(payload["support"], dtype=float),
        support_alphas=np.array(payload["alphas"], dtype=float),
        rho=payload["rho"],
        gamma=payload["gamma"],
        nu=payload["nu"],
        m=payload["m"],
        dual_objective=payload["dual_objective"],
        converged=payload["converged"],
        rho_fallback=payload["rho_fallback"],
    )
