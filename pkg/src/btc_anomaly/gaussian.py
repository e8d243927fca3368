"""Multivariate-Gaussian density model and Mahalanobis-distance flagging.

The covariance MLE uses the population (1/m) convention and is ridge
regularized because constant or collinear feature columns make the plain
MLE singular.  All scoring happens in log-density: the raw density
underflows for outliers in six dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix
from .ranking import AnomalyRanking


@dataclass(frozen=True)
class EpsilonThreshold:
    """Flag x when p(x) < epsilon, i.e. log-density < ln(epsilon)."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class QuantileThreshold:
    """Flag the lowest-density fraction q of the scored set."""

    q: float

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise ValueError("quantile must be in (0, 1]")


ThresholdSpec = EpsilonThreshold | QuantileThreshold

DEFAULT_THRESHOLD = QuantileThreshold(0.01)


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray  # n
    covariance: np.ndarray  # n x n, ridge included
    ridge: float
    log_det: float
    precision: np.ndarray  # n x n

    @property
    def n(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(matrix: FeatureMatrix, ridge: float | None = None) -> GaussianModel:
    """MLE mean and population covariance plus ridge * I.

    Default ridge is 1e-6 * trace(raw covariance) / n, floored at 1e-12 so
    a degenerate all-identical sample still yields a usable model.
    """
    if not matrix.normalized:
        raise ValueError("expected a normalized feature matrix")
    X = matrix.values
    m, n = X.shape
    if m < 2:
        raise ValueError("need at least 2 samples")
    mean = X.mean(axis=0)
    centered = X - mean
    cov_raw = centered.T @ centered / m
    if ridge is None:
        ridge = max(1e-6 * float(np.trace(cov_raw)) / n, 1e-12)
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    cov = cov_raw + ridge * np.eye(n)
    sign, log_det = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ValueError("covariance not positive definite; increase ridge")
    precision = np.linalg.inv(cov)
    precision = 0.5 * (precision + precision.T)
    return GaussianModel(
        mean=mean, covariance=cov, ridge=float(ridge), log_det=float(log_det),
        precision=precision,
    )


def _sq_mahalanobis(model: GaussianModel, X: np.ndarray) -> np.ndarray:
    delta = np.atleast_2d(X) - model.mean
    return np.maximum(np.einsum("ij,jk,ik->i", delta, model.precision, delta), 0.0)


def mahalanobis_distance(model: GaussianModel, x: np.ndarray) -> float:
    return float(np.sqrt(_sq_mahalanobis(model, x)[0]))


def log_density(model: GaussianModel, x: np.ndarray) -> float:
    d2 = _sq_mahalanobis(model, x)[0]
    return float(-0.5 * model.n * math.log(2.0 * math.pi) - 0.5 * model.log_det - 0.5 * d2)


def flag_anomalies(
    model: GaussianModel,
    matrix: FeatureMatrix,
    threshold: ThresholdSpec = DEFAULT_THRESHOLD,
) -> AnomalyRanking:
    """Rank by descending Mahalanobis distance (ascending density).

    Training and detection run on the same data set; ``matrix`` is whatever
    should be scored, typically the fitting matrix itself.
    """
    d2 = _sq_mahalanobis(model, matrix.values)
    d = np.sqrt(d2)
    order = np.argsort(-d, kind="stable")
    m = len(order)
    if isinstance(threshold, QuantileThreshold):
        flagged = math.ceil(threshold.q * m)
    elif isinstance(threshold, EpsilonThreshold):
        if threshold.epsilon == 0.0:
            flagged = 0
        else:
            log_eps = math.log(threshold.epsilon)
            logp = -0.5 * model.n * math.log(2 * math.pi) - 0.5 * model.log_det - 0.5 * d2
            flagged = int(np.count_nonzero(logp < log_eps))
    else:
        raise TypeError(f"unknown threshold spec {threshold!r}")
    entries = tuple((matrix.entity_ids[i], float(d[i])) for i in order)
    return AnomalyRanking(entries=entries, flagged_count=flagged)
