"""Log-likelihoods for the Poisson and Gaussian NMF models and the LR statistic."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from .data import INTEGRALITY_TOL, VARIANCE_FLOOR, as_array
from .exceptions import ConfigError, DataError

# Poisson means are floored inside the log only; identical on real and
# bootstrap data, so the LR statistic is not biased by the guard.
MEAN_FLOOR = 1e-10


def _check_shapes(X, M):
    if X.shape != M.shape:
        raise DataError(f"shape mismatch: data {X.shape} vs mean {M.shape}")


def poisson_loglik(X, M):
    """Sum over cells of x ln m - m - ln x!, with 0 ln 0 = 0."""
    X = as_array(X)
    M = np.asarray(M, dtype=np.float64)
    _check_shapes(X, M)
    counts = np.rint(X)
    if np.max(np.abs(X - counts), initial=0.0) > INTEGRALITY_TOL:
        raise DataError("Poisson log-likelihood requires integer counts")
    return float(
        np.sum(xlogy(counts, np.maximum(M, MEAN_FLOOR)) - M - gammaln(counts + 1.0))
    )


def gaussian_loglik(X, M, variance):
    X = as_array(X)
    M = np.asarray(M, dtype=np.float64)
    _check_shapes(X, M)
    if not variance >= VARIANCE_FLOOR:
        raise ConfigError(f"variance {variance} below floor {VARIANCE_FLOOR}")
    resid = X - M
    return float(
        -0.5 * X.size * math.log(2.0 * math.pi * variance)
        - np.sum(resid * resid) / (2.0 * variance)
    )


def estimate_variance(X, T, W):
    """Mean squared residual of X - TW, floored at VARIANCE_FLOOR."""
    X = as_array(X)
    M = np.asarray(T) @ np.asarray(W)
    _check_shapes(X, M)
    resid = X - M
    return max(float(np.mean(resid * resid)), VARIANCE_FLOOR)


def average_variance(per_run_variances):
    v = np.asarray(per_run_variances, dtype=np.float64)
    if v.size == 0:
        raise ValueError("need at least one variance estimate")
    return max(float(np.mean(v)), VARIANCE_FLOOR)


def model_loglik(X, T, W, family):
    """Log-likelihood of a fitted factorization under ``family``.

    The Gaussian variance is re-estimated from the fit's own residuals.
    """
    if family == "poisson":
        return poisson_loglik(X, T @ W), None
    variance = estimate_variance(X, T, W)
    return gaussian_loglik(X, T @ W, variance), variance


@dataclass(frozen=True)
class LRStatistic:
    value: float
    k: int
    loglik_k: float
    loglik_k1: float


def lr_statistic(loglik_k, loglik_k1, k):
    """-2 (l(k) - l(k+1)).

    Negative values are legal: they appear when either fit missed its global
    optimum.
    """
    if not (math.isfinite(loglik_k) and math.isfinite(loglik_k1)):
        raise ValueError(f"non-finite log-likelihoods ({loglik_k}, {loglik_k1})")
    return LRStatistic(-2.0 * (loglik_k - loglik_k1), k, float(loglik_k), float(loglik_k1))
