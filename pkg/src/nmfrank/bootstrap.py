"""Parametric bootstrap of the LR statistic and the pure convergence-error sample."""

import functools
from dataclasses import dataclass

import numpy as np

from ._seeding import STREAM_DATA, STREAM_ERROR_DATA, STREAM_ERROR_FIT, STREAM_FIT, derive_seed
from .data import DataMatrix, Family, ModelFamily
from .exceptions import ConfigError, FitError
from .nmf import multi_start_fit
from .parallel import pmap


@dataclass(frozen=True)
class NullModel:
    """Fitted rank-k null: mean T0 W0 and, for Gaussian data, a variance."""

    mean: np.ndarray
    family: ModelFamily

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        if np.any(mean < 0):
            raise ValueError("null mean must be non-negative")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)


@dataclass(frozen=True)
class LRSample:
    """B bootstrap draws of the LR statistic, with the per-start logliks
    (B x m arrays) that produced them."""

    values: np.ndarray
    k: int
    per_sample_seeds: tuple
    logliks_k: np.ndarray
    logliks_k1: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ErrorSample:
    """All m^2 pairwise convergence errors 2 (e_i(k) - e_j(k+1)), i-major."""

    values: np.ndarray
    m: int
    logliks_k: np.ndarray
    logliks_k1: np.ndarray

    def __len__(self):
        return len(self.values)


def sample_null_dataset(null, seed):
    """Draw one dataset of the original shape from the null model.

    Gaussian draws are truncated at zero, as the observed data are.
    """
    rng = np.random.default_rng(seed)
    if null.family.kind is Family.POISSON:
        values = rng.poisson(null.mean).astype(np.float64)
    else:
        values = rng.normal(null.mean, np.sqrt(null.family.variance))
        np.maximum(values, 0.0, out=values)
    return DataMatrix(values)


def _replicate(b, null, k, m, master_seed, opts):
    data_seed = derive_seed(master_seed, STREAM_DATA, b)
    X = sample_null_dataset(null, data_seed)
    try:
        fit_k = multi_start_fit(X, k, null.family.kind, m,
                                derive_seed(master_seed, STREAM_FIT, b, k), opts, workers=1)
        fit_k1 = multi_start_fit(X, k + 1, null.family.kind, m,
                                 derive_seed(master_seed, STREAM_FIT, b, k + 1), opts, workers=1)
    except FitError as exc:
        raise FitError(f"bootstrap replicate {b}: {exc}") from exc
    return data_seed, fit_k.all_logliks, fit_k1.all_logliks


def boot_lr_sample_bestofm(null, k, B, m, master_seed, opts=None, workers=None):
    """For each of B null datasets, fit ranks k and k+1 with m starts each and
    record -2 (best l(k) - best l(k+1))."""
    if B < 1 or m < 1:
        raise ConfigError("B and m must be >= 1")
    job = functools.partial(_replicate, null=null, k=k, m=m,
                            master_seed=master_seed, opts=opts)
    results = pmap(job, range(B), workers)
    seeds = tuple(r[0] for r in results)
    lk = np.array([r[1] for r in results])
    lk1 = np.array([r[2] for r in results])
    values = -2.0 * (lk.max(axis=1) - lk1.max(axis=1))
    return LRSample(values, k, seeds, lk, lk1)


def boot_lr_sample_single(null, k, B, master_seed, opts=None, workers=None):
    """Single-start variant; values carry convergence error and may be negative."""
    return boot_lr_sample_bestofm(null, k, B, 1, master_seed, opts, workers)


def error_values(logliks_k, logliks_k1):
    """Pairwise errors from per-start log-likelihoods on one dataset.

    With shortfalls e_i(k) = max l(k) - l_i(k) >= 0, a single-start statistic
    is the error-free one plus 2 (e_i(k) - e_j(k+1)).
    """
    lk = np.asarray(logliks_k, dtype=np.float64)
    lk1 = np.asarray(logliks_k1, dtype=np.float64)
    e_k = lk.max() - lk
    e_k1 = lk1.max() - lk1
    return (2.0 * (e_k[:, None] - e_k1[None, :])).ravel()


def pure_error_sample(null, k, m, seed, opts=None, workers=None):
    """Fit ranks k and k+1 with m starts on one extra null dataset and return
    all m^2 pairwise convergence errors."""
    if m < 2:
        raise ConfigError("an error sample needs m >= 2 starts")
    X = sample_null_dataset(null, derive_seed(seed, STREAM_ERROR_DATA))
    try:
        fit_k = multi_start_fit(X, k, null.family.kind, m,
                                derive_seed(seed, STREAM_ERROR_FIT, k), opts, workers)
        fit_k1 = multi_start_fit(X, k + 1, null.family.kind, m,
                                 derive_seed(seed, STREAM_ERROR_FIT, k + 1), opts, workers)
    except FitError as exc:
        raise FitError(f"error-sample dataset: {exc}") from exc
    values = error_values(fit_k.all_logliks, fit_k1.all_logliks)
    return ErrorSample(values, m, np.array(fit_k.all_logliks), np.array(fit_k1.all_logliks))


def write_sample(sample, path):
    """One value per line, full precision."""
    with open(path, "w") as fh:
        for v in np.asarray(sample.values if hasattr(sample, "values") else sample):
            fh.write(f"{float(v)!r}\n")


def read_sample(path):
    with open(path) as fh:
        return np.array([float(line) for line in fh if line.strip()])
