"""Rank-k NMF by Lee-Seung multiplicative updates.

Poisson data are fitted by minimizing the generalized KL divergence
D(X || TW) = sum x ln(x / m) - x + m, Gaussian data by minimizing
0.5 * ||X - TW||^2. Both objectives are non-increasing under the updates.
"""

import functools
import math
from dataclasses import dataclass

import numpy as np

from ._seeding import derive_seed
from .data import VARIANCE_FLOOR, Factorization, Family, ModelFamily, as_array
from .exceptions import ConfigError, DataError, FitError
from .likelihood import gaussian_loglik, model_loglik, poisson_loglik
from .parallel import pmap

EPS = 1e-16
FLOOR = 1e-16
# Objectives below this fraction of the data scale are round-off; an exact
# fit stops there instead of chasing noise.
EXACT_TOL = 1e-20


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 2000
    rel_tol: float = 1e-6
    init_low: float = 0.1
    init_high: float = 1.1

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be > 0")


DEFAULT_OPTIONS = FitOptions()


@dataclass(frozen=True)
class MultiStartResult:
    best: Factorization
    all_logliks: tuple
    # Per-start residual variances (Gaussian only), used for the null model.
    all_variances: tuple = ()
    best_index: int = 0


def initialize(X, k, seed, opts=DEFAULT_OPTIONS, mask=None):
    """Uniform random start with T columns summing to one and W scaled so
    that TW has roughly the magnitude of X."""
    p, n = X.shape
    rng = np.random.default_rng(seed)
    T = rng.uniform(opts.init_low, opts.init_high, size=(p, k))
    W = rng.uniform(opts.init_low, opts.init_high, size=(k, n))
    T /= T.sum(axis=0, keepdims=True)
    scale = float(np.mean(X if mask is None else X[mask]))
    W *= max(scale, FLOOR) * p / k
    return T, W


def _kl_terms(X, M):
    # x (u - log1p(u)) with u = (m - x) / x avoids the cancellation in
    # x ln(x/m) - x + m, so near-exact fits keep a small relative error.
    pos = X > 0
    Xs = np.where(pos, X, 1.0)
    u = (M - X) / Xs
    return np.where(pos, X * (u - np.log1p(u)), M)


def kl_divergence(X, M, mask=None):
    X = np.asarray(X, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    with np.errstate(divide="ignore"):
        d = np.where(M > 0, _kl_terms(X, np.maximum(M, 1e-300)), np.where(X > 0, np.inf, 0.0))
    if mask is not None:
        d = np.where(mask, d, 0.0)
    return float(np.sum(d))


def squared_error(X, M, mask=None):
    r = X - M
    if mask is not None:
        r = np.where(mask, r, 0.0)
    return 0.5 * float(np.sum(r * r))


def objective(X, M, family, mask=None):
    if Family(family) is Family.POISSON:
        return kl_divergence(X, M, mask)
    return squared_error(X, M, mask)


def _update_poisson(X, T, W, M, maskf):
    if maskf is None:
        W *= (T.T @ (X / (M + EPS))) / (T.sum(axis=0)[:, None] + EPS)
    else:
        W *= (T.T @ (X / (M + EPS))) / (T.T @ maskf + EPS)
    np.maximum(W, FLOOR, out=W)
    M = T @ W
    if maskf is None:
        T *= ((X / (M + EPS)) @ W.T) / (W.sum(axis=1)[None, :] + EPS)
    else:
        T *= ((X / (M + EPS)) @ W.T) / (maskf @ W.T + EPS)
    np.maximum(T, FLOOR, out=T)
    return T @ W


def _update_gaussian(X, T, W, M, maskf):
    if maskf is None:
        W *= (T.T @ X) / ((T.T @ T) @ W + EPS)
    else:
        W *= (T.T @ X) / (T.T @ (maskf * M) + EPS)
    np.maximum(W, FLOOR, out=W)
    if maskf is None:
        T *= (X @ W.T) / (T @ (W @ W.T) + EPS)
    else:
        M = T @ W
        T *= (X @ W.T) / ((maskf * M) @ W.T + EPS)
    np.maximum(T, FLOOR, out=T)
    return T @ W


def _objective_fn(X, family, mask):
    """Fast closure over fixed data evaluating the same value as ``objective``."""
    if family is Family.GAUSSIAN:
        if mask is None:
            def f(M):
                r = (X - M).ravel()
                return 0.5 * float(np.dot(r, r))
        else:
            def f(M):
                r = np.where(mask, X - M, 0.0).ravel()
                return 0.5 * float(np.dot(r, r))
        return f
    # Same terms as _kl_terms with the data-only parts precomputed.
    Xr = X.ravel()
    pos = Xr > 0
    if mask is not None:
        pos = pos & mask.ravel()
        keep = mask.ravel()
    Xs = np.where(pos, Xr, 1.0)

    def f(M):
        Mr = M.ravel()
        u = (Mr - Xr) / Xs
        t = np.where(pos, Xr * (u - np.log1p(u)), Mr)
        return float(t.sum() if mask is None else t[keep].sum())
    return f


def _iterate(X, T, W, family, opts, mask=None):
    """Run sweeps until the relative objective change drops below rel_tol.

    X must already have unobserved cells zeroed when ``mask`` is given.
    """
    maskf = None if mask is None else mask.astype(np.float64)
    update = _update_poisson if family is Family.POISSON else _update_gaussian
    obj_fn = _objective_fn(X, family, mask)
    Xo = X if mask is None else X[mask]
    scale = float(Xo.sum()) if family is Family.POISSON else 0.5 * float(np.dot(Xo.ravel(), Xo.ravel()))
    exact = EXACT_TOL * max(scale, 1.0)
    M = T @ W
    obj = obj_fn(M)
    history = [obj]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        M = update(X, T, W, M, maskf)
        new = obj_fn(M)
        if not math.isfinite(new):
            raise FitError(f"non-finite objective at iteration {it}")
        history.append(new)
        if new <= exact or abs(obj - new) <= opts.rel_tol * abs(obj):
            converged = True
            obj = new
            break
        obj = new
    return T, W, np.asarray(history), it, converged


def _check_rank(k, p, n):
    if not 1 <= k <= min(p, n):
        raise ConfigError(f"rank {k} outside [1, {min(p, n)}] for a {p}x{n} matrix")


def _finish(X, T, W, k, family, seed, it, converged, history, mask=None):
    if mask is None:
        loglik, variance = model_loglik(X, T, W, family)
    else:
        M = T @ W
        if family is Family.POISSON:
            loglik, variance = poisson_loglik(X[mask], M[mask]), None
        else:
            r = X[mask] - M[mask]
            variance = max(float(np.mean(r * r)), VARIANCE_FLOOR)
            loglik = gaussian_loglik(X[mask], M[mask], variance)
    if not math.isfinite(loglik):
        raise FitError("non-finite log-likelihood")
    return Factorization(
        T=T, W=W, k=k, loglik=loglik, model=ModelFamily(family, variance),
        seed=seed, iterations=it, converged=converged, history=history,
    )


def fit_nmf(X, k, family, seed, opts=None, init=None):
    """Fit a single rank-``k`` factorization from the start drawn with ``seed``.

    ``init=(T0, W0)`` replaces the random start, e.g. to warm-start a rank-(k+1)
    fit from a rank-k solution padded with a zero feature.
    """
    opts = opts or DEFAULT_OPTIONS
    family = Family(family)
    X = as_array(X)
    p, n = X.shape
    _check_rank(k, p, n)
    if family is Family.POISSON:
        X = np.rint(X)
    if init is None:
        T, W = initialize(X, k, seed, opts)
    else:
        T, W = (np.array(a, dtype=np.float64) for a in init)
        if T.shape != (p, k) or W.shape != (k, n):
            raise ConfigError(f"initial factors {T.shape}, {W.shape} do not match rank {k}")
    T, W, history, it, converged = _iterate(X, T, W, family, opts)
    return _finish(X, T, W, k, family, seed, it, converged, history)


def fit_nmf_masked(X, mask, k, family, seed, opts=None):
    """Fit using only the cells where ``mask`` is True.

    Values in unobserved cells never touch the updates, so they may be
    anything (including NaN).
    """
    opts = opts or DEFAULT_OPTIONS
    family = Family(family)
    mask = np.asarray(mask, dtype=bool)
    X = as_array(X)
    if mask.shape != X.shape:
        raise DataError(f"mask shape {mask.shape} does not match data {X.shape}")
    if mask.all():
        return fit_nmf(X, k, family, seed, opts)
    if not (mask.any(axis=1).all() and mask.any(axis=0).all()):
        raise DataError("mask leaves a row or column without observed entries")
    p, n = X.shape
    _check_rank(k, p, n)
    X = np.where(mask, X, 0.0)
    if family is Family.POISSON:
        X = np.rint(X)
    T, W = initialize(X, k, seed, opts, mask=mask)
    T, W, history, it, converged = _iterate(X, T, W, family, opts, mask=mask)
    return _finish(X, T, W, k, family, seed, it, converged, history, mask=mask)


def start_seed(master_seed, k, i):
    return derive_seed(master_seed, k, i)


def _fit_start(i, X, k, family, master_seed, opts):
    seed = start_seed(master_seed, k, i)
    try:
        return fit_nmf(X, k, family, seed, opts)
    except FitError as exc:
        raise FitError(f"start {i} (seed {seed}): {exc}") from exc


def multi_start_fit(X, k, family, m, master_seed, opts=None, workers=None):
    """Run ``m`` independent starts and keep the one with the largest
    log-likelihood (ties go to the lowest start index)."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    family = Family(family)
    X = as_array(X)
    job = functools.partial(_fit_start, X=X, k=k, family=family,
                            master_seed=master_seed, opts=opts)
    fits = pmap(job, range(m), workers)
    logliks = tuple(f.loglik for f in fits)
    best = int(np.argmax(logliks))
    variances = tuple(f.model.variance for f in fits) if family is Family.GAUSSIAN else ()
    return MultiStartResult(fits[best], logliks, variances, best)
