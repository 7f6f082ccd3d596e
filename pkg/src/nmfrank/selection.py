"""Sequential rank selection: bootstrap and deconvolved-bootstrap LR tests,
plus the masked-imputation cross-validation baseline."""

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._seeding import (
    STREAM_IMPUTE_FIT,
    STREAM_MASK,
    STREAM_ORIGINAL_FIT,
    STREAM_STEP,
    derive_seed,
)
from .bootstrap import (
    LRSample,
    NullModel,
    boot_lr_sample_bestofm,
    boot_lr_sample_single,
    pure_error_sample,
)
from .data import DataMatrix, Family, Method, ModelFamily, as_array, validate
from .deconvolution import DeconOptions, deconvolve, pvalue_decon, pvalue_empirical
from .exceptions import ConfigError, DataError
from .likelihood import average_variance, lr_statistic
from .nmf import fit_nmf_masked, kl_divergence, multi_start_fit

log = logging.getLogger(__name__)

REJECT = "reject"
ACCEPT = "accept"


def _summary(values):
    v = np.asarray(values, dtype=np.float64)
    q = np.quantile(v, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {
        "mean": float(v.mean()),
        "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "quantiles": {"q05": float(q[0]), "q25": float(q[1]), "q50": float(q[2]),
                      "q75": float(q[3]), "q95": float(q[4])},
    }


@dataclass
class RankStep:
    k: int
    lambda_obs: float
    pvalue: float
    decision: str
    loglik_k: float
    loglik_k1: float
    lr_sample_summary: dict
    error_sample_summary: Optional[dict] = None
    wallclock: float = 0.0
    warnings: list = field(default_factory=list)
    # Kept in memory for density export; not serialized.
    lr_sample: Optional[LRSample] = field(default=None, repr=False)
    error_sample: Optional[object] = field(default=None, repr=False)
    density: Optional[object] = field(default=None, repr=False)

    def to_dict(self, timings=False):
        d = {
            "k": self.k,
            "lambda_obs": self.lambda_obs,
            "pvalue": self.pvalue,
            "decision": self.decision,
            "loglik_k": self.loglik_k,
            "loglik_k1": self.loglik_k1,
            "lr_sample_summary": self.lr_sample_summary,
            "error_sample_summary": self.error_sample_summary,
            "warnings": list(self.warnings),
        }
        if timings:
            d["wallclock"] = self.wallclock
        return d


@dataclass
class RankReport:
    method: Method
    selected_rank: int
    steps: list
    config: object
    seed_trace: list
    capped: bool = False
    cv_losses: Optional[dict] = None
    notes: list = field(default_factory=list)

    def to_dict(self, timings=False):
        return {
            "schema": 1,
            "method": Method(self.method).value,
            "selected_rank": self.selected_rank,
            "capped": self.capped,
            "config": self.config.to_dict(),
            "steps": [s.to_dict(timings) for s in self.steps],
            "cv_losses": None if self.cv_losses is None
            else {str(k): v for k, v in self.cv_losses.items()},
            "seed_trace": [int(s) for s in self.seed_trace],
            "notes": list(self.notes),
        }


def _decide(pvalue, alpha):
    # A p-value exactly at alpha is not significant.
    return REJECT if pvalue < alpha else ACCEPT


class _OriginalFits:
    """Best-of-m fits of the observed data, cached by rank so the rank-(k+1)
    fit of one step is reused as the rank-k fit of the next."""

    def __init__(self, X, family, m, seed, opts, workers):
        self.X, self.family, self.m, self.opts, self.workers = X, family, m, opts, workers
        self.master = derive_seed(seed, STREAM_ORIGINAL_FIT)
        self._cache = {}

    def __call__(self, k):
        if k not in self._cache:
            self._cache[k] = multi_start_fit(self.X, k, self.family, self.m,
                                             self.master, self.opts, self.workers)
        return self._cache[k]


def _null_model(fit, family):
    if family is Family.POISSON:
        return NullModel(fit.best.mean, ModelFamily(family))
    # Averaging over all starts guards against an overfitted variance.
    return NullModel(fit.best.mean, ModelFamily(family, average_variance(fit.all_variances)))


def _sequential(X, config, opts, workers, step_fn, notes):
    data = X if isinstance(X, DataMatrix) else DataMatrix(X)
    config = validate(config, data)
    family = config.model
    Xa = data.values
    fits = _OriginalFits(Xa, family, config.m, config.seed, opts, workers)
    steps, seeds = [], []
    selected, capped = None, False
    for k in range(config.k_start, config.k_max + 1):
        t0 = time.perf_counter()
        fk, fk1 = fits(k), fits(k + 1)
        lam = lr_statistic(fk.best.loglik, fk1.best.loglik, k)
        null = _null_model(fk, family)
        step_seed = derive_seed(config.seed, STREAM_STEP, k)
        seeds.append(step_seed)
        step = step_fn(k, lam, null, step_seed)
        step.wallclock = time.perf_counter() - t0
        steps.append(step)
        log.info("k=%d lambda=%.4g p=%.4g -> %s", k, lam.value, step.pvalue, step.decision)
        if step.decision == ACCEPT:
            selected = k
            break
    if selected is None:
        selected, capped = config.k_max, True
        notes.append(f"rank cap k_max={config.k_max} reached without accepting H0")
    return RankReport(config.method, selected, steps, config, seeds, capped, notes=notes)


def select_rank_boot(X, config, opts=None, workers=None):
    """Sequential LR test against a best-of-m parametric bootstrap null."""
    config = dataclasses.replace(config, method=Method.BOOT)
    notes = []
    if config.model is Family.GAUSSIAN:
        notes.append("bootstrap draws use the fixed null variance; each fit re-estimates its own")

    def step(k, lam, null, seed):
        sample = boot_lr_sample_bestofm(null, k, config.B, config.m, seed, opts, workers)
        p = pvalue_empirical(sample, lam.value)
        return RankStep(k, lam.value, p, _decide(p, config.alpha), lam.loglik_k,
                        lam.loglik_k1, _summary(sample.values), lr_sample=sample)

    return _sequential(X, config, opts, workers, step, notes)


def select_rank_decon(X, config, opts=None, workers=None, decon_opts=None):
    """Sequential LR test against a deconvolved single-start bootstrap null."""
    config = dataclasses.replace(config, method=Method.DECON)
    if config.m < 2:
        raise ConfigError("decon-boot-test needs m >= 2 for the error sample")
    notes = []
    if config.model is Family.GAUSSIAN:
        notes.append("bootstrap draws use the fixed null variance; each fit re-estimates its own")

    def step(k, lam, null, seed):
        sample = boot_lr_sample_single(null, k, config.B, seed, opts, workers)
        errors = pure_error_sample(null, k, config.m, seed, opts, workers)
        density = deconvolve(sample, errors, decon_opts)
        p = pvalue_decon(density, lam.value)
        warnings = []
        if not density.converged:
            warnings.append(f"deconvolution did not converge in {density.iterations} iterations")
        e = errors.values
        return RankStep(k, lam.value, p, _decide(p, config.alpha), lam.loglik_k,
                        lam.loglik_k1, _summary(sample.values),
                        {"mean": float(e.mean()), "sd": float(e.std(ddof=1))},
                        warnings=warnings, lr_sample=sample, error_sample=errors,
                        density=density)

    return _sequential(X, config, opts, workers, step, notes)


def draw_mask(shape, fraction, rng, max_tries=100):
    """Hide round(fraction * size) uniformly chosen cells, redrawing until
    every row and column keeps an observed entry."""
    p, n = shape
    hidden = int(round(fraction * p * n))
    for _ in range(max_tries):
        mask = np.ones(p * n, dtype=bool)
        mask[rng.choice(p * n, size=hidden, replace=False)] = False
        mask = mask.reshape(p, n)
        if mask.any(axis=1).all() and mask.any(axis=0).all():
            return mask
    raise DataError(f"no valid mask with {hidden} hidden cells after {max_tries} draws")


def heldout_loss(X, M, mask, family):
    """KL divergence (Poisson) or mean squared error (Gaussian) on hidden cells."""
    hidden = ~mask
    if Family(family) is Family.POISSON:
        return kl_divergence(X[hidden], M[hidden])
    r = X[hidden] - M[hidden]
    return float(np.mean(r * r))


def select_rank_impute(X, config, mask_fraction=0.3, repeats=10, k_grid=None, opts=None):
    """Pick the rank minimizing the average held-out loss over random masks.

    Each (repeat, rank) pair is fitted from a single start.
    """
    if not 0 < mask_fraction < 1:
        raise ConfigError("mask_fraction must lie in (0, 1)")
    config = dataclasses.replace(config, method=Method.IMPUTE)
    data = X if isinstance(X, DataMatrix) else DataMatrix(X)
    config = validate(config, data)
    if k_grid is None:
        k_grid = range(config.k_start, config.k_max + 1)
    k_grid = sorted(set(int(k) for k in k_grid))
    if not k_grid:
        raise ConfigError("k_grid must be non-empty")
    Xa = as_array(data)
    losses = {k: [] for k in k_grid}
    seeds = []
    for r in range(repeats):
        mask_seed = derive_seed(config.seed, STREAM_MASK, r)
        seeds.append(mask_seed)
        mask = draw_mask(Xa.shape, mask_fraction, np.random.default_rng(mask_seed))
        for k in k_grid:
            fit = fit_nmf_masked(Xa, mask, k, config.model,
                                 derive_seed(config.seed, STREAM_IMPUTE_FIT, r, k), opts)
            losses[k].append(heldout_loss(Xa, fit.mean, mask, config.model))
    avg = {k: float(np.mean(v)) for k, v in losses.items()}
    selected = min(k_grid, key=lambda k: (avg[k], k))
    return RankReport(config.method, selected, [], config, seeds, cv_losses=avg)


def select_rank(X, config, opts=None, workers=None, **kwargs):
    method = Method(config.method)
    if method is Method.BOOT:
        return select_rank_boot(X, config, opts, workers)
    if method is Method.DECON:
        return select_rank_decon(X, config, opts, workers, **kwargs)
    return select_rank_impute(X, config, opts=opts, **kwargs)
