"""Penalized maximum-likelihood deconvolution of the bootstrap LR null.

The error-free density is a Gaussian kernel mixture on a fixed grid,
``f(x) = sum_g w_g K_h(x - grid_g)``. Given contaminated draws ``y_i = s_i + e``
and a sample of errors ``e_j``, the weights maximize

    sum_i log( mean_j f(y_i - e_j) ) - tau * || D2 w ||^2

over the probability simplex, where D2 takes second differences along the grid.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ._seeding import STREAM_CV, derive_seed
from .exceptions import DeconvolutionError

PENALTY_GRID = (1e-2, 1e-1, 1.0, 10.0, 1e2)


@dataclass(frozen=True)
class DeconOptions:
    grid_size: int = 128
    penalty: float = 1.0
    # Kernel bandwidth as a multiple of the grid spacing.
    bandwidth_factor: float = 1.5
    # Grid padding on each side, in bandwidths.
    pad: float = 3.0
    max_iter: int = 5000
    tol: float = 1e-8
    # Shift of the whole grid, in spacings (stability checks).
    offset: float = 0.0


@dataclass(frozen=True)
class DeconDensity:
    grid: np.ndarray
    weights: np.ndarray
    bandwidth: float
    penalty: float
    objective: float = float("nan")
    iterations: int = 0
    converged: bool = True

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        z = (x[..., None] - self.grid) / self.bandwidth
        return np.exp(-0.5 * z * z) @ self.weights / (self.bandwidth * math.sqrt(2 * math.pi))

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return ndtr((x[..., None] - self.grid) / self.bandwidth) @ self.weights

    def sf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return ndtr((self.grid - x[..., None]) / self.bandwidth) @ self.weights

    def mean(self):
        return float(self.weights @ self.grid)

    def std(self):
        mu = self.mean()
        return math.sqrt(float(self.weights @ (self.grid - mu) ** 2) + self.bandwidth ** 2)

    def sample(self, size, rng):
        idx = rng.choice(len(self.grid), size=size, p=self.weights)
        return self.grid[idx] + self.bandwidth * rng.standard_normal(size)

    def evaluation_grid(self, points=512):
        lo = self.grid[0] - 4 * self.bandwidth
        hi = self.grid[-1] + 4 * self.bandwidth
        x = np.linspace(lo, hi, points)
        return x, self.pdf(x)


def _values(sample):
    values = getattr(sample, "values", sample)
    return np.asarray(values, dtype=np.float64).ravel()


def make_grid(contaminated, errors, grid_size=128, bandwidth_factor=1.5, pad=3.0, offset=0.0):
    """Equally spaced grid covering every possible y - e, padded by ``pad``
    bandwidths on each side; returns (grid, bandwidth)."""
    lo = contaminated.min() - errors.max()
    hi = contaminated.max() - errors.min()
    span = hi - lo
    if not span > 0:
        raise DeconvolutionError("degenerate grid: all differences y - e are equal")
    # Solve span + 2 * pad * h = (G - 1) * s with h = factor * s.
    spacing = span / (grid_size - 1 - 2 * pad * bandwidth_factor)
    if spacing <= 0:
        raise DeconvolutionError(f"grid_size {grid_size} too small for the padding")
    h = bandwidth_factor * spacing
    grid = lo - pad * h + spacing * (np.arange(grid_size) + offset)
    return grid, h


def _design(contaminated, errors, grid, h):
    """A[i, g] = mean_j K_h(y_i - e_j - grid_g)."""
    errors_u, counts = np.unique(errors, return_counts=True)
    prob = counts / counts.sum()
    A = np.zeros((len(contaminated), len(grid)))
    const = 1.0 / (h * math.sqrt(2 * math.pi))
    for e, pe in zip(errors_u, prob):
        z = (contaminated[:, None] - e - grid[None, :]) / h
        A += pe * np.exp(-0.5 * z * z)
    return A * const


def _second_difference(G):
    D = np.zeros((G - 2, G))
    idx = np.arange(G - 2)
    D[idx, idx] = 1.0
    D[idx, idx + 1] = -2.0
    D[idx, idx + 2] = 1.0
    return D


def _penalized_loglik(A, w, P, tau):
    lik = A @ w
    if np.any(lik <= 0):
        return -np.inf
    return float(np.sum(np.log(lik)) - tau * (w @ P @ w))


def maximize_weights(A, tau, max_iter=5000, tol=1e-8, w0=None, trace=None):
    """Exponentiated-gradient ascent on the simplex with an adaptive step.

    A step is only accepted when it does not decrease the objective, so the
    sequence of objectives is monotone. Returns (w, objective, iterations,
    converged); accepted objectives are appended to ``trace`` if given.
    """
    n, G = A.shape
    D = _second_difference(G)
    P = D.T @ D
    w = np.full(G, 1.0 / G) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
    obj = _penalized_loglik(A, w, P, tau)
    if not np.isfinite(obj):
        raise DeconvolutionError("contaminated sample has zero likelihood under the start")
    if trace is not None:
        trace.append(obj)
    step = 1.0 / n
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = A.T @ (1.0 / (A @ w)) - 2.0 * tau * (P @ w)
        while True:
            logw = np.log(np.maximum(w, 1e-300)) + step * (grad - grad.max())
            cand = np.exp(logw - logw.max())
            cand /= cand.sum()
            cand_obj = _penalized_loglik(A, cand, P, tau)
            if cand_obj >= obj:
                break
            step *= 0.5
            if step < 1e-14:
                return w, obj, it, True
        change = cand_obj - obj
        w, obj = cand, cand_obj
        if trace is not None:
            trace.append(obj)
        step *= 1.5
        if change <= tol * abs(obj):
            converged = True
            break
    return w, obj, it, converged


def deconvolve(contaminated, errors, opts=None, *, penalty=None, bandwidth=None):
    """Estimate the error-free density from contaminated draws and an error sample.

    ``penalty`` overrides ``opts.penalty``; pass ``"cv"`` to choose it by
    5-fold cross-validation over PENALTY_GRID. ``bandwidth`` overrides the
    grid-derived kernel width.
    """
    opts = opts or DeconOptions()
    y = _values(contaminated)
    e = _values(errors)
    if y.size == 0 or e.size == 0:
        raise DeconvolutionError("contaminated and error samples must be non-empty")
    grid, h = make_grid(y, e, opts.grid_size, opts.bandwidth_factor, opts.pad, opts.offset)
    if bandwidth is not None:
        h = float(bandwidth)
    tau = opts.penalty if penalty is None else penalty
    A = _design(y, e, grid, h)
    if isinstance(tau, str):
        if tau != "cv":
            raise ValueError(f"unknown penalty rule {tau!r}")
        tau = _cv_penalty(A, opts)
    w, obj, it, converged = maximize_weights(A, float(tau), opts.max_iter, opts.tol)
    return DeconDensity(grid, w, h, float(tau), obj, it, converged)


def _cv_penalty(A, opts, candidates=PENALTY_GRID, folds=5):
    n = A.shape[0]
    folds = min(folds, n)
    rng = np.random.default_rng(derive_seed(n, STREAM_CV))
    assignment = rng.permutation(n) % folds
    scores = []
    for tau in candidates:
        total = 0.0
        for f in range(folds):
            train, test = assignment != f, assignment == f
            w, *_ = maximize_weights(A[train], tau, opts.max_iter, opts.tol)
            total += float(np.sum(np.log(np.maximum(A[test] @ w, 1e-300))))
        scores.append(total)
    # Ties go to the smoother fit.
    best = max(range(len(candidates)), key=lambda i: (scores[i], candidates[i]))
    return candidates[best]


def select_penalty(contaminated, errors, opts=None, candidates=PENALTY_GRID, folds=5):
    """Cross-validated choice of the smoothness penalty."""
    opts = opts or DeconOptions()
    y, e = _values(contaminated), _values(errors)
    grid, h = make_grid(y, e, opts.grid_size, opts.bandwidth_factor, opts.pad, opts.offset)
    return _cv_penalty(_design(y, e, grid, h), opts, candidates, folds)


def pvalue_decon(density, lambda_obs):
    """Upper-tail mass of the deconvolved density above ``lambda_obs``."""
    p = float(density.sf(float(lambda_obs)))
    return min(max(p, 0.0), 1.0)


def pvalue_empirical(sample, lambda_obs):
    """Add-one empirical p-value (1 + #{x >= lambda_obs}) / (B + 1)."""
    values = _values(sample)
    if values.size == 0:
        raise ValueError("empty bootstrap sample")
    return (1.0 + np.count_nonzero(values >= lambda_obs)) / (values.size + 1.0)


def write_density(density, path, points=512):
    x, f = density.evaluation_grid(points)
    with open(path, "w") as fh:
        fh.write("x,f\n")
        for xi, fi in zip(x, f):
            fh.write(f"{float(xi)!r},{float(fi)!r}\n")


def kolmogorov_distance(cdf, sample):
    """sup |F(x) - F_n(x)| for a continuous model CDF and an empirical sample."""
    x = np.sort(_values(sample))
    n = x.size
    F = np.asarray(cdf(x))
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(n) / n
    return float(max(upper.max(), lower.max()))

