"""NMF rank selection by sequential likelihood-ratio tests.

The bootstrap null of the LR statistic is either built from best-of-m fits
or from single-start fits with the convergence error removed by penalized
maximum-likelihood deconvolution.
"""

from importlib.metadata import PackageNotFoundError, version

from .bootstrap import (
    NullModel,
    boot_lr_sample_bestofm,
    boot_lr_sample_single,
    pure_error_sample,
)
from .data import (
    DataMatrix,
    Factorization,
    Family,
    Method,
    ModelFamily,
    SelectionConfig,
    load_matrix,
    rank_cap,
    validate,
    write_matrix,
)
from .deconvolution import DeconDensity, DeconOptions, deconvolve, pvalue_decon, pvalue_empirical
from .exceptions import ConfigError, DataError, DeconvolutionError, FitError, NMFRankError
from .likelihood import gaussian_loglik, lr_statistic, poisson_loglik
from .nmf import FitOptions, fit_nmf, fit_nmf_masked, multi_start_fit
from .selection import RankReport, RankStep, select_rank, select_rank_boot, select_rank_decon, select_rank_impute

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "DataMatrix", "DeconDensity", "DeconOptions",
    "DeconvolutionError", "Factorization", "Family", "FitError", "FitOptions",
    "Method", "ModelFamily", "NMFRankError", "NullModel", "RankReport", "RankStep",
    "SelectionConfig", "boot_lr_sample_bestofm", "boot_lr_sample_single", "deconvolve",
    "fit_nmf", "fit_nmf_masked", "gaussian_loglik", "load_matrix", "lr_statistic",
    "multi_start_fit", "poisson_loglik", "pure_error_sample", "pvalue_decon",
    "pvalue_empirical", "rank_cap", "select_rank", "select_rank_boot",
    "select_rank_decon", "select_rank_impute", "validate", "write_matrix",
]
