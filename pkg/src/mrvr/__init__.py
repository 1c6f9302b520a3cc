"""Multi-output relevance vector regression.

Two solvers share one data model: :func:`fit_fast` (matrix-normal weight
posterior, one noise covariance across outputs) and :func:`fit_baseline`
(independent per-output posteriors and noise variances).
"""

from .baseline import BaselineModel, estimate_full_covariance, fit_baseline, predict_baseline
from .common import FitOptions
from .errors import DataError, FitError, ModelFormatError, MRVRError, NumericalError
from .fast import FastModel, fit_fast, predict_fast
from .kernels import KernelConfig, KernelKind, build_design_matrix, kernel_eval
from .metrics import EvalReport, entropy_loss, jarque_bera, quadratic_loss, rank_sum_pvalue, rmse
from .modelio import load_model, load_table, save_model
from .sim import SimConfig, run_mc, sample_dataset

__version__ = "0.1.0"

__all__ = [
    "BaselineModel", "DataError", "EvalReport", "FastModel", "FitError", "FitOptions", "KernelConfig",
    "KernelKind", "MRVRError", "ModelFormatError", "NumericalError", "build_design_matrix", "entropy_loss",
    "estimate_full_covariance", "fit_baseline", "fit_fast", "jarque_bera", "kernel_eval", "load_model",
    "load_table", "predict_baseline", "predict_fast", "quadratic_loss", "rank_sum_pvalue", "rmse", "run_mc",
    "sample_dataset", "save_model", "SimConfig",
]
