"""Forecasting grouped functional time series with static and dynamic
functional principal component regression."""

__version__ = "0.1.0"

from groupfts._backend import BACKEND
from groupfts.curves import AgeGrid, FunctionalTimeSeries, Scale, SmoothingConfig, log_transform, smooth_curve, smooth_series
from groupfts.errors import ConfigError, DataError, GroupFTSError, NumericalError
from groupfts.fpca import Decomposition, Mode, decompose, reconstruct, select_ncomp, select_ncomp_cpv, select_ncomp_hk
from groupfts.forecast import calibrate_psi, fit_score_model, forecast_curves, interval_forecast, residual_bounds
from groupfts.group import GroupStructure, SummingMatrix, bottom_up, ols_reconcile
from groupfts.lrcov import KernelSpec, estimate_long_run_covariance, select_bandwidth_plugin

__all__ = [
    "BACKEND",
    "AgeGrid",
    "FunctionalTimeSeries",
    "Scale",
    "SmoothingConfig",
    "log_transform",
    "smooth_curve",
    "smooth_series",
    "ConfigError",
    "DataError",
    "GroupFTSError",
    "NumericalError",
    "Decomposition",
    "Mode",
    "decompose",
    "reconstruct",
    "select_ncomp",
    "select_ncomp_cpv",
    "select_ncomp_hk",
    "calibrate_psi",
    "fit_score_model",
    "forecast_curves",
    "interval_forecast",
    "residual_bounds",
    "GroupStructure",
    "SummingMatrix",
    "bottom_up",
    "ols_reconcile",
    "KernelSpec",
    "estimate_long_run_covariance",
    "select_bandwidth_plugin",
]
