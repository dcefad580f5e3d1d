"""Accuracy metrics and the expanding-window backtest."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from groupfts.curves import FunctionalTimeSeries, Scale, SmoothingConfig, log_transform, smooth_series, to_raw
from groupfts.data import FLOAT_FMT, GroupedDataset, _atomic_write
from groupfts.errors import ConfigError, DataError
from groupfts.forecast import (
    _first_origin,
    calibrate_psi,
    forecast_curves,
    insample_errors_by_horizon,
    prediction_intervals,
    residual_bounds,
)
from groupfts.group import GroupStructure, bottom_up, forecast_exposure_ratios, ols_reconcile, reconcile_intervals
from groupfts.lrcov import KernelSpec

__all__ = [
    "mafe",
    "rmsfe",
    "interval_score",
    "mean_interval_score",
    "level_average",
    "summarize",
    "BacktestConfig",
    "BacktestReport",
    "expanding_window_backtest",
]

METHODS = ("independent", "bottom-up", "ols")


def _pair(actual, forecast):
    a = np.asarray(actual, dtype=float)
    f = np.asarray(forecast, dtype=float)
    if a.shape != f.shape:
        raise DataError(f"shape mismatch: actual {a.shape}, forecast {f.shape}")
    if a.size == 0:
        raise DataError("no cells to evaluate")
    return a, f


def mafe(actual, forecast) -> float:
    """Mean absolute forecast error over all supplied cells."""
    a, f = _pair(actual, forecast)
    return float(np.mean(np.abs(a - f)))


def rmsfe(actual, forecast) -> float:
    """Root mean squared forecast error over all supplied cells."""
    a, f = _pair(actual, forecast)
    return float(np.sqrt(np.mean((a - f) ** 2)))


def _interval_scores(lb, ub, x, alpha):
    lb, ub, x = (np.asarray(v, dtype=float) for v in (lb, ub, x))
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if np.any(lb > ub):
        raise ValueError("lower bound exceeds upper bound")
    return (ub - lb) + (2.0 / alpha) * (lb - x) * (x < lb) + (2.0 / alpha) * (x - ub) * (x > ub)


def interval_score(lb, ub, actual, alpha: float = 0.2):
    """Interval score: width plus ``2/alpha`` times any exceedance.

    Scalars give a float; arrays give the elementwise scores.
    """
    s = _interval_scores(lb, ub, actual, alpha)
    return float(s) if s.ndim == 0 else s


def mean_interval_score(lb, ub, actual, alpha: float = 0.2) -> float:
    """Interval score averaged over every supplied (year, age) cell."""
    s = _interval_scores(lb, ub, actual, alpha)
    if s.size == 0:
        raise DataError("no cells to evaluate")
    return float(np.mean(s))


def level_average(values, structure: GroupStructure, levels: Optional[Sequence[str]] = None) -> dict:
    """Average per-series values within each level.

    ``values`` is indexed by node (first axis); returns ``{level: mean}``.
    """
    v = np.asarray(values, dtype=float)
    labels = np.asarray(structure.levels if levels is None else levels, dtype=object)
    if v.shape[0] != labels.size:
        raise DataError(f"{v.shape[0]} values for {labels.size} series")
    known = set(structure.level_names)
    unknown = sorted(set(labels.tolist()) - known)
    if unknown:
        raise DataError(f"unknown level labels {unknown}")
    return {lev: v[labels == lev].mean(axis=0) for lev in structure.level_names if np.any(labels == lev)}


def summarize(values, kind: str = "mean") -> float:
    """Mean or median across horizons.

    The median is the usual sample median, which for 30 horizons equals the
    average of the 15th and 16th order statistics and for 15 horizons the
    8th.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise DataError("cannot summarise an empty sequence")
    if kind == "mean":
        return float(np.mean(v))
    if kind == "median":
        return float(np.median(v))
    raise ConfigError(f"kind must be 'mean' or 'median', got {kind!r}")


@dataclass(frozen=True)
class BacktestConfig:
    """Expanding-window settings; defaults follow the Japanese application."""

    initial_train: int = 12
    max_horizon_point: int = 30
    max_horizon_interval: int = 15
    alpha: float = 0.2
    modes: tuple = ("static", "dynamic")
    methods: tuple = METHODS
    intervals: bool = True
    kernel: str = "bartlett"
    bandwidth: Optional[float] = None
    ncomp: object = "auto"
    delta: float = 0.85
    family: str = "auto"
    log_base: float = 10.0
    floor: float = 1e-6
    smoothing: Optional[SmoothingConfig] = None
    calibration: str = "scalar"
    workers: int = 1

    def __post_init__(self):
        if self.initial_train < 8:
            raise ConfigError(f"initial_train must be >= 8, got {self.initial_train}")
        if self.max_horizon_point < 1 or self.max_horizon_interval < 1:
            raise ConfigError("horizons must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.delta <= 1:
            raise ConfigError(f"delta must lie in (0, 1], got {self.delta}")
        bad = [m for m in self.modes if m not in ("static", "dynamic")]
        if bad or not self.modes:
            raise ConfigError(f"modes must be drawn from static/dynamic, got {self.modes}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be drawn from {METHODS}, got {self.methods}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"], d["methods"] = list(self.modes), list(self.methods)
        return d


@dataclass(eq=False)
class BacktestReport:
    """Per-series accuracy tables keyed by ``(method, mode)``.

    ``mafe``/``rmsfe`` arrays have shape (N, H_point); ``interval_score``
    has shape (N, H_interval) and is NaN where no interval could be formed.
    ``counts[h-1]`` is the number of windows evaluated at horizon ``h``.
    """

    structure: GroupStructure
    config: BacktestConfig
    mafe: dict
    rmsfe: dict
    interval_score: dict
    counts: np.ndarray
    interval_counts: dict = field(default_factory=dict)

    def levels(self, metric: str, method: str, mode: str) -> dict:
        table = getattr(self, metric)[(method, mode)]
        return level_average(table, self.structure)

    def summary(self) -> dict:
        out = {}
        for (method, mode) in self.mafe:
            block = {}
            mafe_l = self.levels("mafe", method, mode)
            rmsfe_l = self.levels("rmsfe", method, mode)
            score_l = self.levels("interval_score", method, mode) if (method, mode) in self.interval_score else {}
            for lev in mafe_l:
                entry = {
                    "mean_rmsfe": summarize(rmsfe_l[lev], "mean"),
                    "median_mafe": summarize(mafe_l[lev], "median"),
                }
                if lev in score_l and np.all(np.isfinite(score_l[lev])):
                    entry["mean_interval_score"] = summarize(score_l[lev], "mean")
                    entry["median_interval_score"] = summarize(score_l[lev], "median")
                block[lev] = entry
            out[f"{method}/{mode}"] = block
        return out

    def rows(self):
        """Long-format rows: metric, level, method, mode, horizon, value."""
        for (method, mode) in self.mafe:
            for metric in ("mafe", "rmsfe", "interval_score"):
                tables = getattr(self, metric)
                if (method, mode) not in tables:
                    continue
                for lev, vals in level_average(tables[(method, mode)], self.structure).items():
                    for h, v in enumerate(vals, start=1):
                        yield metric, lev, method, mode, h, float(v)

    def write(self, directory) -> dict:
        """Write ``report.csv``, ``plot_data.csv`` and ``summary.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        wide = {}
        for metric, lev, method, mode, h, v in self.rows():
            wide.setdefault((lev, method, mode, h), {})[metric] = v

        def write_report(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "method", "mode", "horizon", "mafe", "rmsfe", "interval_score", "n_forecasts"])
            for (lev, method, mode, h), vals in wide.items():
                count = int(self.counts[h - 1]) if h <= self.counts.size else 0
                w.writerow(
                    [lev, method, mode, h]
                    + [FLOAT_FMT % vals[m] if m in vals else "" for m in ("mafe", "rmsfe", "interval_score")]
                    + [count]
                )

        def write_plot(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "level", "method", "mode", "horizon", "value"])
            for metric, lev, method, mode, h, v in self.rows():
                w.writerow([metric, lev, method, mode, h, FLOAT_FMT % v])

        summary = {"config": self.config.to_dict(), "forecast_counts": self.counts.tolist(), "summary": self.summary()}
        paths = {"report": d / "report.csv", "plot": d / "plot_data.csv", "summary": d / "summary.json"}
        _atomic_write(paths["report"], write_report)
        _atomic_write(paths["plot"], write_plot)
        _atomic_write(paths["summary"], lambda fh: fh.write(json.dumps(summary, indent=1, default=str)))
        return paths


def _prepare_log_series(ds: GroupedDataset, cfg: BacktestConfig):
    out = []
    for k in range(ds.structure.n_nodes):
        fts = log_transform(ds.series(k), cfg.log_base, cfg.floor)
        if cfg.smoothing is not None:
            fts = smooth_series(fts, cfg.smoothing)
        out.append(fts)
    return out


def _series_forecast(fts, mode, horizon, h_int, cfg):
    """Point forecasts and (optionally) interval bounds on the working scale."""
    point = forecast_curves(
        fts,
        mode,
        cfg.ncomp,
        horizon,
        cfg.family,
        KernelSpec(cfg.kernel),
        cfg.bandwidth,
        cfg.delta,
    )
    if h_int == 0:
        return point.curves, None, None
    p = fts.p
    lower = np.full((h_int, p), np.nan)
    upper = np.full((h_int, p), np.nan)
    dec = point.decomposition
    if fts.n - 1 - _first_origin(dec.ncomp) + 1 >= 2:
        errs = insample_errors_by_horizon(fts.values, dec, range(1, h_int + 1), cfg.family)
        for h in range(1, h_int + 1):
            e = errs.get(h)
            if e is None or e.shape[0] < 2:
                continue
            bounds = residual_bounds(e, cfg.alpha)
            psi = calibrate_psi(e, bounds, cfg.alpha, warn=False)[0] if cfg.calibration == "scalar" else 1.0
            lower[h - 1], upper[h - 1] = prediction_intervals(point.curves[h - 1], bounds, psi)
    return point.curves, lower, upper


def _window(ds, log_series, m, cfg):
    """Forecast every node from the first ``m`` years; return per-method results."""
    n = ds.n
    st = ds.structure
    nb = st.n_bottom
    horizon = min(cfg.max_horizon_point, n - m)
    h_int = min(cfg.max_horizon_interval, horizon) if cfg.intervals else 0
    scale = log_series[0].scale
    actual = ds.rates[:, m : m + horizon]
    need_s = any(meth != "independent" for meth in cfg.methods)
    summing = forecast_exposure_ratios(st, ds.exposures[:, :m], horizon, cfg.family) if need_s else None
    sub_int = None
    if need_s and h_int:
        sub_int = type(summing)(st, summing.exposures[:, :h_int])
    results = {}
    for mode in cfg.modes:
        pts, los, ups = [], [], []
        for fts in log_series:
            pt, lo, up = _series_forecast(fts.head(m), mode, horizon, h_int, cfg)
            pts.append(to_raw(pt, scale))
            if h_int:
                los.append(to_raw(lo, scale))
                ups.append(to_raw(up, scale))
        ind = np.array(pts)
        lo_all = np.array(los) if h_int else None
        up_all = np.array(ups) if h_int else None
        for method in cfg.methods:
            if method == "independent":
                fc, blo, bup = ind, lo_all, up_all
            elif method == "bottom-up":
                fc = bottom_up(ind[-nb:], summing)
                blo = bup = None
                if h_int:
                    blo, bup = _nan_safe(reconcile_intervals, lo_all[-nb:], up_all[-nb:], sub_int, "bottom-up", st.n_nodes)
            else:
                fc = ols_reconcile(ind, summing)[0]
                blo = bup = None
                if h_int:
                    blo, bup = _nan_safe(reconcile_intervals, lo_all, up_all, sub_int, "ols", st.n_nodes)
            err = actual - fc
            abs_sum = np.abs(err).sum(axis=2)  # (N, horizon)
            sq_sum = (err**2).sum(axis=2)
            score_sum = None
            if h_int:
                valid = np.all(np.isfinite(blo), axis=2) & np.all(np.isfinite(bup), axis=2)
                s = np.where(
                    valid[:, :, None],
                    _interval_scores(
                        np.nan_to_num(blo), np.nan_to_num(bup), actual[:, :h_int], cfg.alpha
                    ),
                    0.0,
                )
                score_sum = (s.sum(axis=2), valid)
            results[(method, mode)] = (abs_sum, sq_sum, score_sum)
    return horizon, h_int, results


def _nan_safe(fn, lower, upper, summing, method, n_nodes):
    """Reconcile bounds horizon by horizon, leaving NaN where any input is NaN."""
    hh = lower.shape[1]
    lo_out = np.full((n_nodes, hh, lower.shape[2]), np.nan)
    up_out = np.full_like(lo_out, np.nan)
    for h in range(hh):
        if np.all(np.isfinite(lower[:, h])) and np.all(np.isfinite(upper[:, h])):
            sub = type(summing)(summing.structure, summing.exposures[:, h : h + 1])
            lo, up = fn(lower[:, h : h + 1], upper[:, h : h + 1], sub, method)
            lo_out[:, h : h + 1], up_out[:, h : h + 1] = lo, up
    return lo_out, up_out


def expanding_window_backtest(ds: GroupedDataset, config: BacktestConfig = BacktestConfig()) -> BacktestReport:
    """Refit on years ``1..m`` for ``m = initial_train .. n-1`` and score forecasts.

    Horizon ``h`` is evaluated ``n - initial_train - h + 1`` times. Point
    metrics pool absolute/squared errors over ages and windows per series;
    all metrics are on the raw rate scale.
    """
    cfg = config
    n = ds.n
    if n < cfg.initial_train + 1:
        raise DataError(
            f"backtest needs n >= initial_train + 1 = {cfg.initial_train + 1} years; got n = {n}"
        )
    log_series = _prepare_log_series(ds, cfg)
    windows = list(range(cfg.initial_train, n))
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            outputs = list(pool.map(lambda m: _window(ds, log_series, m, cfg), windows))
    else:
        outputs = [_window(ds, log_series, m, cfg) for m in windows]

    nn, p = ds.structure.n_nodes, ds.grid.p
    hp = min(cfg.max_horizon_point, n - cfg.initial_train)
    hi = min(cfg.max_horizon_interval, n - cfg.initial_train) if cfg.intervals else 0
    counts = np.zeros(hp, dtype=int)
    keys = [(meth, mode) for meth in cfg.methods for mode in cfg.modes]
    abs_acc = {k: np.zeros((nn, hp)) for k in keys}
    sq_acc = {k: np.zeros((nn, hp)) for k in keys}
    sc_acc = {k: np.zeros((nn, hi)) for k in keys}
    sc_cnt = {k: np.zeros((nn, hi), dtype=int) for k in keys}
    for horizon, h_int, res in outputs:  # fixed window order
        counts[:horizon] += 1
        for k in keys:
            a, s, sc = res[k]
            abs_acc[k][:, :horizon] += a
            sq_acc[k][:, :horizon] += s
            if sc is not None:
                sc_acc[k][:, :h_int] += sc[0]
                sc_cnt[k][:, :h_int] += sc[1]
    cells = counts * p
    mafe_t = {k: abs_acc[k] / cells for k in keys}
    rmsfe_t = {k: np.sqrt(sq_acc[k] / cells) for k in keys}
    score_t = {}
    if hi:
        for k in keys:
            with np.errstate(invalid="ignore", divide="ignore"):
                score_t[k] = np.where(sc_cnt[k] > 0, sc_acc[k] / (sc_cnt[k] * p), np.nan)
    return BacktestReport(ds.structure, cfg, mafe_t, rmsfe_t, score_t, counts, sc_cnt if hi else {})
