"""Score models, curve point forecasts and residual-calibrated intervals."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from groupfts._backend import kernels
from groupfts.curves import FunctionalTimeSeries
from groupfts.errors import ConfigError, DataError
from groupfts.fpca import Decomposition, Mode, NcompPolicy, decompose, reconstruct
from groupfts.lrcov import KernelSpec

__all__ = [
    "ScoreModel",
    "CurveForecast",
    "IntervalForecast",
    "CalibrationWarning",
    "fit_score_model",
    "forecast_scores",
    "forecast_curves",
    "insample_forecast_errors",
    "insample_errors_by_horizon",
    "residual_bounds",
    "calibrate_psi",
    "coverage",
    "prediction_intervals",
    "interval_forecast",
]

FAMILIES = ("mean", "random-walk-drift", "ar", "auto")
MAX_AR_ORDER = 4
PSI_MAX = 100.0


class CalibrationWarning(UserWarning):
    """The interval scale factor hit its upper clamp."""


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """A fitted univariate model for one principal component score series.

    ``family`` is 'mean', 'random-walk-drift' or 'ar'. For 'ar', ``coef``
    holds the autoregressive coefficients of the series centred at
    ``center``.
    """

    family: str
    center: float = 0.0
    drift: float = 0.0
    coef: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fitted_on: int = 0
    aic: float = float("nan")

    @property
    def order(self) -> int:
        return self.coef.size

    def forecast(self, history, h: int) -> np.ndarray:
        """Mean forecasts for steps ``1..h`` after ``history``."""
        if h < 1:
            raise ConfigError(f"horizon must be >= 1, got {h}")
        y = np.asarray(history, dtype=float)
        steps = np.arange(1, h + 1, dtype=float)
        if self.family == "mean":
            return np.full(h, self.center)
        if self.family == "random-walk-drift":
            return y[-1] + steps * self.drift
        p = self.order
        buf = list(y[-p:] - self.center)
        out = np.empty(h)
        for k in range(h):
            nxt = float(np.dot(self.coef, buf[::-1][:p]))
            buf.append(nxt)
            out[k] = nxt + self.center
        return out


def _parse_family(family: str):
    fam = str(family).lower()
    if fam in ("rwd", "drift", "random-walk-drift"):
        return "random-walk-drift", None
    if fam in ("mean", "auto", "ar"):
        return fam, None
    if fam.startswith("ar-") and fam[3:].isdigit():
        return "ar", int(fam[3:])
    raise ConfigError(f"unknown score model family {family!r}; use one of {', '.join(FAMILIES)} or 'ar-<p>'")


def _rss_floor(y):
    return (1e-10 * (1.0 + float(np.max(np.abs(y))))) ** 2


def _aic(rss, m, k, floor):
    return m * np.log(max(rss / m, floor)) + 2 * k


def _candidates(y, fams, max_order):
    """Fit every candidate and score it by AIC on a common sample."""
    n = y.size
    start = max(1, max_order)
    m = n - start
    floor = _rss_floor(y)
    center = float(y.mean())
    out = []
    if "mean" in fams:
        rss = float(np.sum((y[start:] - center) ** 2))
        out.append(ScoreModel("mean", center=center, fitted_on=n, aic=_aic(rss, m, 1, floor)))
    if "random-walk-drift" in fams:
        drift = float(np.mean(np.diff(y)))
        rss = float(np.sum((y[start:] - y[start - 1 : -1] - drift) ** 2))
        out.append(
            ScoreModel("random-walk-drift", center=center, drift=drift, fitted_on=n, aic=_aic(rss, m, 1, floor))
        )
    if "ar" in fams:
        z = y - center
        for p in range(1, max_order + 1):
            coef, rss = kernels.ar_fit(z, p, start)
            out.append(ScoreModel("ar", center=center, coef=coef, fitted_on=n, aic=_aic(rss, m, p + 1, floor)))
    return out


def _is_stationary(coef) -> bool:
    """Step-down (reverse Levinson) test: all partial autocorrelations inside (-1, 1)."""
    phi = [float(c) for c in coef]
    for k in range(len(phi), 0, -1):
        kappa = phi[k - 1]
        if abs(kappa) >= 1.0 - 1e-8:
            return False
        denom = 1.0 - kappa * kappa
        phi = [(phi[j] + kappa * phi[k - 2 - j]) / denom for j in range(k - 1)]
    return True


def _best(models):
    """Lowest AIC; explosive AR fits are dropped while alternatives remain."""
    keep = [mod for mod in models if mod.family != "ar" or _is_stationary(mod.coef)]
    # stable: the first model wins ties
    return min(keep or models, key=lambda mod: mod.aic)


def fit_score_model(series, family: str = "auto", order: Optional[int] = None) -> ScoreModel:
    """Fit a score model.

    Parameters
    ----------
    series : array_like, shape (n,)
    family : {'auto', 'mean', 'random-walk-drift', 'ar', 'ar-<p>'}
        'auto' picks the lowest AIC among the mean, random walk with drift
        and AR(1..4) models; 'ar' without an order selects it by AIC.
    order : int, optional
        AR order.
    """
    y = np.asarray(series, dtype=float).ravel()
    n = y.size
    if not np.all(np.isfinite(y)):
        raise DataError("score series contains non-finite values")
    fam, parsed_order = _parse_family(family)
    order = parsed_order if order is None else order
    if fam in ("mean", "random-walk-drift", "auto") and n < 4:
        raise DataError(f"{fam} score model needs at least 4 observations, got {n}")
    if fam == "ar":
        if order is not None:
            if order < 1:
                raise ConfigError(f"AR order must be >= 1, got {order}")
            if n < order + 2:
                raise DataError(f"AR({order}) needs at least {order + 2} observations, got {n}")
            return _candidates(y, ("ar",), order)[-1]
        if n < 3:
            raise DataError(f"AR score model needs at least 3 observations, got {n}")
        return _best(_candidates(y, ("ar",), min(MAX_AR_ORDER, n - 2)))
    if fam == "auto":
        max_order = min(MAX_AR_ORDER, (n - 2) // 2)
        return _best(_candidates(y, ("mean", "random-walk-drift", "ar"), max_order))
    return _candidates(y, (fam,), 1)[0]


def _fit_lenient(y, family):
    """Like fit_score_model but degrades to simpler models on short series.

    Used inside the in-sample error loop, where early windows can be shorter
    than the public minimum lengths.
    """
    try:
        return fit_score_model(y, family)
    except DataError:
        if y.size >= 2:
            drift = float(np.mean(np.diff(y)))
            return ScoreModel("random-walk-drift", center=float(y.mean()), drift=drift, fitted_on=y.size)
        return ScoreModel("mean", center=float(y.mean()), fitted_on=y.size)


def forecast_scores(model: ScoreModel, last_values, h: int) -> float:
    """The ``h``-step-ahead mean forecast given the most recent values."""
    return float(model.forecast(last_values, h)[-1])


@dataclass(frozen=True, eq=False)
class CurveForecast:
    """Point forecasts for horizons ``1..H``; ``curves[h-1]`` is step ``h``."""

    curves: np.ndarray
    score_forecasts: np.ndarray
    decomposition: Decomposition
    models: tuple

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(1, self.curves.shape[0] + 1)


def _fit_models(scores, family, lenient=False):
    fit = _fit_lenient if lenient else fit_score_model
    return tuple(fit(scores[:, j], family) for j in range(scores.shape[1]))


def _forecast_from(dec, scores, models, h):
    fc = np.column_stack([mod.forecast(scores[:, j], h) for j, mod in enumerate(models)])
    return fc, reconstruct(dec, fc)


def forecast_curves(
    fts: FunctionalTimeSeries,
    mode: Union[Mode, str] = Mode.DYNAMIC,
    ncomp: NcompPolicy = "auto",
    horizon: int = 1,
    family: str = "auto",
    kernel: KernelSpec = KernelSpec(),
    bandwidth: Optional[float] = None,
    delta: float = 0.85,
    decomposition: Optional[Decomposition] = None,
) -> CurveForecast:
    """Principal component regression forecasts of the next ``horizon`` curves.

    Each retained score series gets its own model; forecast scores are
    mapped back through the eigenfunctions and the mean curve is added.
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    dec = decomposition or decompose(fts, mode, kernel, bandwidth, ncomp, delta)
    models = _fit_models(dec.scores, family)
    fc, curves = _forecast_from(dec, dec.scores, models, horizon)
    return CurveForecast(curves, fc, dec, models)


def _first_origin(ncomp):
    # a single observation carries no dynamics, so origins start at 2
    return max(ncomp, 2)


def insample_errors_by_horizon(
    values, dec: Decomposition, horizons, family: str = "auto"
) -> dict:
    """In-sample forecast errors for several horizons with one pass of fits.

    Eigenfunctions and mean come from ``dec`` (fitted on all of ``values``).
    For every origin ``z`` the score models are refitted on scores
    ``1..z`` and forecast ahead; the error for horizon ``h`` is
    ``values[z + h - 1] - forecast``. Origins run from ``max(J, 2)`` to
    ``n - h``, so horizon ``h`` yields ``M = n - h - max(J, 2) + 1`` curves.

    Returns
    -------
    dict mapping horizon to an (M, p) error array
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    horizons = sorted(set(int(h) for h in horizons))
    z0 = _first_origin(dec.ncomp)
    hmax = horizons[-1]
    out = {h: [] for h in horizons}
    for z in range(z0, n - horizons[0] + 1):
        steps = min(hmax, n - z)
        models = _fit_models(dec.scores[:z], family, lenient=True)
        _, curves = _forecast_from(dec, dec.scores[:z], models, steps)
        for h in horizons:
            if h <= steps:
                out[h].append(values[z + h - 1] - curves[h - 1])
    p = values.shape[1]
    return {h: np.array(v).reshape(-1, p) for h, v in out.items()}


def insample_forecast_errors(
    fts: FunctionalTimeSeries,
    mode: Union[Mode, str] = Mode.DYNAMIC,
    h: int = 1,
    ncomp: NcompPolicy = "auto",
    family: str = "auto",
    kernel: KernelSpec = KernelSpec(),
    bandwidth: Optional[float] = None,
    delta: float = 0.85,
    decomposition: Optional[Decomposition] = None,
) -> np.ndarray:
    """In-sample ``h``-step forecast error curves, shape (M, p).

    Raises if fewer than two error curves are available.
    """
    dec = decomposition or decompose(fts, mode, kernel, bandwidth, ncomp, delta)
    z0 = _first_origin(dec.ncomp)
    m = fts.n - h - z0 + 1
    if m < 2:
        raise DataError(
            f"in-sample errors need n >= {z0 + h + 1} curves for h={h} and J={dec.ncomp}; got n={fts.n}"
        )
    return insample_errors_by_horizon(fts.values, dec, [h], family)[h]


def residual_bounds(errors, alpha: float = 0.2):
    """Pointwise empirical quantiles at ``alpha/2`` and ``1 - alpha/2``.

    Quantiles interpolate linearly between order statistics placed at
    probabilities ``(k-1)/(M-1)``.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    e = np.asarray(errors, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    if e.shape[0] < 2:
        raise DataError(f"residual bounds need at least 2 error curves, got {e.shape[0]}")
    lb, ub = np.quantile(e, [alpha / 2, 1 - alpha / 2], axis=0, method="linear")
    return lb, ub


def coverage(errors, bounds, psi: float) -> float:
    """Fraction of error values inside ``[psi * lb, psi * ub]``."""
    e = np.asarray(errors, dtype=float)
    lb, ub = (np.asarray(b, dtype=float) for b in bounds)
    if e.ndim == 1:
        e = e[:, None]
    inside = (psi * lb <= e) & (e <= psi * ub)
    return float(inside.mean())


def _psi_intervals(e, lb, ub):
    """For each value, the closed interval of psi >= 0 that covers it."""
    lb = np.broadcast_to(lb, e.shape)
    ub = np.broadcast_to(ub, e.shape)
    lo = np.zeros(e.shape)
    hi = np.full(e.shape, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        # psi * lb <= e
        neg = lb < 0
        lo = np.where(neg, np.maximum(lo, e / lb), lo)
        pos = lb > 0
        hi = np.where(pos, np.minimum(hi, e / lb), hi)
        hi = np.where((lb == 0) & (e < 0), -np.inf, hi)
        # e <= psi * ub
        pos = ub > 0
        lo = np.where(pos, np.maximum(lo, e / ub), lo)
        neg = ub < 0
        hi = np.where(neg, np.minimum(hi, e / ub), hi)
        hi = np.where((ub == 0) & (e > 0), -np.inf, hi)
    return lo.ravel(), hi.ravel()


def calibrate_psi(errors, bounds, alpha: float = 0.2, psi_max: float = PSI_MAX, warn: bool = True):
    """Smallest scale ``psi`` whose scaled bounds cover ``1 - alpha`` of errors.

    Coverage is counted over every (curve, grid point) pair. The minimiser is
    found exactly from the breakpoints of the coverage step function. If the
    target is out of reach on ``[0, psi_max]``, the smallest ``psi`` with the
    highest attainable coverage is returned (``psi_max`` for zero-width
    bounds), with a :class:`CalibrationWarning` unless ``warn`` is false.

    Returns
    -------
    psi : float
    achieved : float
        Coverage at ``psi``.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    e = np.asarray(errors, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    lb, ub = (np.asarray(b, dtype=float) for b in bounds)
    lo, hi = _psi_intervals(e, lb, ub)
    total = lo.size
    need = int(np.ceil((1 - alpha) * total - 1e-9))
    valid = lo <= hi
    lo_s = np.sort(lo[valid])
    hi_s = np.sort(hi[valid])
    cand = np.unique(np.concatenate([[0.0], lo_s[lo_s <= psi_max]]))
    counts = np.searchsorted(lo_s, cand, side="right") - np.searchsorted(hi_s, cand, side="left")
    hit = np.flatnonzero(counts >= need)
    if hit.size:
        psi = float(cand[hit[0]])
        # a breakpoint e/ub may round a few ulps low; step up until it covers
        for _ in range(16):
            achieved = coverage(e, (lb, ub), psi)
            if achieved * total >= need - 1e-9:
                break
            psi = float(np.nextafter(psi, np.inf))
        return psi, achieved
    lb_b, ub_b = np.broadcast_to(lb, e.shape), np.broadcast_to(ub, e.shape)
    if np.all(lb_b == ub_b):
        if warn:
            warnings.warn(
                f"zero-width bounds cannot cover the errors; psi set to {psi_max}",
                CalibrationWarning,
                stacklevel=2,
            )
        return psi_max, coverage(e, (lb, ub), psi_max)
    best = int(np.argmax(counts))
    if warn:
        warnings.warn(
            f"interval scale cannot reach {1 - alpha:.3f} coverage; using the best attainable "
            f"{counts[best] / total:.3f}",
            CalibrationWarning,
            stacklevel=2,
        )
    return float(cand[best]), counts[best] / total


@dataclass(frozen=True, eq=False)
class IntervalForecast:
    """Pointwise prediction intervals for horizons ``1..H``.

    ``psi`` and ``residual_count`` hold one entry per horizon.
    """

    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    psi: np.ndarray
    residual_count: np.ndarray


def prediction_intervals(point, bounds, psi) -> tuple:
    """``(point + psi * lb, point + psi * ub)`` elementwise."""
    pt = point.curves if isinstance(point, CurveForecast) else np.asarray(point, dtype=float)
    lb, ub = (np.asarray(b, dtype=float) for b in bounds)
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 1 and pt.ndim == 2:
        psi = psi[:, None]
    lower = pt + psi * lb
    upper = pt + psi * ub
    return np.minimum(lower, upper), np.maximum(lower, upper)


def interval_forecast(
    fts: FunctionalTimeSeries,
    point: CurveForecast,
    alpha: float = 0.2,
    family: str = "auto",
    calibration: str = "scalar",
) -> IntervalForecast:
    """Residual-calibrated intervals around ``point`` for each of its horizons.

    ``calibration='scalar'`` fits one ``psi`` per horizon over all grid
    points; ``'unit'`` uses the raw quantile bounds (``psi = 1``).
    """
    if calibration not in ("scalar", "unit"):
        raise ConfigError(f"calibration must be 'scalar' or 'unit', got {calibration!r}")
    dec = point.decomposition
    hs = list(point.horizons)
    errs = insample_errors_by_horizon(fts.values, dec, hs, family)
    lows, ups, psis, counts = [], [], [], []
    for h in hs:
        e = errs[h]
        if e.shape[0] < 2:
            raise DataError(
                f"in-sample errors need n >= {_first_origin(dec.ncomp) + h + 1} curves for h={h}; got n={fts.n}"
            )
        bounds = residual_bounds(e, alpha)
        psi = calibrate_psi(e, bounds, alpha)[0] if calibration == "scalar" else 1.0
        lo, up = prediction_intervals(point.curves[h - 1], bounds, psi)
        lows.append(lo)
        ups.append(up)
        psis.append(psi)
        counts.append(e.shape[0])
    return IntervalForecast(np.array(lows), np.array(ups), alpha, np.array(psis), np.array(counts))
