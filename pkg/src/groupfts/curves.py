"""Functional time series on an age grid: types, log transform, smoothing."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from groupfts._backend import kernels
from groupfts.errors import ConfigError, DataError

#: candidate penalties searched by generalised cross-validation
GCV_PENALTIES = np.logspace(-2, 3, 21)


class Scale(str, enum.Enum):
    RAW = "raw-rate"
    LOG10 = "log10-rate"
    LN = "natural-log-rate"


def trapezoid_weights(points) -> np.ndarray:
    """Trapezoid quadrature weights for an increasing grid."""
    u = np.asarray(points, dtype=float)
    w = np.zeros_like(u)
    gaps = np.diff(u)
    w[:-1] += gaps / 2.0
    w[1:] += gaps / 2.0
    return w


@dataclass(frozen=True, eq=False)
class AgeGrid:
    """Ordered ages ``u_1 < ... < u_p`` with trapezoid quadrature weights."""

    points: np.ndarray
    quadrature_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise DataError("an age grid needs at least 2 points")
        if not np.all(np.isfinite(pts)) or np.any(np.diff(pts) <= 0):
            raise DataError("age grid points must be finite and strictly increasing")
        pts.setflags(write=False)
        w = trapezoid_weights(pts)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "quadrature_weights", w)

    @classmethod
    def single_years(cls, first: int = 0, last: int = 100) -> "AgeGrid":
        return cls(np.arange(first, last + 1, dtype=float))

    @property
    def p(self) -> int:
        return self.points.size

    def __len__(self):
        return self.p

    def __eq__(self, other):
        return isinstance(other, AgeGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    def inner(self, f, g):
        """Quadrature inner product along the last axis."""
        return np.sum(self.quadrature_weights * np.asarray(f) * np.asarray(g), axis=-1)


@dataclass(frozen=True, eq=False)
class FunctionalTimeSeries:
    """``n`` yearly curves evaluated on a common age grid.

    Parameters
    ----------
    grid : AgeGrid
    years : sequence of int
        Consecutive, strictly increasing years.
    values : array_like, shape (n, p)
        Row ``t`` is the curve for ``years[t]``.
    scale : Scale
    """

    grid: AgeGrid
    years: np.ndarray
    values: np.ndarray
    scale: Scale = Scale.RAW

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int).ravel()
        values = np.array(self.values, dtype=float, ndmin=2)
        if values.shape != (years.size, self.grid.p):
            raise DataError(
                f"values have shape {values.shape}, expected ({years.size}, {self.grid.p})"
            )
        if years.size > 1 and np.any(np.diff(years) != 1):
            raise DataError("years must be consecutive and strictly increasing")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise DataError(
                f"non-finite value at year {years[bad[0]]}, age {self.grid.points[bad[1]]:g}"
            )
        values.setflags(write=False)
        years.setflags(write=False)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "scale", Scale(self.scale))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, FunctionalTimeSeries)
            and self.grid == other.grid
            and self.scale == other.scale
            and np.array_equal(self.years, other.years)
            and np.array_equal(self.values, other.values)
        )

    def with_values(self, values, scale: Optional[Scale] = None) -> "FunctionalTimeSeries":
        return replace(self, values=values, scale=self.scale if scale is None else scale)

    def head(self, m: int) -> "FunctionalTimeSeries":
        """The first ``m`` years."""
        return FunctionalTimeSeries(self.grid, self.years[:m], self.values[:m], self.scale)


@dataclass(frozen=True)
class SmoothingConfig:
    """Settings for :func:`smooth_curve`.

    ``penalty=None`` selects the penalty by generalised cross-validation over
    :data:`GCV_PENALTIES`. ``monotone_from_age`` enforces a non-decreasing
    curve at and above that age.
    """

    penalty: Optional[float] = None
    weights: Optional[Sequence[float]] = None
    monotone_from_age: Optional[float] = None

    def __post_init__(self):
        if self.penalty is not None and not (np.isfinite(self.penalty) and self.penalty >= 0):
            raise ConfigError(f"smoothing penalty must be >= 0, got {self.penalty}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(~np.isfinite(w)) or np.any(w <= 0):
                raise ConfigError("smoothing weights must be finite and > 0")


def log_transform(fts: FunctionalTimeSeries, base: float = 10, floor: float = 1e-6) -> FunctionalTimeSeries:
    """Log of rates, with rates below ``floor`` raised to ``floor`` first.

    ``base`` is 10 or ``math.e``.
    """
    if fts.scale is not Scale.RAW:
        raise DataError(f"log_transform expects raw rates, got {fts.scale.value}")
    if not floor > 0:
        raise ConfigError(f"floor must be positive, got {floor}")
    vals = fts.values
    if np.any(vals < 0):
        t, i = np.argwhere(vals < 0)[0]
        raise DataError(
            f"negative rate {vals[t, i]:g} at year {fts.years[t]}, age {fts.grid.points[i]:g}"
        )
    clipped = np.maximum(vals, floor)
    if base == 10:
        return fts.with_values(np.log10(clipped), Scale.LOG10)
    if np.isclose(base, np.e, rtol=0, atol=1e-12):
        return fts.with_values(np.log(clipped), Scale.LN)
    raise ConfigError(f"unsupported log base {base}; use 10 or e")


def to_raw(values, scale: Scale) -> np.ndarray:
    """Inverse of :func:`log_transform` for arrays on ``scale``."""
    scale = Scale(scale)
    values = np.asarray(values, dtype=float)
    if scale is Scale.LOG10:
        return np.power(10.0, values)
    if scale is Scale.LN:
        return np.exp(values)
    return values


@lru_cache(maxsize=32)
def _second_difference_penalty(p: int):
    d = np.diff(np.eye(p), 2, axis=0)
    pen = d.T @ d
    evals, evecs = np.linalg.eigh(pen)
    bands = (np.diag(pen).copy(), np.diag(pen, 1).copy(), np.diag(pen, 2).copy())
    return pen, bands, np.clip(evals, 0.0, None), evecs


def _gcv_scores(raw, weights, penalties):
    p = raw.size
    pen, _, evals, evecs = _second_difference_penalty(p)
    if weights is None:
        coef = evecs.T @ raw
        shrink = 1.0 / (1.0 + np.outer(penalties, evals))  # (L, p)
        rss = np.sum(((1.0 - shrink) * coef) ** 2, axis=1)
        edf = shrink.sum(axis=1)
    else:
        w = np.asarray(weights, dtype=float)
        rss = np.empty(len(penalties))
        edf = np.empty(len(penalties))
        for k, lam in enumerate(penalties):
            hat = np.linalg.solve(np.diag(w) + lam * pen, np.diag(w))
            resid = raw - hat @ raw
            rss[k] = np.sum(w * resid**2)
            edf[k] = np.trace(hat)
    return p * rss / np.maximum(p - edf, 1e-12) ** 2


def select_penalty_gcv(raw, weights=None, penalties=GCV_PENALTIES) -> float:
    """Penalty minimising generalised cross-validation (first minimiser on ties)."""
    raw = np.asarray(raw, dtype=float)
    scores = _gcv_scores(raw, weights, np.asarray(penalties, dtype=float))
    return float(penalties[int(np.argmin(scores))])


def _whittaker(raw, weights, penalty):
    p = raw.size
    _, (b0, b1, b2), _, _ = _second_difference_penalty(p)
    w = np.ones(p) if weights is None else np.asarray(weights, dtype=float)
    return kernels.solve_pentadiagonal(w + penalty * b0, penalty * b1, penalty * b2, w * raw)


def smooth_curve(raw, config: SmoothingConfig, grid: AgeGrid) -> np.ndarray:
    """Second-difference penalised least squares with an optional monotone tail.

    Minimises ``sum_i w_i (raw_i - s_i)^2 + penalty * sum (D^2 s)^2`` and then
    projects the ages ``>= config.monotone_from_age`` onto non-decreasing
    sequences by pool-adjacent-violators. With ``penalty=0`` and no
    monotone constraint the input is returned unchanged.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (grid.p,):
        raise DataError(f"curve has shape {raw.shape}, grid has {grid.p} points")
    if not np.all(np.isfinite(raw)):
        raise DataError("curve contains non-finite values")
    weights = None if config.weights is None else np.asarray(config.weights, dtype=float)
    if weights is not None and weights.shape != raw.shape:
        raise ConfigError(f"{weights.size} smoothing weights for {raw.size} grid points")
    penalty = config.penalty
    if penalty is None:
        penalty = select_penalty_gcv(raw, weights) if raw.size >= 3 else 0.0
    if penalty > 0 and raw.size < 3:
        raise ConfigError("a positive penalty needs at least 3 grid points")
    out = raw.copy() if penalty == 0 else _whittaker(raw, weights, penalty)
    if config.monotone_from_age is not None:
        tail = grid.points >= config.monotone_from_age
        if tail.sum() > 1:
            w_tail = np.ones(tail.sum()) if weights is None else weights[tail]
            out[tail] = kernels.pava(out[tail], w_tail)
    return out


def smooth_series(fts: FunctionalTimeSeries, config: SmoothingConfig) -> FunctionalTimeSeries:
    """Apply :func:`smooth_curve` to every year independently."""
    rows = []
    for year, row in zip(fts.years, fts.values):
        try:
            rows.append(smooth_curve(row, config, fts.grid))
        except ValueError as exc:
            raise type(exc)(f"year {year}: {exc}") from exc
    return fts.with_values(np.vstack(rows) if rows else fts.values)
