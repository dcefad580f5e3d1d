"""Grouped datasets: CSV/JSON ingestion, export and synthetic generation."""
from __future__ import annotations

import csv
import json
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from groupfts.curves import AgeGrid, FunctionalTimeSeries, Scale
from groupfts.errors import ConfigError, DataError
from groupfts.group import GroupStructure, SummingMatrix, grouped_structure, japan_structure

__all__ = [
    "GroupedDataset",
    "read_long_csv",
    "write_long_csv",
    "ingest",
    "export",
    "parse_shape",
    "simulate_curves",
    "simulate_dataset",
]

FLOAT_FMT = "%.17g"


@dataclass(frozen=True, eq=False)
class GroupedDataset:
    """Raw rates for every node and exposures for the bottom series.

    ``rates`` has shape (N, n, p) in node order; ``exposures`` has shape
    (B, n, p) in bottom order.
    """

    structure: GroupStructure
    grid: AgeGrid
    years: np.ndarray
    rates: np.ndarray
    exposures: np.ndarray

    @property
    def n(self) -> int:
        return self.years.size

    def series(self, node) -> FunctionalTimeSeries:
        k = node if isinstance(node, (int, np.integer)) else self.structure.index(node)
        return FunctionalTimeSeries(self.grid, self.years, self.rates[k], Scale.RAW)

    @property
    def bottom_rates(self) -> np.ndarray:
        return self.rates[-self.structure.n_bottom :]

    def __eq__(self, other):
        return (
            isinstance(other, GroupedDataset)
            and self.structure == other.structure
            and self.grid == other.grid
            and np.array_equal(self.years, other.years)
            and np.array_equal(self.rates, other.rates)
            and np.array_equal(self.exposures, other.exposures)
        )


def read_long_csv(path, value_column: str):
    """Read ``series_id,year,age,<value_column>`` into per-series arrays.

    Returns
    -------
    dict mapping series id to ``(years, ages, values)`` with ``values`` of
    shape (n_years, n_ages).
    """
    path = Path(path)
    cells = defaultdict(dict)
    dupes = 0
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["series_id", "year", "age", value_column]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise DataError(f"{path}: header must be {','.join(expected)}, got {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            try:
                key = (int(row["year"]), float(row["age"]))
                val = float(row[value_column])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{line}: cannot parse row {row}") from None
            sid = row["series_id"]
            if key in cells[sid]:
                dupes += 1
            cells[sid][key] = val
    if dupes:
        raise DataError(f"{path}: {dupes} duplicate (series_id, year, age) rows")
    out = {}
    for sid, table in cells.items():
        years = sorted({y for y, _ in table})
        ages = sorted({a for _, a in table})
        missing = [(sid, y, a) for y in years for a in ages if (y, a) not in table]
        if missing:
            raise DataError(f"{path}: {len(missing)} missing cells, first: {missing[:10]}")
        vals = np.array([[table[(y, a)] for a in ages] for y in years])
        out[sid] = (np.array(years), np.array(ages), vals)
    return out


def _atomic_write(path: Path, writer):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_long_csv(path, value_column: str, ids: Sequence[str], years, ages, values) -> None:
    """Write ``values[k, t, i]`` in long format, floats with 17 significant digits."""

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "year", "age", value_column])
        for k, sid in enumerate(ids):
            for t, y in enumerate(years):
                for i, a in enumerate(ages):
                    w.writerow([sid, int(y), FLOAT_FMT % a, FLOAT_FMT % values[k, t, i]])

    _atomic_write(Path(path), write)


def _stack(table, ids, what, grid_ref=None):
    missing = [s for s in ids if s not in table]
    if missing:
        raise DataError(f"{what}: no data for series {missing[:10]}")
    years, ages = grid_ref if grid_ref is not None else table[ids[0]][:2]
    for sid in ids:
        y, a, _ = table[sid]
        if not np.array_equal(a, ages):
            raise DataError(f"{what}: series {sid!r} has a different age grid")
        if not np.array_equal(y, years):
            raise DataError(f"{what}: series {sid!r} covers different years")
    return years, ages, np.stack([table[s][2] for s in ids])


def ingest(rates_csv, exposures_csv, structure_json) -> GroupedDataset:
    """Load and cross-validate rates, exposures and the group structure.

    Rates of non-bottom nodes are taken from the file when present and
    otherwise derived as exposure-weighted averages of their members.
    """
    structure = GroupStructure.load(structure_json)
    rates = read_long_csv(rates_csv, "rate")
    expo = read_long_csv(exposures_csv, "exposure")
    years, ages, bottom = _stack(rates, list(structure.bottom_ids), "rates")
    _, _, e = _stack(expo, list(structure.bottom_ids), "exposures", (years, ages))
    if np.any(e <= 0):
        raise DataError("exposures must be positive")
    if np.any(bottom < 0):
        raise DataError("rates must be non-negative")
    summing = SummingMatrix(structure, e)
    sums = summing.row_sums()
    if np.max(np.abs(sums - 1.0)) > 1e-12:
        raise DataError("derived summing matrix rows do not sum to 1")
    derived = summing.aggregate(bottom)
    nb = structure.n_bottom
    upper = []
    for k, nid in enumerate(structure.nodes[: structure.n_nodes - nb]):
        if nid in rates:
            upper.append(_stack(rates, [nid], "rates", (years, ages))[2][0])
        else:
            upper.append(derived[k])
    all_rates = np.concatenate([np.array(upper).reshape(-1, *bottom.shape[1:]), bottom])
    return GroupedDataset(structure, AgeGrid(ages), np.asarray(years), all_rates, e)


def export(ds: GroupedDataset, directory) -> dict:
    """Write ``rates.csv``, ``exposures.csv`` and ``structure.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"rates": d / "rates.csv", "exposures": d / "exposures.csv", "structure": d / "structure.json"}
    ages = ds.grid.points
    write_long_csv(paths["rates"], "rate", ds.structure.nodes, ds.years, ages, ds.rates)
    write_long_csv(paths["exposures"], "exposure", ds.structure.bottom_ids, ds.years, ages, ds.exposures)
    _atomic_write(paths["structure"], lambda fh: fh.write(json.dumps(ds.structure.to_dict(), indent=1)))
    return paths


def parse_shape(shape: str) -> GroupStructure:
    """``'japan'`` for the 168-series layout, or ``'<regions>x<sexes>'``
    (e.g. ``'2x2'``), optionally ``'<regions>x<areas per region>x<sexes>'``."""
    s = shape.strip().lower()
    if s == "japan":
        return japan_structure()
    parts = s.split("x")
    try:
        nums = [int(v) for v in parts]
    except ValueError:
        raise ConfigError(f"cannot parse structure shape {shape!r}") from None
    if any(v < 1 for v in nums) or len(nums) not in (2, 3):
        raise ConfigError(f"cannot parse structure shape {shape!r}")
    sexes = ["F", "M", "X", "Y", "Z"][: nums[-1]] if nums[-1] <= 5 else [f"S{i}" for i in range(nums[-1])]
    if len(nums) == 2:
        return grouped_structure([f"R{r + 1}" for r in range(nums[0])], sexes)
    regions, k = {}, 1
    for r in range(nums[0]):
        regions[f"R{r + 1}"] = [f"P{k + i}" for i in range(nums[1])]
        k += nums[1]
    return grouped_structure(regions, sexes)


def _factor_shapes(u, count):
    """Smooth, quadrature-orthonormal factor curves on ages ``u``."""
    from groupfts.curves import trapezoid_weights

    x = (u - u.min()) / max(u.max() - u.min(), 1.0)
    raw = [np.exp(-((x - 0.15) ** 2) / 0.05) + 0.5 * (1 - x)]
    raw += [np.sin(np.pi * (j + 1) * x) for j in range(1, count)]
    w = trapezoid_weights(u)
    basis = []
    for f in raw:
        for g in basis:
            f = f - np.sum(w * f * g) * g
        basis.append(f / np.sqrt(np.sum(w * f * f)))
    return np.column_stack(basis)


def _scores(rng, n, count, dynamics, phi, innovation_sd, drift):
    sds = innovation_sd * 0.5 ** np.arange(count)
    out = np.zeros((n, count))
    if dynamics == "ar1":
        stat = sds / np.sqrt(max(1 - phi**2, 1e-12))
        out[0] = rng.standard_normal(count) * stat
        for t in range(1, n):
            out[t] = phi * out[t - 1] + sds * rng.standard_normal(count)
    elif dynamics == "drift":
        slopes = -drift * 0.5 ** np.arange(count)
        steps = slopes + sds * rng.standard_normal((n, count))
        steps[0] = 0.0
        out = np.cumsum(steps, axis=0)
    else:
        raise ConfigError(f"unknown score dynamics {dynamics!r}; use 'ar1' or 'drift'")
    return out


def simulate_curves(
    n: int,
    p: int,
    n_factors: int = 1,
    phi: float = 0.7,
    snr: float = 5.0,
    rng=None,
    dynamics: str = "ar1",
):
    """Centred curves ``sum_j beta_tj f_j(u) + noise`` on a uniform grid.

    The noise variance is the average signal variance divided by ``snr``
    (``snr=inf`` gives noiseless curves).

    Returns
    -------
    fts : FunctionalTimeSeries
    factors : ndarray, shape (p, n_factors)
    scores : ndarray, shape (n, n_factors)
    """
    rng = np.random.default_rng(rng)
    grid = AgeGrid(np.linspace(0.0, 1.0, p))
    f = _factor_shapes(grid.points, n_factors)
    beta = _scores(rng, n, n_factors, dynamics, phi, 1.0, 0.1)
    signal = beta @ f.T
    values = signal
    if np.isfinite(snr):
        noise_sd = np.sqrt(np.mean(signal.var(axis=0)) / snr)
        values = signal + noise_sd * rng.standard_normal(signal.shape)
    return FunctionalTimeSeries(grid, np.arange(n), values, Scale.RAW), f, beta


def simulate_dataset(
    structure: GroupStructure,
    n_years: int = 42,
    ages: Optional[Sequence[float]] = None,
    n_factors: int = 2,
    dynamics: str = "drift",
    phi: float = 0.7,
    innovation_sd: float = 0.05,
    drift: float = 0.02,
    noise: float = 0.02,
    first_year: int = 1975,
    seed: int = 0,
) -> GroupedDataset:
    """Synthetic mortality panel with bottom log10 rates from a factor model.

    Each bottom series has log10 rates ``mu_b(u) + sum_j beta_tj f_j(u) +
    noise``, exposures are smooth positive surfaces, and every aggregate's
    rates are the exposure-weighted average of its members.
    """
    rng = np.random.default_rng(seed)
    u = np.arange(0, 101, dtype=float) if ages is None else np.asarray(ages, dtype=float)
    grid = AgeGrid(u)
    nb = structure.n_bottom
    f = _factor_shapes(u, n_factors) * np.sqrt(u.max() - u.min() or 1.0) / 10.0
    base = np.log10(0.00004 * np.exp(0.088 * u) + 0.003 * np.exp(-1.2 * u) + 0.0002)
    t = np.arange(n_years)
    log_rates = np.empty((nb, n_years, u.size))
    exposures = np.empty((nb, n_years, u.size))
    for b, bid in enumerate(structure.bottom_ids):
        male = bid.endswith("*M")
        offset = 0.12 * male + rng.normal(0.0, 0.05) + rng.normal(0.0, 0.02) * (u / max(u.max(), 1.0))
        beta = _scores(rng, n_years, n_factors, dynamics, phi, innovation_sd, drift)
        log_rates[b] = base + offset + beta @ f.T + noise * rng.standard_normal((n_years, u.size))
        pop = rng.uniform(2e4, 2e5)
        shape = np.exp(-((u / 85.0) ** 4)) * (1.0 + 0.2 * np.cos(u / 15.0)) + 0.01
        growth = 1.0 + rng.uniform(-0.005, 0.01) * t
        exposures[b] = pop * growth[:, None] * shape[None, :]
    bottom = np.power(10.0, log_rates)
    summing = SummingMatrix(structure, exposures)
    all_rates = summing.aggregate(bottom)
    all_rates[-nb:] = bottom
    return GroupedDataset(structure, grid, np.arange(first_year, first_year + n_years), all_rates, exposures)
