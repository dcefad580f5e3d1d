"""Group structures, exposure-ratio summing matrices and reconciliation."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from groupfts.errors import ConfigError, DataError, NumericalError

__all__ = [
    "GroupStructure",
    "SummingMatrix",
    "ExposureWarning",
    "grouped_structure",
    "japan_structure",
    "build_summing_matrix",
    "summing_matrices",
    "forecast_exposures",
    "forecast_exposure_ratios",
    "bottom_up",
    "ols_project",
    "ols_reconcile",
    "reconcile_intervals",
]

#: prefectures per region for the eight Japanese regions (47 in total)
JAPAN_REGIONS = (1, 6, 7, 9, 7, 5, 4, 8)


class ExposureWarning(UserWarning):
    """A forecast exposure was non-positive and has been floored."""


@dataclass(frozen=True)
class GroupStructure:
    """All series of a grouped collection, bottom series last.

    ``members[k]`` lists the indices (into ``bottom_ids``) aggregated by
    ``nodes[k]``; ``levels[k]`` is its level label.
    """

    bottom_ids: tuple
    nodes: tuple
    members: tuple
    levels: tuple

    def __post_init__(self):
        nb = len(self.bottom_ids)
        if nb == 0:
            raise DataError("group structure has no bottom series")
        if len(set(self.bottom_ids)) != nb:
            raise DataError("bottom series ids must be unique")
        if len(set(self.nodes)) != len(self.nodes):
            raise DataError("node ids must be unique")
        if not (len(self.nodes) == len(self.members) == len(self.levels)):
            raise DataError("nodes, members and levels must have equal length")
        if tuple(self.nodes[-nb:]) != tuple(self.bottom_ids):
            raise DataError("bottom series must be the last nodes, in bottom_ids order")
        for k, mem in enumerate(self.members):
            if len(mem) == 0:
                raise DataError(f"node {self.nodes[k]!r} has no members")
            if any(not 0 <= i < nb for i in mem) or len(set(mem)) != len(mem):
                raise DataError(f"node {self.nodes[k]!r} has invalid members")
        for j in range(nb):
            if tuple(self.members[len(self.nodes) - nb + j]) != (j,):
                raise DataError(f"bottom node {self.bottom_ids[j]!r} must aggregate exactly itself")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_bottom(self) -> int:
        return len(self.bottom_ids)

    @property
    def level_names(self) -> list:
        seen = []
        for lev in self.levels:
            if lev not in seen:
                seen.append(lev)
        return seen

    def index(self, node_id) -> int:
        return self.nodes.index(node_id)

    def membership(self) -> np.ndarray:
        """0/1 matrix with a row per node and a column per bottom series."""
        a = np.zeros((self.n_nodes, self.n_bottom))
        for k, mem in enumerate(self.members):
            a[k, list(mem)] = 1.0
        return a

    @classmethod
    def from_dict(cls, spec: Mapping, bottom_level: str = "bottom") -> "GroupStructure":
        """Build from ``{"bottom": [...], "nodes": [{"id", "level", "members"}]}``.

        Bottom series missing from ``nodes`` are appended with level
        ``bottom_level``.
        """
        try:
            bottom = [str(b) for b in spec["bottom"]]
            raw_nodes = list(spec.get("nodes", []))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed group structure: {exc}") from None
        pos = {b: i for i, b in enumerate(bottom)}
        given = {}
        upper_ids, upper_mem, upper_lev = [], [], []
        for node in raw_nodes:
            try:
                nid, level, mem = str(node["id"]), str(node["level"]), [str(m) for m in node["members"]]
            except (KeyError, TypeError):
                raise DataError(f"node entry needs id, level and members: {node!r}") from None
            unknown = [m for m in mem if m not in pos]
            if unknown:
                raise DataError(f"node {nid!r} lists unknown bottom series {unknown[:10]}")
            if nid in pos:
                given[nid] = level
                continue
            upper_ids.append(nid)
            upper_mem.append(tuple(pos[m] for m in mem))
            upper_lev.append(level)
        nodes = tuple(upper_ids) + tuple(bottom)
        members = tuple(upper_mem) + tuple((i,) for i in range(len(bottom)))
        levels = tuple(upper_lev) + tuple(given.get(b, bottom_level) for b in bottom)
        return cls(tuple(bottom), nodes, members, levels)

    def to_dict(self) -> dict:
        return {
            "bottom": list(self.bottom_ids),
            "nodes": [
                {"id": nid, "level": lev, "members": [self.bottom_ids[i] for i in mem]}
                for nid, lev, mem in zip(self.nodes, self.levels, self.members)
            ],
        }

    @classmethod
    def load(cls, path) -> "GroupStructure":
        try:
            spec = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(spec)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def grouped_structure(
    regions: Mapping[str, Sequence[str]] | Sequence[str],
    sexes: Sequence[str] = ("F", "M"),
    total: str = "Total",
) -> GroupStructure:
    """Geography x sex structure in the stacking order total, sex, region, ...

    ``regions`` maps region names to their sub-areas (e.g. prefectures); a
    plain sequence of names makes the regions themselves the finest
    geography. Bottom series are ``"<area>*<sex>"``.
    """
    if isinstance(regions, Mapping):
        areas = [a for sub in regions.values() for a in sub]
        region_names = list(regions)
    else:
        areas = list(regions)
        region_names = []
    bottom = [f"{a}*{s}" for a in areas for s in sexes]
    pos = {b: i for i, b in enumerate(bottom)}

    def pick(area_list, sex_list):
        return tuple(pos[f"{a}*{s}"] for a in area_list for s in sex_list)

    nodes, members, levels = [f"{total}*T"], [pick(areas, sexes)], ["Total"]
    for s in sexes:
        nodes.append(f"{total}*{s}")
        members.append(pick(areas, [s]))
        levels.append("Sex")
    if region_names:
        for r in region_names:
            nodes.append(f"{r}*T")
            members.append(pick(regions[r], sexes))
            levels.append("Region")
        for s in sexes:
            for r in region_names:
                nodes.append(f"{r}*{s}")
                members.append(pick(regions[r], [s]))
                levels.append("Sex x Region")
        area_level, bottom_level = "Prefecture", "Sex x Prefecture"
    else:
        area_level, bottom_level = "Region", "Sex x Region"
    for a in areas:
        nodes.append(f"{a}*T")
        members.append(pick([a], sexes))
        levels.append(area_level)
    for b in bottom:
        nodes.append(b)
        members.append((pos[b],))
        levels.append(bottom_level)
    return GroupStructure(tuple(bottom), tuple(nodes), tuple(members), tuple(levels))


def japan_structure(prefectures_per_region: Sequence[int] = JAPAN_REGIONS) -> GroupStructure:
    """The 168-series layout: 1 + 2 + 8 + 16 + 47 + 94 with default arguments."""
    regions, k = {}, 1
    for r, count in enumerate(prefectures_per_region, start=1):
        regions[f"R{r}"] = [f"P{k + i}" for i in range(count)]
        k += count
    return grouped_structure(regions, total="Japan")


class SummingMatrix:
    """Exposure-ratio summing matrices for a block of (year, age) cells.

    The matrix for cell ``c`` has entry ``E_b / E_node`` when bottom ``b``
    belongs to ``node`` and 0 otherwise, so ``R = S b`` maps bottom rates to
    the rates of every node. Matrices are formed on demand from the bottom
    exposures ``exposures[b, t, i]``.
    """

    def __init__(self, structure: GroupStructure, exposures):
        e = np.asarray(exposures, dtype=float)
        if e.ndim != 3 or e.shape[0] != structure.n_bottom:
            raise DataError(
                f"exposures must have shape (n_bottom={structure.n_bottom}, years, ages), got {e.shape}"
            )
        if not np.all(np.isfinite(e)):
            raise DataError("exposures contain non-finite values")
        self.structure = structure
        self.exposures = e
        self.membership = structure.membership()
        node_e = np.tensordot(self.membership, e, axes=1)
        if np.any(node_e <= 0):
            k = int(np.argwhere(node_e <= 0)[0][0])
            raise DataError(f"node {structure.nodes[k]!r} has zero exposure")
        self.node_exposures = node_e

    @property
    def shape(self):
        return self.exposures.shape[1:]

    def matrix(self, t: int, i: int) -> np.ndarray:
        """The ``n_nodes x n_bottom`` matrix for year index ``t``, age index ``i``."""
        return self.membership * self.exposures[:, t, i][None, :] / self.node_exposures[:, t, i][:, None]

    def _ratios(self, t: int) -> np.ndarray:
        """Summing matrices of every age in year ``t``, shape (N, B, p)."""
        return self.membership[:, :, None] * self.exposures[None, :, t, :] / self.node_exposures[:, None, t, :]

    def aggregate(self, bottom) -> np.ndarray:
        """Apply ``S`` cellwise: ``bottom`` (B, T, p) -> (N, T, p)."""
        b = np.asarray(bottom, dtype=float)
        if b.shape != self.exposures.shape:
            raise DataError(f"bottom forecasts have shape {b.shape}, expected {self.exposures.shape}")
        out = np.empty((self.structure.n_nodes,) + b.shape[1:])
        for t in range(b.shape[1]):
            out[:, t, :] = np.einsum("kbi,bi->ki", self._ratios(t), b[:, t, :])
        return out

    def row_sums(self) -> np.ndarray:
        return np.stack([self._ratios(t).sum(axis=1) for t in range(self.shape[0])], axis=1)


def build_summing_matrix(structure: GroupStructure, exposures, year: int, age: int) -> np.ndarray:
    """``S_t(u)`` for year index ``year`` and age index ``age``."""
    return SummingMatrix(structure, exposures).matrix(year, age)


def summing_matrices(structure: GroupStructure, exposures) -> SummingMatrix:
    return SummingMatrix(structure, exposures)


def forecast_exposures(exposures, horizon: int, family: str = "auto", floor: float = 1e-8) -> np.ndarray:
    """Future bottom exposures under the cohort rule.

    Age ``i + 1`` next year inherits age ``i`` this year; the last, open
    age group keeps its survivors and receives the cohort below. Age 0 is
    forecast from its own history on the log scale.

    Parameters
    ----------
    exposures : ndarray, shape (B, n, p)
    horizon : int

    Returns
    -------
    ndarray, shape (B, horizon, p)
    """
    from groupfts.forecast import fit_score_model

    e = np.asarray(exposures, dtype=float)
    nb, n, p = e.shape
    if n < 8:
        raise DataError(f"exposure forecasting needs n >= 8 years, got {n}")
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if np.any(e[:, :, 0] <= 0):
        raise DataError("age-0 exposures must be positive")
    out = np.empty((nb, horizon, p))
    for b in range(nb):
        log0 = np.log(e[b, :, 0])
        age0 = np.exp(fit_score_model(log0, family).forecast(log0, horizon))
        prev = e[b, -1]
        for h in range(horizon):
            cur = np.empty(p)
            cur[0] = age0[h]
            cur[1:] = prev[:-1]
            if p > 1:
                cur[-1] += prev[-1]
            out[b, h] = cur
            prev = cur
    if np.any(out <= 0):
        warnings.warn(f"non-positive forecast exposures floored at {floor}", ExposureWarning, stacklevel=2)
        out = np.maximum(out, floor)
    return out


def forecast_exposure_ratios(
    structure: GroupStructure, exposures, horizon: int, family: str = "auto"
) -> SummingMatrix:
    """Summing matrices for the next ``horizon`` years from forecast exposures."""
    return SummingMatrix(structure, forecast_exposures(exposures, horizon, family))


def bottom_up(bottom_forecasts, summing: SummingMatrix) -> np.ndarray:
    """Aggregate bottom forecasts (B, H, p) to every node (N, H, p)."""
    return summing.aggregate(bottom_forecasts)


def _ols_cells(s_cells, r_cells, nodes_ids, bottom_ids):
    """Least squares per cell: s (C, N, B), r (C, N) -> beta (C, B)."""
    q, r = np.linalg.qr(s_cells)
    diag = np.abs(np.diagonal(r, axis1=1, axis2=2))
    scale = np.max(np.abs(r), axis=(1, 2), keepdims=False)
    bad = diag <= 1e-12 * np.maximum(scale, 1e-300)[:, None]
    if np.any(bad):
        cols = sorted(set(np.flatnonzero(bad.any(axis=0)).tolist()))
        raise NumericalError(
            f"summing matrix is rank deficient; dependent columns: {[bottom_ids[c] for c in cols][:10]}"
        )
    qtr = np.einsum("cnb,cn->cb", q, r_cells)
    return np.linalg.solve(r, qtr[:, :, None])[:, :, 0]


def ols_project(s, independent):
    """OLS reconciliation with an explicit summing matrix.

    Parameters
    ----------
    s : ndarray, shape (N, B) or (C, N, B)
    independent : ndarray, shape (N,) or (C, N)

    Returns
    -------
    reconciled : ndarray, shape (N,) or (C, N)
    bottom : ndarray, shape (B,) or (C, B)
    """
    s = np.asarray(s, dtype=float)
    r = np.asarray(independent, dtype=float)
    single = s.ndim == 2
    s3 = s[None] if single else s
    r2 = r[None] if single else r
    if s3.ndim != 3 or r2.shape != s3.shape[:2]:
        raise DataError(f"summing matrix {s.shape} and forecasts {r.shape} do not conform")
    beta = _ols_cells(s3, r2, None, [str(j) for j in range(s3.shape[2])])
    rec = np.einsum("cnb,cb->cn", s3, beta)
    return (rec[0], beta[0]) if single else (rec, beta)


def ols_reconcile(independent, summing: SummingMatrix, chunk: int = 512):
    """Project independent forecasts of all nodes onto the span of ``S``.

    Per (horizon, age) cell solves ``min |R - S beta|`` with a QR
    factorisation and returns ``(S beta, beta)``.

    Parameters
    ----------
    independent : ndarray, shape (N, H, p)
    summing : SummingMatrix
        Covering the same H years and p ages.

    Returns
    -------
    reconciled : ndarray, shape (N, H, p)
    bottom : ndarray, shape (B, H, p)
    """
    rhat = np.asarray(independent, dtype=float)
    st = summing.structure
    hh, p = summing.shape
    if rhat.shape != (st.n_nodes, hh, p):
        raise DataError(f"independent forecasts have shape {rhat.shape}, expected {(st.n_nodes, hh, p)}")
    a = summing.membership
    e = summing.exposures.reshape(st.n_bottom, -1)
    ne = summing.node_exposures.reshape(st.n_nodes, -1)
    rr = rhat.reshape(st.n_nodes, -1)
    beta = np.empty((st.n_bottom, hh * p))
    for lo in range(0, hh * p, chunk):
        sl = slice(lo, min(lo + chunk, hh * p))
        s_cells = a[None, :, :] * e[:, sl].T[:, None, :] / ne[:, sl].T[:, :, None]
        beta[:, sl] = _ols_cells(s_cells, rr[:, sl].T, st.nodes, st.bottom_ids).T
    beta = beta.reshape(st.n_bottom, hh, p)
    return summing.aggregate(beta), beta


def reconcile_intervals(lower, upper, summing: SummingMatrix, method: str = "bottom-up"):
    """Map interval bounds through a reconciliation method bound by bound.

    For 'bottom-up' the bounds are bottom-level (B, H, p); for 'ols' they
    cover every node (N, H, p). Crossed pairs are swapped afterwards.
    """
    if method == "bottom-up":
        lo, up = bottom_up(lower, summing), bottom_up(upper, summing)
    elif method == "ols":
        lo, up = ols_reconcile(lower, summing)[0], ols_reconcile(upper, summing)[0]
    else:
        raise ConfigError(f"unknown reconciliation method {method!r}; use 'bottom-up' or 'ols'")
    return np.minimum(lo, up), np.maximum(lo, up)
