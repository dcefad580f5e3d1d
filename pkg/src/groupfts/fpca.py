"""Functional principal components of a covariance surface on an age grid."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from groupfts.curves import AgeGrid, FunctionalTimeSeries
from groupfts.errors import ConfigError, DataError
from groupfts.lrcov import KernelSpec, _centre, _clip_psd, _sandwich, estimate_long_run_covariance

__all__ = [
    "Mode",
    "Decomposition",
    "eigen_decompose",
    "compute_scores",
    "decompose",
    "select_ncomp_cpv",
    "select_ncomp_hk",
    "select_ncomp",
    "reconstruct",
]

NcompPolicy = Union[str, int]

# eigenvalues below this fraction of the largest are treated as exact zeros
_REL_ZERO = 1e-12


class Mode(str, enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


def _weights(grid):
    if isinstance(grid, AgeGrid):
        return grid.quadrature_weights
    return np.asarray(grid, dtype=float)


def eigen_decompose(cov, grid, max_components: Optional[int] = None):
    """Eigenpairs of the integral operator with kernel ``cov``.

    The operator is discretised with the grid's quadrature weights ``w``:
    the symmetric matrix ``W^1/2 C W^1/2`` is diagonalised and its
    eigenvectors mapped back by ``W^-1/2``, so the returned eigenfunctions
    are orthonormal under ``<f, g> = sum_i w_i f_i g_i``.

    Each eigenfunction is signed so that its weighted sum is non-negative;
    an exact zero sum is resolved by the sign of the first non-zero entry.

    Returns
    -------
    eigenvalues : ndarray, shape (K,)
        Descending and non-negative.
    eigenfunctions : ndarray, shape (p, K)
    """
    cov = np.asarray(cov, dtype=float)
    w = _weights(grid)
    p = w.size
    if cov.shape != (p, p):
        raise DataError(f"covariance has shape {cov.shape}, grid has {p} points")
    tol = 1e-10 * max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > tol:
        raise DataError("covariance matrix is not symmetric")
    sw = np.sqrt(w)
    a = sw[:, None] * cov * sw[None, :]
    evals, evecs = np.linalg.eigh((a + a.T) / 2.0)
    evals = evals[::-1].copy()
    phi = evecs[:, ::-1] / sw[:, None]
    top = max(evals[0], 0.0)
    evals[evals <= _REL_ZERO * top] = 0.0
    total = phi.T @ w
    for j in range(p):
        s = total[j]
        if abs(s) <= 1e-12 * np.sum(w * np.abs(phi[:, j])):
            nz = np.flatnonzero(np.abs(phi[:, j]) > 1e-14)
            s = phi[nz[0], j] if nz.size else 1.0
        if s < 0:
            phi[:, j] = -phi[:, j]
    k = p if max_components is None else max(1, min(int(max_components), p))
    return evals[:k], phi[:, :k]


def compute_scores(centered, eigenfunctions, grid) -> np.ndarray:
    """Quadrature projections ``sum_i w_i x(u_i) phi_j(u_i)``."""
    x = np.atleast_2d(np.asarray(centered, dtype=float))
    phi = np.asarray(eigenfunctions, dtype=float)
    w = _weights(grid)
    if phi.ndim != 2 or x.shape[1] != w.size or phi.shape[0] != w.size:
        raise DataError(
            f"dimension mismatch: data {x.shape}, eigenfunctions {phi.shape}, grid {w.size}"
        )
    return (x * w) @ phi


def select_ncomp_cpv(eigenvalues, delta: float = 0.85) -> int:
    """Smallest ``J`` whose leading eigenvalues explain at least ``delta``."""
    if not (0 < delta <= 1):
        raise ConfigError(f"delta must lie in (0, 1], got {delta}")
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if lam.size == 0 or total <= 0:
        return 1
    cum = np.cumsum(lam) / total
    return int(np.argmax(cum >= delta - 1e-12)) + 1


def select_ncomp_hk(eigenvalues, n: int) -> int:
    """Largest ``J <= n`` with ``lambda_1 / lambda_J <= sqrt(n) / log10(n)``.

    Zero eigenvalues are never selected; returns 1 when nothing qualifies.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if n < 2 or lam.size == 0 or lam[0] <= 0:
        return 1
    bound = np.sqrt(n) / np.log10(n)
    ok = np.zeros(lam.size, dtype=bool)
    pos = lam > 0
    with np.errstate(over="ignore"):
        ok[pos] = lam[0] / lam[pos] <= bound
    ok[n:] = False
    idx = np.flatnonzero(ok)
    return int(idx[-1]) + 1 if idx.size else 1


def select_ncomp(eigenvalues, n: int, delta: float = 0.85) -> int:
    """``max(J_CPV, J_HK)`` capped at the number of positive eigenvalues."""
    lam = np.asarray(eigenvalues, dtype=float)
    j = max(select_ncomp_cpv(lam, delta), select_ncomp_hk(lam, n))
    return max(1, min(j, int(np.sum(lam > 0))))


def _resolve_ncomp(policy: NcompPolicy, spectrum, n, delta) -> int:
    if isinstance(policy, (int, np.integer)) and not isinstance(policy, bool):
        if policy < 1:
            raise ConfigError(f"number of components must be >= 1, got {policy}")
        return int(min(policy, spectrum.size))
    if policy == "auto":
        return select_ncomp(spectrum, n, delta)
    if policy == "cpv":
        return select_ncomp_cpv(spectrum, delta)
    if policy == "hk":
        return select_ncomp_hk(spectrum, n)
    raise ConfigError(f"unknown component policy {policy!r}; use 'auto', 'cpv', 'hk' or an integer")


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Mean function, leading eigenpairs and scores of a functional time series.

    ``eigenvalues``, ``eigenfunctions`` and ``scores`` hold the ``J``
    retained components; ``spectrum`` keeps every eigenvalue so explained
    proportions can be reported.
    """

    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    scores: np.ndarray
    mode: Mode
    grid: AgeGrid
    spectrum: np.ndarray
    bandwidth: Optional[float] = None
    kernel: Optional[KernelSpec] = None

    @property
    def ncomp(self) -> int:
        return self.eigenvalues.size

    def explained(self) -> np.ndarray:
        """Proportion of total variation per retained component."""
        total = self.spectrum.sum()
        if total <= 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / total

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "bandwidth": self.bandwidth,
            "kernel": None if self.kernel is None else self.kernel.family.value,
            "ages": self.grid.points.tolist(),
            "mean": self.mean.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "spectrum": self.spectrum.tolist(),
            "eigenfunctions": self.eigenfunctions.T.tolist(),
            "scores": self.scores.tolist(),
        }


def decompose(
    fts: FunctionalTimeSeries,
    mode: Union[Mode, str] = Mode.DYNAMIC,
    kernel: KernelSpec = KernelSpec(),
    bandwidth: Optional[float] = None,
    ncomp: NcompPolicy = "auto",
    delta: float = 0.85,
) -> Decomposition:
    """Static (lag-0 covariance) or dynamic (long-run covariance) FPCA.

    Parameters
    ----------
    fts : FunctionalTimeSeries
    mode : {'static', 'dynamic'}
    kernel, bandwidth
        Long-run covariance settings, ignored in static mode.
    ncomp : {'auto', 'cpv', 'hk'} or int
        'auto' takes the larger of the CPV and eigenvalue-ratio rules.
    delta : float
        CPV threshold.
    """
    mode = Mode(mode)
    n = fts.n
    if n < 4:
        raise DataError(f"decomposition needs n >= 4 curves, got {n}")
    x = fts.values
    mean = x.mean(axis=0)
    xc = _centre(x)
    if mode is Mode.STATIC:
        cov, _ = _clip_psd(_sandwich(xc, np.zeros(n)))
        bw, kern = None, None
    else:
        lrc = estimate_long_run_covariance(fts, kernel, bandwidth)
        cov, bw, kern = lrc.matrix, lrc.bandwidth, lrc.kernel
    spectrum, phi = eigen_decompose(cov, fts.grid)
    j = _resolve_ncomp(ncomp, spectrum, n, delta)
    phi = phi[:, :j]
    scores = compute_scores(xc, phi, fts.grid)
    return Decomposition(mean, spectrum[:j].copy(), phi, scores, mode, fts.grid, spectrum, bw, kern)


def reconstruct(dec: Decomposition, scores) -> np.ndarray:
    """Curves ``mu + sum_j scores[:, j] phi_j``."""
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    if s.shape[1] > dec.eigenfunctions.shape[1]:
        raise DataError(
            f"{s.shape[1]} score columns but only {dec.eigenfunctions.shape[1]} eigenfunctions"
        )
    return dec.mean + s @ dec.eigenfunctions[:, : s.shape[1]].T
