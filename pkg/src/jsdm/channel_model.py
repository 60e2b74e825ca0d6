"""Angular channel model for a uniform linear array.

User drops in a sector, one-ring covariance synthesis, eigendecomposition
with rank truncation, and correlated Rayleigh channel sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "ArrayConfig",
    "UserGeometry",
    "CovarianceMatrix",
    "ula",
    "one_ring_covariance",
    "eigendecompose",
    "sample_channel",
    "sample_channels",
    "drop_users",
    "save_covariance",
    "load_covariance",
]

#: Relative eigenvalue floor used to decide the rank of a covariance.
RANK_TOL = 1e-6

#: Number of quadrature nodes used for the one-ring integral.
QUAD_PANELS = 10
QUAD_NODES_PER_PANEL = 20

HERMITIAN_TOL = 1e-8


@dataclass(frozen=True)
class ArrayConfig:
    """Antenna positions (in units of the wavelength) of the base station."""

    positions: np.ndarray
    wavelength: float = 1.0

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be an (N_t, 2) array")
        if not np.all(np.isfinite(pos)):
            raise ValueError("antenna positions must be finite")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def num_antennas(self) -> int:
        return self.positions.shape[0]


def ula(num_antennas: int, spacing: float = 0.5, wavelength: float = 1.0) -> ArrayConfig:
    """ULA along the y-axis, so that the array boresight is the x-axis.

    `spacing` is given in wavelengths.
    """
    if num_antennas < 1:
        raise ValueError("num_antennas must be >= 1")
    y = np.arange(num_antennas) * spacing * wavelength
    return ArrayConfig(np.column_stack([np.zeros(num_antennas), y]), wavelength)


@dataclass(frozen=True)
class UserGeometry:
    azimuth: float
    angular_spread: float

    def __post_init__(self) -> None:
        if not self.angular_spread > 0:
            raise ValueError("angular_spread must be > 0")


@dataclass(frozen=True)
class CovarianceMatrix:
    """Hermitian PSD covariance with its truncated eigendecomposition.

    `eigenvectors` holds the `rank` dominant eigenvectors as columns and
    `eigenvalues` the matching eigenvalues in descending order.
    """

    entries: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray

    @classmethod
    def from_matrix(cls, R: np.ndarray, tol: float = RANK_TOL) -> "CovarianceMatrix":
        R = np.asarray(R, dtype=complex)
        U, lam, _ = eigendecompose(R, tol)
        R = 0.5 * (R + R.conj().T)
        for arr in (R, U, lam):
            arr.setflags(write=False)
        return cls(R, U, lam)

    @property
    def rank(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dominant(self, count: int) -> np.ndarray:
        """Eigenvectors of the `count` strongest modes (clipped to the rank)."""
        return self.eigenvectors[:, : min(count, self.rank)]

    def low_rank(self) -> np.ndarray:
        """U Λ U^H, the covariance restricted to its retained modes."""
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.conj().T


def _steering(angles: np.ndarray, array: ArrayConfig) -> np.ndarray:
    # exp(j k(a)^T u_m) with k(a) = -(2 pi / lambda) (cos a, sin a)
    k = (-2.0 * np.pi / array.wavelength) * np.stack([np.cos(angles), np.sin(angles)])
    return np.exp(1j * (array.positions @ k))


def _quadrature(lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(QUAD_NODES_PER_PANEL)
    edges = np.linspace(lo, hi, QUAD_PANELS + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def one_ring_covariance(geom: UserGeometry, array: ArrayConfig) -> CovarianceMatrix:
    """One-ring covariance of a user seen under azimuth θ with spread Δ.

    [R]_{m,p} is the average of exp(j k(α)^T (u_m - u_p)) over
    α ∈ [θ-Δ, θ+Δ], integrated with composite Gauss-Legendre quadrature
    (10 panels of 20 nodes).
    """
    theta, delta = float(geom.azimuth), float(geom.angular_spread)
    if not delta > 0:
        raise ValueError("angular spread must be > 0")
    nodes, weights = _quadrature(theta - delta, theta + delta)
    A = _steering(nodes, array)
    R = (A * (weights / (2.0 * delta))) @ A.conj().T
    return CovarianceMatrix.from_matrix(R)


def eigendecompose(R: np.ndarray, tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray, int]:
    """Eigendecomposition of a Hermitian matrix, truncated to its numerical rank.

    Returns ``(U, lam, r)`` with eigenvalues sorted in descending order and
    only those above ``tol * lam_max`` retained.
    """
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("R must be a square matrix")
    asym = np.max(np.abs(R - R.conj().T)) if R.size else 0.0
    if asym > HERMITIAN_TOL * max(1.0, np.max(np.abs(R))):
        raise ValueError(f"matrix is not Hermitian (max asymmetry {asym:.3e})")
    lam, U = np.linalg.eigh(0.5 * (R + R.conj().T))
    lam, U = lam[::-1], U[:, ::-1]
    if lam.size == 0 or lam[0] <= 0:
        return U[:, :0].copy(), lam[:0].copy(), 0
    r = int(np.count_nonzero(lam > tol * lam[0]))
    return np.ascontiguousarray(U[:, :r]), lam[:r].copy(), r


def sample_channels(cov: CovarianceMatrix, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `count` independent h ~ CN(0, R); returns an (N_t, count) array."""
    r = cov.rank
    w = (rng.standard_normal((r, count)) + 1j * rng.standard_normal((r, count))) / np.sqrt(2.0)
    return (cov.eigenvectors * np.sqrt(cov.eigenvalues)) @ w


def sample_channel(cov: CovarianceMatrix, rng: np.random.Generator) -> np.ndarray:
    return sample_channels(cov, 1, rng)[:, 0]


def drop_users(
    count: int,
    sector_halfwidth: float,
    spread: float,
    rng: np.random.Generator,
) -> list[UserGeometry]:
    """Uniform azimuths in [-halfwidth, +halfwidth], all with the same spread."""
    if count < 1:
        raise ValueError("count must be >= 1")
    az = rng.uniform(-sector_halfwidth, sector_halfwidth, size=count)
    return [UserGeometry(float(a), spread) for a in az]


def save_covariance(path: str | Path, R: np.ndarray | CovarianceMatrix, fmt: str = "bin") -> None:
    """Dump a matrix row-major with complex entries as interleaved re/im doubles.

    ``fmt="bin"`` writes raw little-endian float64; ``fmt="txt"`` writes one
    matrix row per line.
    """
    M = R.entries if isinstance(R, CovarianceMatrix) else np.asarray(R, dtype=complex)
    inter = np.empty((M.shape[0], 2 * M.shape[1]), dtype="<f8")
    inter[:, 0::2] = M.real
    inter[:, 1::2] = M.imag
    if fmt == "bin":
        inter.tofile(str(path))
    elif fmt == "txt":
        np.savetxt(str(path), inter, fmt="%.17g")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_covariance(path: str | Path, fmt: str = "bin", dim: int | None = None) -> np.ndarray:
    if fmt == "bin":
        flat = np.fromfile(str(path), dtype="<f8")
        n = dim if dim is not None else int(round(np.sqrt(flat.size / 2)))
        inter = flat.reshape(n, 2 * n)
    elif fmt == "txt":
        inter = np.atleast_2d(np.loadtxt(str(path)))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return inter[:, 0::2] + 1j * inter[:, 1::2]


def covariances_for(geoms: Sequence[UserGeometry], array: ArrayConfig) -> list[CovarianceMatrix]:
    """One-ring covariances for a list of users, sharing results for repeated geometries."""
    cache: dict[tuple[float, float], CovarianceMatrix] = {}
    out = []
    for g in geoms:
        key = (g.azimuth, g.angular_spread)
        if key not in cache:
            cache[key] = one_ring_covariance(g, array)
        out.append(cache[key])
    return out
