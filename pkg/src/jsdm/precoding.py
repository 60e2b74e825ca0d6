"""Two-stage (outer/inner) precoding.

Outer precoders come from approximate block diagonalization: each group's
centroid covariance is projected onto the orthogonal complement of the
dominant eigenmodes of its active neighbours, and the strongest projected
modes become the beam directions. Inner precoders are zero-forcing on the
effective channel ``B_g^H H_g``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .channel_model import RANK_TOL, CovarianceMatrix, eigendecompose

__all__ = [
    "GroupProfile",
    "OuterPrecoder",
    "PrecoderSet",
    "InnerPrecoder",
    "IllConditionedError",
    "group_centroid",
    "nullspace_basis",
    "design_outer_precoders",
    "effective_channel",
    "zero_forcing_inner",
    "instantaneous_sinr",
]

NULLSPACE_TOL = 1e-8
MAX_GRAM_COND = 1e12


class IllConditionedError(np.linalg.LinAlgError):
    """Effective-channel Gram matrix too ill-conditioned for zero forcing."""


@dataclass(frozen=True)
class GroupProfile:
    """A user group and its centroid covariance.

    ``streams`` is the requested stream count S_g and ``dominant_modes``
    the number r*_g of centroid eigenvectors other groups null out.
    """

    members: tuple[int, ...]
    centroid: CovarianceMatrix
    streams: int
    dominant_modes: int

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def dominant_basis(self) -> np.ndarray:
        return self.centroid.dominant(self.dominant_modes)


def group_centroid(
    covariances: Sequence[CovarianceMatrix],
    members: Sequence[int] | None = None,
    streams: int | None = None,
    dominant_modes: int | None = None,
) -> GroupProfile:
    """Average the member covariances and eigendecompose the result.

    By default S_g = r*_g = K_g; r*_g is clipped to the centroid rank.
    """
    if len(covariances) == 0:
        raise ValueError("a group needs at least one member")
    dims = {c.dim for c in covariances}
    if len(dims) != 1:
        raise ValueError("member covariances have inconsistent dimensions")
    R = sum(c.entries for c in covariances) / len(covariances)
    cen = CovarianceMatrix.from_matrix(R)
    k = len(covariances)
    s = k if streams is None else int(streams)
    r_star = k if dominant_modes is None else int(dominant_modes)
    if members is None:
        members = range(k)
    return GroupProfile(tuple(int(m) for m in members), cen, s, min(r_star, cen.rank))


@dataclass(frozen=True)
class OuterPrecoder:
    """Outer precoder of one group for a given neighbour set.

    ``streams`` is the number of streams actually served, which may be
    below the group's request when the projected space is too small
    (``deficit`` > 0).
    """

    group: int
    neighbors: tuple[int, ...]
    B: np.ndarray
    projected_eigenvalues: np.ndarray
    nullspace_dim: int
    streams: int
    deficit: int

    @property
    def dim(self) -> int:
        return self.B.shape[1]

    @property
    def starved(self) -> bool:
        return self.deficit > 0

    @property
    def muted(self) -> bool:
        return self.streams == 0


PrecoderSet = dict[int, OuterPrecoder]


def nullspace_basis(Xi: np.ndarray, dim: int, tol: float = NULLSPACE_TOL) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of span(Xi)."""
    if Xi.shape[1] == 0:
        return np.eye(dim, dtype=complex)
    E, s, _ = np.linalg.svd(Xi, full_matrices=True)
    rank = int(np.count_nonzero(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return E[:, rank:]


def select_outer_dim(projected_rank: int, streams: int, mode: str | int) -> int:
    if mode == "full":
        return projected_rank
    if mode == "streams":
        return min(streams, projected_rank)
    return min(int(mode), projected_rank)


def design_outer_precoders(
    groups: Sequence[GroupProfile],
    neighbor_sets: Mapping[int, Sequence[int]],
    outer_dim: str | int = "full",
    tol: float = RANK_TOL,
) -> PrecoderSet:
    """Approximate block diagonalization for every group in `neighbor_sets`.

    For group g, the dominant eigenvectors of its neighbours are stacked,
    g's centroid is projected onto their orthogonal complement and the
    strongest projected eigenmodes are kept. ``outer_dim`` picks b_g:
    ``"full"`` keeps every projected mode above the rank floor,
    ``"streams"`` keeps S_g of them, an integer caps b_g.

    Served streams are min(S_g, b_g - 1): the large-system zero-forcing gain
    m̄_g b_g vanishes when S_g = b_g.
    """
    out: PrecoderSet = {}
    for g, nbrs in neighbor_sets.items():
        prof = groups[g]
        nbrs = tuple(sorted(int(n) for n in nbrs if n != g))
        n_t = prof.centroid.dim
        Xi = np.hstack([groups[n].dominant_basis for n in nbrs]) if nbrs else np.zeros((n_t, 0))
        E0 = nullspace_basis(Xi, n_t)
        cen = prof.centroid
        UE = cen.eigenvectors.conj().T @ E0
        R_hat = (UE.conj().T * cen.eigenvalues) @ UE
        lam_max = cen.eigenvalues[0] if cen.rank else 0.0
        lam, G = np.linalg.eigh(0.5 * (R_hat + R_hat.conj().T))
        lam, G = lam[::-1], G[:, ::-1]
        proj_rank = int(np.count_nonzero(lam > tol * lam_max)) if lam_max > 0 else 0
        b = select_outer_dim(proj_rank, prof.streams, outer_dim)
        served = max(0, min(prof.streams, b - 1))
        B = E0 @ G[:, :b]
        out[g] = OuterPrecoder(
            group=g,
            neighbors=nbrs,
            B=B,
            projected_eigenvalues=lam[:proj_rank].copy(),
            nullspace_dim=E0.shape[1],
            streams=served,
            deficit=prof.streams - served,
        )
    return out


def effective_channel(B: np.ndarray, H: np.ndarray) -> np.ndarray:
    """H̃ = B^H H."""
    B = np.asarray(B)
    H = np.asarray(H)
    if H.ndim == 1:
        H = H[:, None]
    if B.shape[0] != H.shape[0]:
        raise ValueError(f"dimension mismatch: B is {B.shape}, H is {H.shape}")
    return B.conj().T @ H


@dataclass(frozen=True)
class InnerPrecoder:
    P: np.ndarray
    zeta: float

    @property
    def zeta2(self) -> float:
        return self.zeta**2


def zero_forcing_inner(H_eff: np.ndarray, B: np.ndarray) -> InnerPrecoder:
    """P_g = ζ_g H̃ (H̃^H H̃)^{-1}, scaled so that ‖B_g P_g‖_F² = S_g."""
    H_eff = np.atleast_2d(H_eff)
    s = H_eff.shape[1]
    gram = H_eff.conj().T @ H_eff
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > MAX_GRAM_COND:
        raise IllConditionedError(f"effective channel Gram matrix has condition {cond:.3e}")
    P0 = np.linalg.solve(gram.T, H_eff.T).T
    BP = B @ P0
    zeta2 = s / np.real(np.vdot(BP, BP))
    zeta = float(np.sqrt(zeta2))
    return InnerPrecoder(zeta * P0, zeta)


def instantaneous_sinr(
    outer: Mapping[int, np.ndarray],
    inner: Mapping[int, InnerPrecoder],
    channels: Mapping[int, np.ndarray],
    power: float,
    total_streams: int | None = None,
) -> dict[int, np.ndarray]:
    """Per-user SINR of one channel realization with unit noise variance.

    `outer`, `inner` and `channels` are keyed by active group; ``channels[g]``
    is the N_t × K_g matrix H_g. Each stream gets power P/S.
    """
    if total_streams is None:
        total_streams = sum(p.P.shape[1] for p in inner.values())
    scale = power / total_streams if total_streams else 0.0
    V = {g: outer[g] @ inner[g].P for g in inner}
    out = {}
    for g, H in channels.items():
        own = H.conj().T @ V[g]
        sig = np.abs(np.diag(own)) ** 2
        intra = np.sum(np.abs(own) ** 2, axis=1) - sig
        inter = np.zeros_like(sig)
        for gp, Vp in V.items():
            if gp != g:
                inter += np.sum(np.abs(H.conj().T @ Vp) ** 2, axis=1)
        out[g] = scale * sig / (scale * (intra + inter) + 1.0)
    return out
