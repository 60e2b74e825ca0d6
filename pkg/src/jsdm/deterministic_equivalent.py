"""Large-system deterministic equivalents of the JSDM zero-forcing SINR.

For each group the scalar fixed point

    m̄ = (1/b) tr(R̄ T),   T = ((S/b) R̄ / m̄ + I)^{-1},   R̄ = B^H R B

gives the normalised ZF gain ζ̄² = m̄ b. Cross-group leakage Ῡ_{g,g'} is a
closed form in the converged (m̄_{g'}, T_{g'}) and the cross covariance
B_{g'}^H R_g B_{g'}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .precoding import GroupProfile, OuterPrecoder

__all__ = [
    "FixedPointError",
    "GroupFixedPoint",
    "FixedPointState",
    "solve_fixed_point",
    "interference_term",
    "deterministic_state",
    "asymptotic_sinr",
    "group_sir",
    "user_rate",
]

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000


class FixedPointError(ArithmeticError):
    """The fixed-point iteration diverged or produced an invalid state."""


@dataclass(frozen=True)
class GroupFixedPoint:
    m: float
    T: np.ndarray = field(repr=False)
    R_bar: np.ndarray = field(repr=False)
    streams: int
    dim: int
    iterations: int = 0

    @property
    def zeta2(self) -> float:
        return self.m * self.dim


def _fp_map(lam: np.ndarray, m: float, load: float) -> float:
    # (1/b) tr(R̄ T) evaluated in the eigenbasis of R̄
    return float(np.sum(lam * m / (load * lam + m)) / lam.size)


def solve_fixed_point(
    R_bar: np.ndarray,
    streams: int,
    dim: int | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    m0: float | None = None,
    damping: float | None = None,
) -> tuple[float, np.ndarray]:
    """Solve m̄ = (1/b) tr(R̄ ((S/b) R̄/m̄ + I)^{-1}) by plain iteration.

    Starts from m̄ = tr(R̄)/b unless `m0` is given and stops when the relative
    step drops below `tol`. If the iterate starts oscillating, it falls back
    to damping 0.5. Returns ``(m̄, T)``.
    """
    R_bar = np.asarray(R_bar)
    b = R_bar.shape[0] if dim is None else int(dim)
    if R_bar.shape != (b, b):
        raise ValueError(f"R_bar must be {b}x{b}")
    if streams < 0:
        raise ValueError("streams must be >= 0")
    if streams > b:
        raise ValueError(f"streams ({streams}) exceed the effective dimension ({b})")
    H = 0.5 * (R_bar + R_bar.conj().T)
    lam, Q = np.linalg.eigh(H)
    lam = np.clip(lam, 0.0, None)
    if not np.any(lam > 0):
        raise ValueError("R_bar must be nonzero")
    load = streams / b
    m = float(np.sum(lam) / b) if m0 is None else float(m0)
    step_prev = math.inf
    damp = damping
    for it in range(1, max_iter + 1):
        m_new = _fp_map(lam, m, load)
        if damp:
            m_new = (1 - damp) * m_new + damp * m
        step = abs(m_new - m)
        if m_new <= 0:
            raise FixedPointError(f"fixed point collapsed to m={m_new:.3e}")
        if step / m_new < tol:
            m = m_new
            break
        if damp is None and it > 10 and step > step_prev:
            log.debug("fixed point oscillating at iteration %d, enabling damping", it)
            damp = 0.5
        step_prev = step
        m = m_new
    else:
        raise FixedPointError(
            f"fixed point did not converge in {max_iter} iterations (last relative step {step / m_new:.3e})"
        )
    t = m / (load * lam + m)
    T = (Q * t) @ Q.conj().T
    return m, T


def interference_term(src: GroupFixedPoint, cross: np.ndarray) -> float:
    """Ῡ_{g,g'} for interferer g' (`src`) and cross covariance B_{g'}^H R_g B_{g'}."""
    if src.streams == 0:
        return 0.0
    b, s, m = src.dim, src.streams, src.m
    RT = src.R_bar @ src.T
    num = np.real(np.trace(RT @ cross @ src.T)) / b
    den = 1.0 - (s / b) * np.real(np.trace(RT @ RT)) / (b * m**2)
    if not den > 0:
        raise FixedPointError(f"leakage denominator is non-positive ({den:.3e})")
    n = num / den
    return max(0.0, (s / b) * n / m**2)


@dataclass(frozen=True)
class FixedPointState:
    """Deterministic-equivalent state for a set of outer precoders.

    ``upsilon[(g, gp)]`` is the leakage from interferer gp onto group g.
    Groups whose precoder serves no stream have ζ̄² = 0.
    """

    groups: tuple[int, ...]
    points: Mapping[int, GroupFixedPoint | None]
    upsilon: Mapping[tuple[int, int], float]

    def zeta2(self, g: int) -> float:
        fp = self.points[g]
        return 0.0 if fp is None else fp.zeta2

    def streams(self, g: int) -> int:
        fp = self.points[g]
        return 0 if fp is None else fp.streams


def deterministic_state(
    profiles: Sequence[GroupProfile],
    precoders: Mapping[int, OuterPrecoder],
    pairs: Iterable[tuple[int, int]] | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FixedPointState:
    """Solve every group's fixed point and the leakage for the requested pairs.

    `pairs` are (victim, interferer) tuples; by default all ordered pairs of
    groups in `precoders`.
    """
    points: dict[int, GroupFixedPoint | None] = {}
    for g, pre in precoders.items():
        if pre.muted:
            points[g] = None
            continue
        B = pre.B
        R_bar = B.conj().T @ profiles[g].centroid.low_rank() @ B
        m, T = solve_fixed_point(R_bar, pre.streams, pre.dim, tol=tol, max_iter=max_iter)
        points[g] = GroupFixedPoint(m, T, R_bar, pre.streams, pre.dim)
    if pairs is None:
        pairs = [(g, gp) for g in precoders for gp in precoders if g != gp]
    ups = {}
    for g, gp in pairs:
        src = points[gp]
        if src is None:
            ups[(g, gp)] = 0.0
            continue
        Bp = precoders[gp].B
        cross = Bp.conj().T @ profiles[g].centroid.low_rank() @ Bp
        ups[(g, gp)] = interference_term(src, cross)
    return FixedPointState(tuple(precoders), points, ups)


def _interference(state: FixedPointState, g: int, active: Iterable[int]) -> float:
    return sum(state.zeta2(gp) * state.upsilon[(g, gp)] for gp in active if gp != g)


def asymptotic_sinr(state: FixedPointState, active: Iterable[int], power: float) -> dict[int, float]:
    """Per-group SINR for the active groups; every other group of the state gets 0.

    The per-stream power is P/S with S the number of streams of the active groups.
    """
    active = [g for g in active]
    total = sum(state.streams(g) for g in active)
    scale = power / total if total else 0.0
    out = {g: 0.0 for g in state.groups}
    for g in active:
        num = scale * state.zeta2(g)
        out[g] = num / (scale * _interference(state, g, active) + 1.0) if num > 0 else 0.0
    return out


def group_sir(state: FixedPointState, active: Iterable[int]) -> dict[int, float]:
    """Per-group SIR; ``math.inf`` when a group sees no interference."""
    active = list(active)
    out = {}
    for g in active:
        den = _interference(state, g, active)
        z = state.zeta2(g)
        out[g] = math.inf if den == 0 else z / den
    return out


def user_rate(sinr):
    """log2(1 + SINR) in bits/s/Hz."""
    s = np.asarray(sinr, dtype=float)
    if np.any(s < 0):
        raise ValueError("SINR must be nonnegative")
    r = np.log2(1.0 + s)
    return float(r) if r.ndim == 0 else r
