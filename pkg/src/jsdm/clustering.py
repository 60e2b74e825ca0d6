"""Correlation clustering of users from their channel covariances.

Users are compared with the degree-of-overlap (DOL) similarity
Tr(R1^H R2) / (‖R1‖_F ‖R2‖_F). Thresholding gives a complete signed
advice graph, which is partitioned by solving the min-disagreement LP
relaxation and rounding it with randomized pivoting.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .channel_model import CovarianceMatrix

__all__ = [
    "AdviceGraph",
    "FractionalSolution",
    "Partition",
    "LPSolveError",
    "dol_similarity",
    "similarity_matrix",
    "build_advice_graph",
    "solve_cluster_lp",
    "round_distances",
    "pivot_cluster",
    "pivot_cluster_runs",
    "disagreement_costs",
    "disagreement_cost",
    "exact_cluster",
    "cluster_users",
    "ROUNDING_A",
    "ROUNDING_B",
]

log = logging.getLogger(__name__)

ROUNDING_A = 0.19
ROUNDING_B = 0.5095
EXACT_MAX_VERTICES = 12
LAZY_THRESHOLD = 60
TRIANGLE_TOL = 1e-9


class LPSolveError(RuntimeError):
    pass


def _as_matrix(R) -> np.ndarray:
    return R.entries if isinstance(R, CovarianceMatrix) else np.asarray(R)


def dol_similarity(R1, R2) -> float:
    """Degree of overlap between two covariance matrices, clamped to [0, 1]."""
    A, B = _as_matrix(R1), _as_matrix(R2)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    na, nb = np.linalg.norm(A), np.linalg.norm(B)
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("zero covariance matrix")
    return float(np.clip(np.real(np.vdot(A, B)) / (na * nb), 0.0, 1.0))


def similarity_matrix(covariances: Sequence) -> np.ndarray:
    """K x K matrix of pairwise DOL similarities."""
    X = np.stack([_as_matrix(c).ravel() for c in covariances])
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("zero covariance matrix")
    S = np.real(X.conj() @ X.T) / np.outer(norms, norms)
    S = np.clip(0.5 * (S + S.T), 0.0, 1.0)
    np.fill_diagonal(S, 1.0)
    return S


@dataclass(frozen=True)
class AdviceGraph:
    """Complete signed graph; ``labels[u, v]`` is +1 or -1 for u != v."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        L = np.asarray(self.labels, dtype=np.int8)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ValueError("labels must be square")
        off = ~np.eye(L.shape[0], dtype=bool)
        if not np.all(np.isin(L[off], (-1, 1))):
            raise ValueError("every pair needs a +1/-1 label")
        if not np.array_equal(L, L.T):
            raise ValueError("labels must be symmetric")
        L = L.copy()
        np.fill_diagonal(L, 0)
        L.setflags(write=False)
        object.__setattr__(self, "labels", L)

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @classmethod
    def from_pairs(cls, size: int, positive: Sequence[tuple[int, int]]) -> "AdviceGraph":
        L = -np.ones((size, size), dtype=np.int8)
        for u, v in positive:
            L[u, v] = L[v, u] = 1
        return cls(L)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return np.triu_indices(self.size, k=1)


def build_advice_graph(S: np.ndarray, threshold: float = 0.95) -> AdviceGraph:
    """Label u ~ v positive iff S[u, v] > threshold (strict)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    S = np.asarray(S, dtype=float)
    L = np.where(S > threshold, 1, -1).astype(np.int8)
    return AdviceGraph(L)


@dataclass(frozen=True)
class FractionalSolution:
    """Symmetric matrix of LP separation values x[u, v] in [0, 1]."""

    x: np.ndarray
    objective: float
    triangle_rows: int = 0
    rounds: int = 1

    def max_triangle_violation(self) -> float:
        return _max_violation(self.x)


def _max_violation(x: np.ndarray) -> float:
    # x_uw - x_uv - x_vw over all triples
    if x.shape[0] < 3:
        return 0.0
    v = x[:, None, :] - x[:, :, None] - x[None, :, :]
    return float(max(v.max(), 0.0))


def _pair_index(n: int) -> np.ndarray:
    idx = -np.ones((n, n), dtype=np.int64)
    iu = np.triu_indices(n, k=1)
    idx[iu] = np.arange(iu[0].size)
    idx[(iu[1], iu[0])] = idx[iu]
    return idx


def _triangle_rows(n: int, triples: np.ndarray, pidx: np.ndarray) -> sp.csr_matrix:
    """Three rows x_ab - x_ac - x_bc <= 0 per triple (one per choice of long side)."""
    if triples.size == 0:
        return sp.csr_matrix((0, n * (n - 1) // 2))
    i, j, k = triples.T
    ij, ik, jk = pidx[i, j], pidx[i, k], pidx[j, k]
    long_ = np.concatenate([ij, ik, jk])
    s1 = np.concatenate([ik, ij, ij])
    s2 = np.concatenate([jk, jk, ik])
    m = long_.size
    rows = np.repeat(np.arange(m), 3)
    cols = np.column_stack([long_, s1, s2]).ravel()
    vals = np.tile([1.0, -1.0, -1.0], m)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n * (n - 1) // 2))


def _all_triples(n: int) -> np.ndarray:
    if n < 3:
        return np.zeros((0, 3), dtype=np.int64)
    return np.array(list(itertools.combinations(range(n), 3)), dtype=np.int64)


def _violated_triples(x: np.ndarray, tol: float) -> np.ndarray:
    n = x.shape[0]
    v = x[:, None, :] - x[:, :, None] - x[None, :, :]  # v[a, b, c] = x_ac - x_ab - x_bc
    a, b, c = np.nonzero(v > tol)
    keep = (a != b) & (b != c) & (a != c)
    tri = np.sort(np.column_stack([a[keep], b[keep], c[keep]]), axis=1)
    if tri.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return np.unique(tri, axis=0)


def _mixed_triples(g: AdviceGraph) -> np.ndarray:
    """Triples with exactly two positive edges, where the LP's constraints bind."""
    L = g.labels
    tri = _all_triples(g.size)
    if tri.size == 0:
        return tri
    i, j, k = tri.T
    pos = (L[i, j] > 0).astype(int) + (L[i, k] > 0) + (L[j, k] > 0)
    return tri[pos == 2]


def solve_cluster_lp(g: AdviceGraph, mode: str = "auto", max_rounds: int = 100) -> FractionalSolution:
    """Min-disagreement LP relaxation over pair variables with triangle inequalities.

    Minimises sum_{+} x_uv + sum_{-} (1 - x_uv) subject to 0 <= x <= 1 and
    x_uw <= x_uv + x_vw. ``mode="full"`` writes every triangle inequality;
    ``"lazy"`` starts from the triangles with two positive edges and adds
    violated ones until none remain; ``"auto"`` goes lazy above 60 vertices.
    """
    n = g.size
    if mode == "auto":
        mode = "lazy" if n > LAZY_THRESHOLD else "full"
    if mode not in ("full", "lazy"):
        raise ValueError(f"unknown LP mode {mode!r}")
    iu = g.pairs()
    npairs = iu[0].size
    if npairs == 0:
        return FractionalSolution(np.zeros((n, n)), 0.0)
    lab = g.labels[iu].astype(float)
    c = np.where(lab > 0, 1.0, -1.0)
    const = float(np.count_nonzero(lab < 0))
    pidx = _pair_index(n)

    triples = _all_triples(n) if mode == "full" else _mixed_triples(g)
    seen = {tuple(t) for t in triples} if mode == "lazy" else None
    rounds = 0
    while True:
        rounds += 1
        A = _triangle_rows(n, triples, pidx)
        res = linprog(
            c,
            A_ub=A if A.shape[0] else None,
            b_ub=np.zeros(A.shape[0]) if A.shape[0] else None,
            bounds=(0.0, 1.0),
            method="highs",
        )
        if res.status != 0:
            raise LPSolveError(f"LP solver failed: {res.message}")
        x = np.zeros((n, n))
        x[iu] = np.clip(res.x, 0.0, 1.0)
        x = x + x.T
        if mode == "full":
            break
        viol = _violated_triples(x, TRIANGLE_TOL)
        new = [t for t in map(tuple, viol) if t not in seen]
        if not new:
            break
        if rounds >= max_rounds:
            raise LPSolveError(f"lazy triangle generation did not settle in {max_rounds} rounds")
        seen.update(new)
        triples = np.vstack([triples, np.array(new, dtype=np.int64)])
        log.debug("lazy LP round %d: added %d triangles", rounds, len(new))
    return FractionalSolution(x, float(res.fun) + const, A.shape[0], rounds)


def _f_plus(x: np.ndarray, a: float, b: float) -> np.ndarray:
    return np.where(x < a, 0.0, np.where(x >= b, 1.0, ((x - a) / (b - a)) ** 2))


def round_distances(
    sol: FractionalSolution | np.ndarray,
    g: AdviceGraph,
    a: float = ROUNDING_A,
    b: float = ROUNDING_B,
) -> np.ndarray:
    """Separation probabilities: f+(x) on positive edges, x itself on negative ones."""
    if not a < b:
        raise ValueError("rounding needs a < b")
    x = sol.x if isinstance(sol, FractionalSolution) else np.asarray(sol, dtype=float)
    p = np.where(g.labels > 0, _f_plus(x, a, b), x)
    np.fill_diagonal(p, 0.0)
    return np.clip(p, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Partition:
    """Cluster label per vertex; clusters numbered by their smallest member."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        lab = np.asarray(self.labels, dtype=np.int64)
        _, first, inv = np.unique(lab, return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        canon = order[inv].reshape(lab.shape)
        canon.setflags(write=False)
        object.__setattr__(self, "labels", canon)

    @classmethod
    def from_clusters(cls, clusters: Sequence[Sequence[int]], size: int | None = None) -> "Partition":
        n = size if size is not None else sum(len(c) for c in clusters)
        lab = -np.ones(n, dtype=np.int64)
        for ci, members in enumerate(clusters):
            for u in members:
                if lab[u] >= 0:
                    raise ValueError(f"vertex {u} appears in two clusters")
                lab[u] = ci
        if np.any(lab < 0):
            raise ValueError("clusters do not cover every vertex")
        return cls(lab)

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def num_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.size else 0

    @property
    def clusters(self) -> list[list[int]]:
        return [np.flatnonzero(self.labels == c).tolist() for c in range(self.num_clusters)]

    def __eq__(self, other: object) -> bool:
        # labels are canonical, so equal partitions have equal label arrays
        if not isinstance(other, Partition):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def __hash__(self) -> int:
        return hash(self.labels.tobytes())


def pivot_cluster(p: np.ndarray, rng: np.random.Generator) -> Partition:
    """One pass of randomized pivoting on separation probabilities `p`.

    A uniformly random remaining vertex w becomes a pivot; every other
    remaining vertex u joins it with probability 1 - p[w, u].
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    labels = np.empty(n, dtype=np.int64)
    remaining = np.arange(n)
    c = 0
    while remaining.size:
        w = remaining[rng.integers(remaining.size)]
        join = rng.random(remaining.size) >= p[w, remaining]
        join[remaining == w] = True
        labels[remaining[join]] = c
        remaining = remaining[~join]
        c += 1
    return Partition(labels)


def pivot_cluster_runs(p: np.ndarray, runs: int, rng: np.random.Generator) -> np.ndarray:
    """`runs` independent pivoting passes at once; returns a (runs, K) label array.

    Each row follows the same rule as `pivot_cluster`: a pivot drawn
    uniformly from the vertices still unassigned in that run, joined by each
    of them with probability 1 - p[w, u].
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    labels = np.full((runs, n), -1, dtype=np.int64)
    remaining = np.ones((runs, n), dtype=bool)
    rows = np.arange(runs)
    for c in range(n):
        live = remaining.any(axis=1)
        if not live.any():
            break
        # uniform pivot among the remaining vertices of each run
        keys = np.where(remaining, rng.random((runs, n)), -1.0)
        w = np.argmax(keys, axis=1)
        join = remaining & (rng.random((runs, n)) >= p[w])
        join[rows, w] = remaining[rows, w]
        labels[join] = c
        remaining &= ~join
    return labels


def disagreement_costs(labels: np.ndarray, g: AdviceGraph) -> np.ndarray:
    """Disagreement cost of every row of a (runs, K) label array."""
    iu, ju = g.pairs()
    lab = g.labels[iu, ju]
    same = labels[:, iu] == labels[:, ju]
    return np.count_nonzero(np.where(lab > 0, ~same, same), axis=1)


def disagreement_cost(part: Partition, g: AdviceGraph) -> int:
    """Negative edges inside clusters plus positive edges across clusters."""
    if part.size != g.size:
        raise ValueError("partition and graph sizes differ")
    same = part.labels[:, None] == part.labels[None, :]
    bad = (same & (g.labels < 0)) | (~same & (g.labels > 0))
    return int(np.count_nonzero(np.triu(bad, k=1)))


def _restricted_growth_strings(n: int) -> np.ndarray:
    """Every set partition of n items as a label array (Bell(n) rows)."""
    rows = np.zeros((1, 1), dtype=np.int8)
    top = np.zeros(1, dtype=np.int8)
    for _ in range(1, n):
        reps = top.astype(np.int64) + 2
        base = np.repeat(rows, reps, axis=0)
        tops = np.repeat(top, reps)
        offs = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
        nxt = offs.astype(np.int8)
        rows = np.column_stack([base, nxt])
        top = np.maximum(tops, nxt)
    return rows


def exact_cluster(g: AdviceGraph, chunk: int = 1 << 16) -> Partition:
    """Minimum-disagreement partition by exhaustive enumeration (K <= 12)."""
    n = g.size
    if n > EXACT_MAX_VERTICES:
        raise ValueError(f"exact clustering is capped at {EXACT_MAX_VERTICES} vertices")
    if n == 0:
        return Partition(np.zeros(0, dtype=np.int64))
    rgs = _restricted_growth_strings(n)
    iu, ju = g.pairs()
    lab = g.labels[iu, ju]
    best_cost, best = None, None
    for s in range(0, rgs.shape[0], chunk):
        blk = rgs[s : s + chunk]
        same = blk[:, iu] == blk[:, ju]
        cost = np.count_nonzero(np.where(lab > 0, ~same, same), axis=1)
        k = int(np.argmin(cost))
        if best_cost is None or cost[k] < best_cost:
            best_cost, best = int(cost[k]), blk[k]
    return Partition(best)


def cluster_users(
    covariances: Sequence,
    threshold: float = 0.95,
    pivot_repeats: int = 32,
    lp_mode: str = "auto",
    rng: np.random.Generator | None = None,
) -> tuple[Partition, dict]:
    """Similarity, advice graph, LP, rounding and best-of-N pivoting.

    Returns the partition and a dict with the LP objective and the chosen
    partition's disagreement cost.
    """
    rng = np.random.default_rng() if rng is None else rng
    S = similarity_matrix(covariances)
    graph = build_advice_graph(S, threshold)
    sol = solve_cluster_lp(graph, lp_mode)
    p = round_distances(sol, graph)
    runs = pivot_cluster_runs(p, max(1, pivot_repeats), rng)
    costs = disagreement_costs(runs, graph)
    k = int(np.argmin(costs))
    best, best_cost = Partition(runs[k]), int(costs[k])
    info = {"lp_objective": sol.objective, "cost": best_cost, "similarity": S, "graph": graph}
    return best, info
