"""Graph-based group scheduling.

Groups are vertices of a weighted digraph whose edge g' -> g carries the
normalised interference e(g', g) = ζ̄_{g'}² Ῡ_{g,g'} / ζ̄_g². The elimination
phase prunes the strongest in-edge of every group whose SIR is below its
threshold, recomputing outer precoders against the surviving neighbours
after every sweep. Mutually surviving edges form the agreement graph, and
a min-degree greedy independent-set colouring of its complement yields
cliques that are scheduled together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .deterministic_equivalent import FixedPointState, deterministic_state, group_sir
from .precoding import GroupProfile, PrecoderSet, design_outer_precoders

__all__ = [
    "InterferenceGraph",
    "AgreementGraph",
    "ScheduleSet",
    "ScheduleResult",
    "edge_weight",
    "build_interference_graph",
    "make_recompute",
    "eliminate",
    "mutual_agreement",
    "color_groups",
    "select_schedule",
    "schedule_groups",
    "check_schedule_sir",
    "db_to_linear",
]


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class InterferenceGraph:
    """Directed interference graph; ``weights[src, dst]`` = e(src, dst).

    `alive` marks edges that survived elimination. `precoders` and `state`
    are the outer precoders and deterministic-equivalent state the current
    weights were computed from, when known.
    """

    weights: np.ndarray
    alive: np.ndarray
    sweeps: int = 0
    deleted: tuple[tuple[int, int, int], ...] = ()
    precoders: PrecoderSet | None = field(default=None, repr=False, compare=False)
    state: FixedPointState | None = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(self.alive))

    def neighbors(self, g: int) -> list[int]:
        """Vertices joined to g by surviving edges in both directions."""
        return np.flatnonzero(self.alive[g] & self.alive[:, g]).tolist()

    def neighbor_sets(self) -> dict[int, list[int]]:
        return {g: self.neighbors(g) for g in range(self.size)}

    def in_edges(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.alive[:, g])

    def sir(self, g: int) -> float:
        """SIR of g against the sources of its surviving in-edges."""
        ins = self.in_edges(g)
        total = float(np.sum(self.weights[ins, g])) if ins.size else 0.0
        return math.inf if total == 0 else 1.0 / total

    def edges(self) -> list[tuple[int, int, float]]:
        src, dst = np.nonzero(self.alive)
        return [(int(s), int(d), float(self.weights[s, d])) for s, d in zip(src, dst)]

    def to_dict(self) -> dict:
        return {
            "vertices": list(range(self.size)),
            "edges": [
                {"source": s, "target": d, "weight": w if math.isfinite(w) else None}
                for s, d, w in self.edges()
            ],
            "sweeps": self.sweeps,
            "deleted": [{"sweep": k, "source": s, "target": d} for k, s, d in self.deleted],
        }


def edge_weight(state: FixedPointState, src: int, dst: int) -> float:
    """e(src, dst); infinite when the victim has no ZF gain left."""
    z_dst = state.zeta2(dst)
    leak = state.zeta2(src) * state.upsilon[(dst, src)]
    if z_dst <= 0:
        return math.inf
    return leak / z_dst


def build_interference_graph(state: FixedPointState, size: int | None = None) -> InterferenceGraph:
    """Complete digraph over the groups of `state` weighted by e(g', g)."""
    n = size if size is not None else max(state.groups) + 1
    W = np.zeros((n, n))
    alive = np.zeros((n, n), dtype=bool)
    for g in state.groups:
        for gp in state.groups:
            if g != gp:
                W[gp, g] = edge_weight(state, gp, g)
                alive[gp, g] = True
    return InterferenceGraph(W, alive, state=state)


Recompute = Callable[[InterferenceGraph], InterferenceGraph]


def make_recompute(profiles: Sequence[GroupProfile], outer_dim: str | int = "full") -> Recompute:
    """Callback that redesigns every outer precoder against its current
    neighbours and refreshes the weights of edges between neighbours only."""

    def recompute(graph: InterferenceGraph) -> InterferenceGraph:
        nbrs = graph.neighbor_sets()
        pre = design_outer_precoders(profiles, nbrs, outer_dim=outer_dim)
        pairs = [(g, gp) for g, ns in nbrs.items() for gp in ns]
        state = deterministic_state(profiles, pre, pairs=pairs)
        W = graph.weights.copy()
        for g, gp in pairs:
            W[gp, g] = edge_weight(state, gp, g)
        return replace(graph, weights=W, precoders=pre, state=state)

    return recompute


def eliminate(
    graph: InterferenceGraph,
    thresholds: float | Sequence[float] | np.ndarray,
    recompute: Recompute | None = None,
) -> InterferenceGraph:
    """Prune in-edges until every group meets its SIR threshold (linear scale).

    Each sweep tests all groups against the weights at the start of the
    sweep; every violating group loses its heaviest surviving in-edge (ties
    go to the smallest source index). `recompute` runs after each sweep
    that deleted something. Stops after a sweep without deletions.
    """
    n = graph.size
    alpha = np.broadcast_to(np.asarray(thresholds, dtype=float), (n,))
    alive = graph.alive.copy()
    deleted = list(graph.deleted)
    sweeps = graph.sweeps
    g = graph
    while True:
        sweeps += 1
        W = g.weights
        cut = []
        for v in range(n):
            ins = np.flatnonzero(alive[:, v])
            if ins.size == 0:
                continue
            total = float(np.sum(W[ins, v]))
            sir = math.inf if total == 0 else 1.0 / total
            if sir < alpha[v]:
                cut.append((int(ins[np.argmax(W[ins, v])]), v))
        for s, v in cut:
            alive[s, v] = False
            deleted.append((sweeps, s, v))
        g = replace(g, alive=alive.copy(), sweeps=sweeps, deleted=tuple(deleted))
        if not cut:
            return g
        if recompute is not None:
            g = recompute(g)


@dataclass(frozen=True)
class AgreementGraph:
    adjacency: np.ndarray

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]

    def complement(self) -> np.ndarray:
        return ~self.adjacency & ~np.eye(self.size, dtype=bool)

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(i.tolist(), j.tolist()))

    def is_clique(self, members: Sequence[int]) -> bool:
        m = list(members)
        sub = self.adjacency[np.ix_(m, m)] | np.eye(len(m), dtype=bool)
        return bool(np.all(sub))


def mutual_agreement(graph: InterferenceGraph) -> AgreementGraph:
    """Undirected edge wherever both directed edges survived."""
    adj = graph.alive & graph.alive.T
    np.fill_diagonal(adj, False)
    return AgreementGraph(adj)


@dataclass(frozen=True)
class ScheduleSet:
    """Colour classes; each class is a clique of the agreement graph."""

    classes: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.classes)

    def color_of(self, g: int) -> int:
        for i, c in enumerate(self.classes):
            if g in c:
                return i
        raise KeyError(g)


def color_groups(agreement: AgreementGraph, rng: np.random.Generator) -> ScheduleSet:
    """Greedy independent-set colouring of the complement of `agreement`.

    Each colour is grown by repeatedly taking a remaining candidate of
    minimum degree (among candidates; ties uniformly at random) and
    discarding its complement-neighbours.
    """
    comp = agreement.complement()
    n = agreement.size
    colored = np.zeros(n, dtype=bool)
    classes = []
    while not colored.all():
        cand = np.flatnonzero(~colored)
        cls = []
        while cand.size:
            deg = comp[np.ix_(cand, cand)].sum(axis=1)
            ties = cand[deg == deg.min()]
            w = int(ties[rng.integers(ties.size)]) if ties.size > 1 else int(ties[0])
            cls.append(w)
            cand = cand[(cand != w) & ~comp[w, cand]]
        colored[cls] = True
        classes.append(tuple(sorted(cls)))
    return ScheduleSet(tuple(classes))


def select_schedule(
    schedules: ScheduleSet,
    weights: np.ndarray | float,
    evaluator: Callable[[tuple[int, ...]], np.ndarray],
    policy: str = "max-utility",
    slot: int = 0,
) -> tuple[int, ...]:
    """Pick the active colour class for one coherence slot.

    `evaluator` maps an active set to the per-user rate vector. Max-utility
    returns the class maximising the weighted sum rate; round-robin cycles
    the classes in order.
    """
    if len(schedules) == 0:
        raise ValueError("no schedules to choose from")
    if policy == "round-robin":
        return schedules.classes[slot % len(schedules)]
    if policy != "max-utility":
        raise ValueError(f"unknown policy {policy!r}")
    utils = [float(np.sum(np.asarray(weights) * evaluator(c))) for c in schedules.classes]
    return schedules.classes[int(np.argmax(utils))]


@dataclass(frozen=True)
class ScheduleResult:
    graph: InterferenceGraph
    agreement: AgreementGraph
    schedules: ScheduleSet
    initial: InterferenceGraph

    def to_dict(self) -> dict:
        return {
            "interference_graph": self.graph.to_dict(),
            "agreement_graph": {
                "vertices": list(range(self.agreement.size)),
                "edges": [list(e) for e in self.agreement.edges()],
            },
            "colors": [list(c) for c in self.schedules.classes],
        }


def initial_graph(profiles: Sequence[GroupProfile], outer_dim: str | int = "full") -> InterferenceGraph:
    """All groups active, every precoder nulling all other groups."""
    n = len(profiles)
    nbrs = {g: [x for x in range(n) if x != g] for g in range(n)}
    pre = design_outer_precoders(profiles, nbrs, outer_dim=outer_dim)
    state = deterministic_state(profiles, pre)
    return replace(build_interference_graph(state, n), precoders=pre)


def schedule_groups(
    profiles: Sequence[GroupProfile],
    alpha: float | Sequence[float],
    rng: np.random.Generator,
    outer_dim: str | int = "full",
    start: InterferenceGraph | None = None,
) -> ScheduleResult:
    """Elimination, agreement graph and colouring for one threshold setting.

    `alpha` is linear. `start` may pass a precomputed initial graph (it does
    not depend on the thresholds).
    """
    g0 = start if start is not None else initial_graph(profiles, outer_dim)
    final = eliminate(g0, alpha, make_recompute(profiles, outer_dim))
    agree = mutual_agreement(final)
    return ScheduleResult(final, agree, color_groups(agree, rng), g0)


def check_schedule_sir(
    state: FixedPointState,
    schedules: ScheduleSet,
    thresholds: float | Mapping[int, float],
) -> dict[int, float]:
    """SIR of every group when its colour class is active; raises if any is below threshold."""
    out = {}
    for cls in schedules.classes:
        for g, s in group_sir(state, cls).items():
            a = thresholds[g] if isinstance(thresholds, Mapping) else thresholds
            if s < a * (1 - 1e-12):
                raise AssertionError(f"group {g} in class {cls} has SIR {s:.4g} < {a:.4g}")
            out[g] = s
    return out
