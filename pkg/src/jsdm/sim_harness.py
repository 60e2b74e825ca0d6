"""End-to-end experiments: drops, clustering, scheduling, SNR sweeps and
Monte Carlo validation of the deterministic equivalents."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel_model import (
    CovarianceMatrix,
    UserGeometry,
    covariances_for,
    drop_users,
    sample_channels,
    ula,
)
from .clustering import Partition, cluster_users
from .config import ScenarioConfig
from .deterministic_equivalent import FixedPointState, asymptotic_sinr, deterministic_state, group_sir
from .precoding import (
    GroupProfile,
    IllConditionedError,
    PrecoderSet,
    design_outer_precoders,
    effective_channel,
    group_centroid,
    instantaneous_sinr,
    zero_forcing_inner,
)
from .scheduler import ScheduleResult, db_to_linear, initial_graph, schedule_groups

__all__ = [
    "StageError",
    "MethodMetrics",
    "DropReport",
    "jain_index",
    "drop_geometry",
    "build_profiles",
    "ActiveSetEvaluator",
    "run_drop",
    "run_covariances",
    "baseline_no_scheduling",
    "sweep",
    "SweepResult",
    "validate_deterministic_equivalent",
    "METHODS",
]

log = logging.getLogger(__name__)

METHODS = ("max-utility", "round-robin", "no-scheduling")

# independent random streams per drop
_GEOMETRY, _PIVOT, _COLOR, _CHANNEL = range(4)


class StageError(RuntimeError):
    """A pipeline stage failed; `stage` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def jain_index(rates) -> float:
    """Jain's fairness index (sum R)^2 / (K sum R^2)."""
    r = np.asarray(rates, dtype=float)
    if r.size == 0 or np.any(r < 0):
        raise ValueError("rates must be a nonempty nonnegative vector")
    sq = float(np.sum(r**2))
    if sq == 0:
        raise ValueError("Jain index undefined for an all-zero rate vector")
    return float(np.sum(r) ** 2 / (r.size * sq))


def _jain_or_nan(rates: np.ndarray) -> float:
    # every group muted (dimensional bottleneck): fairness is undefined, not 0 or 1
    return jain_index(rates) if np.any(rates > 0) else math.nan


def _rng(cfg: ScenarioConfig, drop: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, drop, stream, *extra])


def drop_geometry(cfg: ScenarioConfig, rng: np.random.Generator) -> list[UserGeometry]:
    half = np.deg2rad(cfg.sector_halfwidth_deg)
    spread = np.deg2rad(cfg.angular_spread_deg)
    if cfg.hotspots == 0:
        return drop_users(cfg.num_users, half, spread, rng)
    width = np.deg2rad(cfg.hotspot_width_deg)
    centers = rng.uniform(-half + width, half - width, size=cfg.hotspots)
    which = np.arange(cfg.num_users) % cfg.hotspots
    az = centers[which] + rng.uniform(-width, width, size=cfg.num_users)
    return [UserGeometry(float(a), spread) for a in az]


def build_profiles(
    covs: Sequence[CovarianceMatrix], partition: Partition, dominant_modes: str | int = "group_size"
) -> list[GroupProfile]:
    out = []
    for members in partition.clusters:
        r_star = None if dominant_modes == "group_size" else int(dominant_modes)
        out.append(group_centroid([covs[k] for k in members], members=members, dominant_modes=r_star))
    return out


class ActiveSetEvaluator:
    """Deterministic-equivalent rates for candidate active sets.

    With ``nulling="agreement"`` each active group's outer precoder nulls
    all its neighbours in `neighbors` (typically the agreement graph);
    with ``"active"`` it nulls only the other active groups.
    """

    def __init__(
        self,
        profiles: Sequence[GroupProfile],
        num_users: int,
        neighbors: dict[int, list[int]] | None = None,
        nulling: str = "agreement",
        outer_dim: str | int = "full",
        precoders: PrecoderSet | None = None,
        state: FixedPointState | None = None,
    ):
        self.profiles = list(profiles)
        self.num_users = num_users
        self.neighbors = neighbors
        self.nulling = nulling
        self.outer_dim = outer_dim
        self._fixed = (precoders, state) if state is not None else None
        self._cache: dict[tuple[int, ...], tuple[PrecoderSet, FixedPointState]] = {}

    def state_for(self, active: Sequence[int]) -> tuple[PrecoderSet, FixedPointState]:
        key = tuple(sorted(active))
        if self._fixed is not None and self.nulling == "agreement":
            pre, state = self._fixed
            # the elimination state only holds leakage between neighbours
            if all((g, gp) in state.upsilon for g in key for gp in key if g != gp):
                return self._fixed
        if key not in self._cache:
            if self.nulling == "agreement" and self.neighbors is not None:
                nbrs = {g: self.neighbors[g] for g in key}
            else:
                nbrs = {g: [x for x in key if x != g] for g in key}
            pre = design_outer_precoders(self.profiles, nbrs, outer_dim=self.outer_dim)
            pairs = [(g, gp) for g in key for gp in key if g != gp]
            self._cache[key] = (pre, deterministic_state(self.profiles, pre, pairs=pairs))
        return self._cache[key]

    def group_sinr(self, active: Sequence[int], power: float) -> dict[int, float]:
        _, state = self.state_for(active)
        sinr = asymptotic_sinr(state, active, power)
        return {g: sinr[g] for g in active}

    def group_rates(self, active: Sequence[int], power: float) -> dict[int, float]:
        """Sum rate of each active group: served streams x log2(1 + SINR)."""
        _, state = self.state_for(active)
        return {g: state.streams(g) * math.log2(1.0 + s) for g, s in self.group_sinr(active, power).items()}

    def user_rates(self, active: Sequence[int], power: float) -> np.ndarray:
        """Per-user rate vector; the group rate is shared evenly among its members."""
        rates = np.zeros(self.num_users)
        for g, r in self.group_rates(active, power).items():
            members = list(self.profiles[g].members)
            rates[members] = r / len(members)
        return rates

    def sir(self, active: Sequence[int]) -> dict[int, float]:
        _, state = self.state_for(active)
        return group_sir(state, active)


@dataclass
class MethodMetrics:
    sum_rate: float
    jain: float
    user_rates: np.ndarray
    colors: int
    group_sir: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sum_rate": self.sum_rate,
            "jain": None if math.isnan(self.jain) else self.jain,
            "colors": self.colors,
            "user_rates": self.user_rates.tolist(),
            "group_sir_db": {str(g): _db(s) for g, s in self.group_sir.items()},
        }


def _db(x: float) -> float | None:
    if x == math.inf:
        return None
    return 10 * math.log10(x) if x > 0 else -math.inf


@dataclass
class DropReport:
    """Metrics of one user drop.

    ``scheduled[alpha_db][policy][snr_db]`` and ``baseline[snr_db]`` hold
    per-SNR metrics; ``schedules[alpha_db]`` the scheduling outcome.
    """

    drop: int
    seed: int
    config_hash: str
    partition: Partition
    baseline: dict[float, MethodMetrics]
    scheduled: dict[float, dict[str, dict[float, MethodMetrics]]]
    schedules: dict[float, ScheduleResult]
    azimuths: list[float]

    @property
    def num_groups(self) -> int:
        return self.partition.num_clusters

    def to_dict(self) -> dict:
        return {
            "drop": self.drop,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "azimuths_deg": [math.degrees(a) for a in self.azimuths],
            "clusters": self.partition.clusters,
            "baseline": {str(s): m.to_dict() for s, m in self.baseline.items()},
            "scheduled": {
                str(a): {p: {str(s): m.to_dict() for s, m in per.items()} for p, per in pol.items()}
                for a, pol in self.scheduled.items()
            },
            "schedules": {str(a): r.to_dict() for a, r in self.schedules.items()},
        }


def _stage(name: str):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except (ArithmeticError, np.linalg.LinAlgError, RuntimeError, ValueError) as e:
                raise StageError(name, e) from e

        return inner

    return wrap


@_stage("channel")
def _channel_stage(cfg: ScenarioConfig, drop: int):
    geoms = drop_geometry(cfg, _rng(cfg, drop, _GEOMETRY))
    covs = covariances_for(geoms, ula(cfg.num_antennas, cfg.antenna_spacing))
    return geoms, covs


@_stage("clustering")
def _cluster_stage(cfg: ScenarioConfig, drop: int, covs):
    part, _ = cluster_users(
        covs, cfg.dol_threshold, cfg.pivot_repeats, cfg.lp_mode, rng=_rng(cfg, drop, _PIVOT)
    )
    return part


def baseline_no_scheduling(
    cfg: ScenarioConfig, profiles: Sequence[GroupProfile], num_users: int | None = None
) -> dict[float, MethodMetrics]:
    """All groups always active, each precoder nulling every other group."""
    n = len(profiles)
    k = num_users if num_users is not None else sum(p.size for p in profiles)
    everyone = tuple(range(n))
    ev = ActiveSetEvaluator(profiles, k, nulling="active", outer_dim=cfg.outer_dim)
    sir = ev.sir(everyone)
    out = {}
    for snr in cfg.snr_db:
        P = float(db_to_linear(snr))
        rates = ev.user_rates(everyone, P)
        out[snr] = MethodMetrics(float(rates.sum()), _jain_or_nan(rates), rates, 1, sir)
    return out


@_stage("scheduling")
def _schedule_stage(cfg: ScenarioConfig, drop: int, profiles, num_users):
    start = initial_graph(profiles, cfg.outer_dim)
    scheduled: dict[float, dict[str, dict[float, MethodMetrics]]] = {}
    results: dict[float, ScheduleResult] = {}
    for ai, alpha_db in enumerate(cfg.alpha_db):
        res = schedule_groups(
            profiles, float(db_to_linear(alpha_db)), _rng(cfg, drop, _COLOR, ai), cfg.outer_dim, start=start
        )
        results[alpha_db] = res
        ev = ActiveSetEvaluator(
            profiles,
            num_users,
            neighbors=res.graph.neighbor_sets(),
            nulling=cfg.nulling,
            outer_dim=cfg.outer_dim,
            precoders=res.graph.precoders,
            state=res.graph.state,
        )
        classes = res.schedules.classes
        n_col = len(classes)
        sirs: dict[int, float] = {}
        for c in classes:
            sirs.update(ev.sir(c))
        per_policy: dict[str, dict[float, MethodMetrics]] = {"max-utility": {}, "round-robin": {}}
        for snr in cfg.snr_db:
            P = float(db_to_linear(snr))
            slot_rates = [ev.user_rates(c, P) for c in classes]
            sums = [float(r.sum()) for r in slot_rates]
            rr = sum(slot_rates) / n_col
            per_policy["round-robin"][snr] = MethodMetrics(float(np.mean(sums)), _jain_or_nan(rr), rr, n_col, sirs)
            # unit weights: utility is the sum rate; the best class is served every slot
            best = int(np.argmax(sums))
            mu = slot_rates[best]
            per_policy["max-utility"][snr] = MethodMetrics(sums[best], _jain_or_nan(mu), mu, n_col, sirs)
        scheduled[alpha_db] = per_policy
    return scheduled, results


def run_drop(cfg: ScenarioConfig, drop: int = 0) -> DropReport:
    """Run the whole pipeline on one user drop."""
    geoms, covs = _channel_stage(cfg, drop)
    return run_covariances(cfg, covs, drop, azimuths=[g.azimuth for g in geoms])


def run_covariances(
    cfg: ScenarioConfig,
    covs: Sequence[CovarianceMatrix],
    drop: int = 0,
    azimuths: Sequence[float] | None = None,
) -> DropReport:
    """Clustering, baseline and scheduling for given user covariances."""
    part = _cluster_stage(cfg, drop, covs)
    profiles = build_profiles(covs, part, cfg.dominant_modes)
    base = _stage("baseline")(baseline_no_scheduling)(cfg, profiles, len(covs))
    scheduled, results = _schedule_stage(cfg, drop, profiles, len(covs))
    return DropReport(
        drop=drop,
        seed=cfg.seed,
        config_hash=cfg.hash(),
        partition=part,
        baseline=base,
        scheduled=scheduled,
        schedules=results,
        azimuths=list(azimuths) if azimuths is not None else [],
    )


@dataclass
class SweepResult:
    """Aggregated sweep; `rows` has one entry per SNR x method."""

    config: ScenarioConfig
    rows: list[dict]
    drops: list[DropReport]

    def value(self, method: str, snr_db: float, metric: str = "sum_rate") -> float:
        for r in self.rows:
            if r["method"] == method and r["snr_db"] == snr_db:
                return r[metric]
        raise KeyError((method, snr_db))

    def write(self, out_dir: str | Path, stem: str = "sweep") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["snr_db", "method", "metric", "value", "alpha_db"])
            for r in self.rows:
                for metric in ("sum_rate", "jain"):
                    w.writerow([r["snr_db"], r["method"], metric, repr(r[metric]), r["alpha_db"]])
        side = {
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "seed": self.config.seed,
            "drop_seeds": [[self.config.seed, d.drop] for d in self.drops],
            "rows": [{k: _finite_or_none(v) for k, v in r.items()} for r in self.rows],
            "drops": [d.to_dict() for d in self.drops],
        }
        with open(json_path, "w") as fh:
            json.dump(side, fh, indent=1, default=_json_default)
        return csv_path, json_path


def _finite_or_none(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(type(o))


def _mean_defined(values: Sequence[float]) -> tuple[float, int]:
    """Mean over the non-NaN entries and how many there were."""
    v = np.asarray(values, dtype=float)
    ok = ~np.isnan(v)
    return (float(v[ok].mean()) if ok.any() else math.nan), int(ok.sum())


def sweep(cfg: ScenarioConfig, drops: Sequence[DropReport] | None = None) -> SweepResult:
    """Mean sum rate and Jain index per SNR and method over `cfg.drops` drops.

    For the scheduled methods the threshold is chosen per SNR as the grid
    value with the largest mean sum rate. Drops whose rate vector is all
    zero have no Jain index; ``jain_drops`` counts the drops averaged.
    """
    reports = list(drops) if drops is not None else [run_drop(cfg, d) for d in range(cfg.drops)]
    rows = []
    for snr in cfg.snr_db:
        for policy in ("max-utility", "round-robin"):
            best_alpha, best = None, None
            for alpha in cfg.alpha_db:
                mean_rate = float(np.mean([r.scheduled[alpha][policy][snr].sum_rate for r in reports]))
                if best is None or mean_rate > best:
                    best_alpha, best = alpha, mean_rate
            jain, defined = _mean_defined([r.scheduled[best_alpha][policy][snr].jain for r in reports])
            colors = float(np.mean([r.scheduled[best_alpha][policy][snr].colors for r in reports]))
            rows.append(
                {"snr_db": snr, "method": policy, "alpha_db": best_alpha, "sum_rate": best, "jain": jain,
                 "jain_drops": defined, "colors": colors}
            )
        jain, defined = _mean_defined([r.baseline[snr].jain for r in reports])
        rows.append(
            {
                "snr_db": snr,
                "method": "no-scheduling",
                "alpha_db": None,
                "sum_rate": float(np.mean([r.baseline[snr].sum_rate for r in reports])),
                "jain": jain,
                "jain_drops": defined,
                "colors": 1.0,
            }
        )
    rows.sort(key=lambda r: (r["snr_db"], METHODS.index(r["method"])))
    return SweepResult(cfg, rows, reports)


# --------------------------------------------------------------------------
# Monte Carlo cross-check of the deterministic equivalents


@dataclass
class ValidationRecord:
    num_antennas: int
    active: tuple[int, ...]
    group: int
    de_sinr: float
    mc_sinr: float
    mc_stderr: float
    trials: int

    @property
    def rel_error(self) -> float:
        if self.de_sinr == 0:
            return 0.0 if self.mc_sinr == 0 else math.inf
        return abs(self.mc_sinr - self.de_sinr) / self.de_sinr

    def to_dict(self) -> dict:
        return {
            "num_antennas": self.num_antennas,
            "active": list(self.active),
            "group": self.group,
            "de_sinr": self.de_sinr,
            "mc_sinr": self.mc_sinr,
            "mc_stderr": self.mc_stderr,
            "rel_error": self.rel_error,
            "trials": self.trials,
        }


def two_group_profiles(
    num_antennas: int,
    azimuths_deg: Sequence[float],
    users_per_group: int,
    spread_deg: float,
    spacing: float = 0.5,
) -> tuple[list[GroupProfile], list[CovarianceMatrix]]:
    """Groups of co-located users, one group per azimuth."""
    arr = ula(num_antennas, spacing)
    covs = [
        covariances_for([UserGeometry(np.deg2rad(a), np.deg2rad(spread_deg))], arr)[0] for a in azimuths_deg
    ]
    profiles = [
        group_centroid([c] * users_per_group, members=range(i * users_per_group, (i + 1) * users_per_group))
        for i, c in enumerate(covs)
    ]
    return profiles, covs


def monte_carlo_sinr(
    profiles: Sequence[GroupProfile],
    user_covs: Sequence[CovarianceMatrix],
    precoders: PrecoderSet,
    active: Sequence[int],
    power: float,
    trials: int,
    rng: np.random.Generator,
) -> dict[int, np.ndarray]:
    """Instantaneous per-user SINR over `trials` channel draws.

    ``user_covs[g]`` is the covariance of every user of group g. Draws with
    an ill-conditioned effective Gram matrix are redrawn.
    """
    active = list(active)
    S = sum(precoders[g].streams for g in active)
    out = {g: np.zeros((trials, precoders[g].streams)) for g in active}
    outer = {g: precoders[g].B for g in active}
    t = 0
    while t < trials:
        H = {g: sample_channels(user_covs[g], precoders[g].streams, rng) for g in active}
        try:
            inner = {g: zero_forcing_inner(effective_channel(outer[g], H[g]), outer[g]) for g in active}
        except IllConditionedError:
            continue
        s = instantaneous_sinr(outer, inner, H, power, S)
        for g in active:
            out[g][t] = s[g]
        t += 1
    return out


def validate_deterministic_equivalent(
    cfg: ScenarioConfig,
    antenna_counts: Sequence[int] | None = None,
    azimuths_deg: Sequence[float] = (-40.0, 40.0),
    power_db: float | None = None,
) -> list[ValidationRecord]:
    """Compare large-system SINR to Monte Carlo means.

    For every antenna count, two groups of ``num_users // 2`` co-located
    users are evaluated with both groups active and each group alone.
    """
    counts = list(antenna_counts) if antenna_counts is not None else [cfg.num_antennas]
    power = float(db_to_linear(cfg.snr_db[0] if power_db is None else power_db))
    per_group = max(1, cfg.num_users // len(azimuths_deg))
    n_groups = len(azimuths_deg)
    records = []
    for n_t in counts:
        profiles, covs = two_group_profiles(
            n_t, azimuths_deg, per_group, cfg.angular_spread_deg, cfg.antenna_spacing
        )
        sets = [tuple(range(n_groups))] + [(g,) for g in range(n_groups)]
        for si, active in enumerate(sets):
            nbrs = {g: [x for x in active if x != g] for g in active}
            pre = design_outer_precoders(profiles, nbrs, outer_dim=cfg.outer_dim)
            state = deterministic_state(profiles, pre)
            de = asymptotic_sinr(state, active, power)
            rng = np.random.default_rng([cfg.seed, n_t, _CHANNEL, si])
            mc = monte_carlo_sinr(profiles, covs, pre, active, power, cfg.mc_trials, rng)
            for g in active:
                vals = mc[g].mean(axis=1)
                records.append(
                    ValidationRecord(
                        n_t, tuple(active), g, float(de[g]), float(vals.mean()),
                        float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0,
                        cfg.mc_trials,
                    )
                )
    return records
