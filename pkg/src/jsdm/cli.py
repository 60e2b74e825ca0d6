"""Command-line entry point.

Exit codes: 0 on success, 1 for an invalid config or arguments, 2 for a
numerical failure (the failing stage is printed on stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .clustering import (
    AdviceGraph,
    Partition,
    build_advice_graph,
    disagreement_cost,
    pivot_cluster,
    round_distances,
    solve_cluster_lp,
)
from .config import NAMED_CONFIGS, ConfigError, ScenarioConfig, load_config, save_config
from .scheduler import db_to_linear, initial_graph, schedule_groups, select_schedule
from .sim_harness import (
    _COLOR,
    ActiveSetEvaluator,
    StageError,
    _channel_stage,
    _cluster_stage,
    _json_default,
    _rng,
    build_profiles,
    sweep,
    validate_deterministic_equivalent,
)

log = logging.getLogger("jsdm")


def _parse_grid(text: str) -> tuple[float, ...]:
    """``"lo:hi:step"`` or a comma-separated list."""
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ConfigError("grid step must be positive")
        n = int(round((hi - lo) / step))
        return tuple(lo + i * step for i in range(n + 1))
    return tuple(float(v) for v in text.split(",") if v.strip())


def _load(args) -> ScenarioConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = NAMED_CONFIGS[getattr(args, "name", None) or "desk"]
    over = {}
    for key in ("dol_threshold", "pivot_repeats", "lp_mode", "seed", "policy", "drops", "mc_trials",
                "num_antennas", "num_users", "output_dir"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    if getattr(args, "alpha_db", None) is not None:
        over["alpha_db"] = (args.alpha_db,)
    if getattr(args, "alpha_grid", None):
        over["alpha_db"] = _parse_grid(args.alpha_grid)
    if getattr(args, "snr_db", None):
        over["snr_db"] = _parse_grid(args.snr_db)
    if not over:
        return cfg
    try:
        return cfg.replace(**over)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _emit(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=1, default=_json_default)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _emit_compact(obj, path: str | None) -> None:
    text = json.dumps(obj)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _read_matrix(path: str) -> np.ndarray:
    M = np.loadtxt(path, ndmin=2)
    if M.shape[0] != M.shape[1]:
        raise ConfigError(f"matrix in {path} is not square")
    return M


def _graph_from_matrix(M: np.ndarray, threshold: float) -> AdviceGraph:
    """Signed matrices are advice graphs; anything else is a similarity matrix."""
    off = M[~np.eye(M.shape[0], dtype=bool)]
    if np.any(off < 0):
        if not np.all(np.isin(off, (-1.0, 1.0))):
            raise ConfigError("advice matrix entries must be +1 or -1")
        L = M.astype(np.int8)
        np.fill_diagonal(L, 0)
        return AdviceGraph(L)
    return build_advice_graph(M, threshold)


def cmd_generate(args) -> int:
    cfg = _load(args)
    if args.output:
        save_config(cfg, args.output)
    else:
        print(yaml.safe_dump(cfg.to_dict(), sort_keys=False), end="")
    return 0


def cmd_cluster(args) -> int:
    cfg = _load(args)
    if args.matrix:
        g = _graph_from_matrix(_read_matrix(args.matrix), cfg.dol_threshold)
        try:
            sol = solve_cluster_lp(g, mode=cfg.lp_mode)
            p = round_distances(sol, g)
            rng = np.random.default_rng([cfg.seed, 0, 1])
            parts = [pivot_cluster(p, rng) for _ in range(cfg.pivot_repeats)]
        except (ArithmeticError, RuntimeError, ValueError) as e:
            raise StageError("clustering", e) from e
        part = min(parts, key=lambda q: disagreement_cost(q, g))
    else:
        _, covs = _channel_stage(cfg, args.drop)
        part = _cluster_stage(cfg, args.drop, covs)
    _emit_compact(part.clusters, args.output)
    return 0


def cmd_schedule(args) -> int:
    cfg = _load(args)
    _, covs = _channel_stage(cfg, args.drop)
    if args.partition:
        clusters = json.loads(Path(args.partition).read_text())
        try:
            part = Partition.from_clusters(clusters, size=len(covs))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad partition file: {e}") from e
    else:
        part = _cluster_stage(cfg, args.drop, covs)
    profiles = build_profiles(covs, part, cfg.dominant_modes)
    power = float(db_to_linear(args.snr))
    out = {"config_hash": cfg.hash(), "seed": cfg.seed, "drop": args.drop, "clusters": part.clusters,
           "snr_db": args.snr, "policy": cfg.policy, "schedules": []}
    try:
        start = initial_graph(profiles, cfg.outer_dim)
        for ai, alpha_db in enumerate(cfg.alpha_db):
            res = schedule_groups(
                profiles, float(db_to_linear(alpha_db)), _rng(cfg, args.drop, _COLOR, ai), cfg.outer_dim,
                start=start,
            )
            ev = ActiveSetEvaluator(
                profiles, len(covs), neighbors=res.graph.neighbor_sets(), nulling=cfg.nulling,
                outer_dim=cfg.outer_dim, precoders=res.graph.precoders, state=res.graph.state,
            )
            chosen = select_schedule(res.schedules, 1.0, lambda c: ev.user_rates(c, power), cfg.policy)
            entry = {"alpha_db": alpha_db, **res.to_dict(), "selected": list(chosen)}
            out["schedules"].append(entry)
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError, ValueError) as e:
        raise StageError("scheduling", e) from e
    _emit(out, args.output)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    result = sweep(cfg)
    csv_path, json_path = result.write(cfg.output_dir, args.stem)
    for r in result.rows:
        a = "" if r["alpha_db"] is None else f" alpha={r['alpha_db']:g} dB"
        print(f"snr={r['snr_db']:6.1f} dB  {r['method']:<14s} sum_rate={r['sum_rate']:8.3f}  "
              f"jain={r['jain']:.3f}{a}")
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_validate(args) -> int:
    if not args.config and not args.name:
        args.name = "validate"
    cfg = _load(args)
    counts = [int(v) for v in args.antennas.split(",")] if args.antennas else None
    try:
        recs = validate_deterministic_equivalent(cfg, antenna_counts=counts)
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError, ValueError) as e:
        raise StageError("validation", e) from e
    for r in recs:
        print(f"N_t={r.num_antennas:4d} active={r.active} group={r.group} "
              f"de={r.de_sinr:.4g} mc={r.mc_sinr:.4g}±{r.mc_stderr:.2g} rel_err={r.rel_error:.3%}")
    if args.output:
        _emit([r.to_dict() for r in recs], args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jsdm", description="Two-stage massive MIMO beamforming with user grouping and group scheduling.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, clustering=False, scheduling=False):
        p.add_argument("--config", help="YAML scenario file")
        p.add_argument("--name", choices=sorted(NAMED_CONFIGS), help="named base scenario")
        p.add_argument("--seed", type=int)
        if clustering:
            p.add_argument("--dol-threshold", dest="dol_threshold", type=float)
            p.add_argument("--pivot-repeats", dest="pivot_repeats", type=int)
            p.add_argument("--lp-mode", dest="lp_mode", choices=("auto", "full", "lazy"))
        if scheduling:
            p.add_argument("--alpha-db", dest="alpha_db", type=float, help="single SIR threshold in dB")
            p.add_argument("--alpha-grid", dest="alpha_grid", help="threshold grid 'lo:hi:step' or 'a,b,c' in dB")
            p.add_argument("--policy", choices=("max-utility", "round-robin"))

    p = sub.add_parser("generate", help="write a scenario config")
    common(p, clustering=True, scheduling=True)
    p.add_argument("--num-antennas", dest="num_antennas", type=int)
    p.add_argument("--num-users", dest="num_users", type=int)
    p.add_argument("--drops", type=int)
    p.add_argument("--snr-db", dest="snr_db", help="SNR grid 'lo:hi:step' or list in dB")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("cluster", help="group users, emit a JSON list of clusters")
    common(p, clustering=True)
    p.add_argument("--matrix", help="text file with a similarity matrix or a +1/-1 advice matrix")
    p.add_argument("--drop", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("schedule", help="schedule a partition, emit graphs and colours as JSON")
    common(p, clustering=True, scheduling=True)
    p.add_argument("--partition", help="JSON list of clusters (default: cluster the drop)")
    p.add_argument("--drop", type=int, default=0)
    p.add_argument("--snr", type=float, default=20.0, help="SNR in dB used to pick the max-utility colour")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("sweep", help="SNR sweep over drops, emit CSV and JSON")
    common(p, clustering=True, scheduling=True)
    p.add_argument("--drops", type=int)
    p.add_argument("--snr-db", dest="snr_db")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--stem", default="sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate-de", help="Monte Carlo check of the large-system SINR")
    common(p)
    p.add_argument("--antennas", help="comma-separated antenna counts, e.g. 16,64")
    p.add_argument("--mc-trials", dest="mc_trials", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 1
    except (OSError, yaml.YAMLError) as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 1
    except StageError as e:
        print(f"numerical failure in stage '{e.stage}': {e.cause}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
