"""Command-line driver: single runs, Monte Carlo sweeps, and self checks."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .channel import geometry_digest, sample_geometry
from .config import ConfigError, SystemConfig
from .harness import (
    RunRecord,
    SweepSpec,
    load_config,
    load_sweep_spec,
    run_scheme,
    run_sweep,
    worker_count,
    write_results,
)
from .schemes import SCHEME_IDS
from .selfcheck import run_all


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manoma",
        description="Movable-antenna NOMA downlink simulator and optimizer",
    )
    parser.add_argument("--version", action="version", version=f"manoma {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run schemes on a single seeded realization")
    run_p.add_argument("--config", help="flat key=value config file")
    run_p.add_argument("--seed", type=int, help="override the config rng seed")
    run_p.add_argument(
        "--schemes", default="NOMA-MA", help=f"comma list from {','.join(SCHEME_IDS)}"
    )
    run_p.add_argument("--out", help="directory for results.csv/manifest/traces")

    sweep_p = sub.add_parser("sweep", help="run a Monte Carlo sweep from a spec file")
    sweep_p.add_argument("--spec", required=True, help="sweep spec file")
    sweep_p.add_argument("--config", help="base config file (spec overrides apply on top)")
    sweep_p.add_argument("--out", help="output directory (overrides spec)")
    sweep_p.add_argument("--seed", type=int, help="override base seed")
    sweep_p.add_argument("--realizations", type=int, help="override realization count")
    sweep_p.add_argument("--schemes", help="override scheme list (comma separated)")

    check_p = sub.add_parser("check", help="run the invariant/bound validation battery")
    check_p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else SystemConfig()
    if args.seed is not None:
        cfg = cfg.with_updates(rng_seed=args.seed)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    geoms = sample_geometry(cfg, np.random.default_rng(cfg.rng_seed))
    print(f"seed {cfg.rng_seed}  channel digest {geometry_digest(geoms)[:16]}")
    records = []
    failed = False
    for scheme in schemes:
        rec = RunRecord("none", 0.0, scheme, 0, digest=geometry_digest(geoms))
        try:
            res = run_scheme(scheme, cfg, geoms)
            rec.throughput_bpshz = res.throughput_bpshz
            rec.runtime_s = res.wall_time_s
            rec.outer_iters = res.outer_iters
            if res.objective_trace:
                rec.trace = list(res.objective_trace)
            rates = " ".join(f"{r:.4f}" for r in res.per_user_rates)
            print(
                f"{scheme:<12} throughput {res.throughput_bpshz:9.4f} bits/s/Hz   "
                f"per-user [{rates}]   {res.wall_time_s:.2f}s"
            )
        except Exception as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            print(f"{scheme:<12} FAILED: {rec.error}")
            failed = True
        records.append(rec)
    if args.out:
        paths = write_results(records, args.out)
        print(f"wrote {paths['results']}")
    return 1 if failed else 0


def _cmd_sweep(args) -> int:
    base = load_config(args.config) if args.config else None
    spec = load_sweep_spec(args.spec, base=base)
    if args.realizations is not None:
        spec = SweepSpec(
            spec.sweep_param, spec.values, spec.schemes, args.realizations, spec.base, spec.out_dir
        )
    if args.schemes is not None:
        schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
        spec = SweepSpec(
            spec.sweep_param, spec.values, schemes, spec.num_realizations, spec.base, spec.out_dir
        )
    out_dir = args.out or spec.out_dir
    seed = args.seed if args.seed is not None else spec.base.rng_seed
    print(
        f"sweep {spec.sweep_param} over {spec.values}: {len(spec.schemes)} schemes x "
        f"{spec.num_realizations} realizations, {worker_count()} workers"
    )
    records = run_sweep(spec, base_seed=seed)
    write_results(records, out_dir, spec=spec)
    failures = [r for r in records if r.error is not None]
    by_cell = {}
    for rec in records:
        if rec.error is None:
            by_cell.setdefault((rec.value, rec.scheme), []).append(rec.throughput_bpshz)
    for (value, scheme), vals in sorted(by_cell.items()):
        print(f"  {spec.sweep_param}={value:g} {scheme:<12} mean {np.mean(vals):8.4f} bits/s/Hz")
    print(f"wrote {out_dir}/results.csv ({len(records) - len(failures)} rows)")
    if failures:
        print(f"{len(failures)} failed cells (see manifest.json)", file=sys.stderr)
        return 1
    return 0


def _cmd_check(args) -> int:
    results = run_all(seed=args.seed)
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_check(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
