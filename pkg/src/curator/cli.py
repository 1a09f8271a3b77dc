"""Command-line entry points.

Exit codes: 0 ok, 2 validation failure, 3 state conflict.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import lifecycle
from .clustering import DEFAULT_K_GRID
from .datamodel import BundleError, StateConflictError, validate_bundle
from .metrics import metrics_report, read_performance_csv, skill_upper_bounds
from .projection import ProjectionSpec
from .selection import HistogramSpec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STATE = 3


def _parse_grid(text: str) -> tuple[int, ...]:
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return tuple(range(start, stop + 1, step))
    return tuple(int(p) for p in text.split(","))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curator", description="Lifelong data-curation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an ingestion bundle")
    p.add_argument("bundle", type=Path)

    p = sub.add_parser("advance", help="run one timestep: merge, cluster, select, emit manifest")
    p.add_argument("--state", type=Path, required=True)
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--budget", type=int, default=25000, help="training budget per timestep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pool-budget", type=int, default=None, help="enable Lite mode with this pool budget")
    p.add_argument("--budget-mode", choices=["uniform", "density"], default="uniform")
    p.add_argument("--grid", type=_parse_grid, default=DEFAULT_K_GRID, help="k grid, e.g. 5:50:5 or 5,10,20")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--trim", type=float, default=0.05)
    p.add_argument("--trim-scope", choices=["cluster", "global"], default="cluster")
    p.add_argument("--proj-input-dim", type=int, default=None, help="project oversized gradient vectors at ingest")
    p.add_argument("--proj-output-dim", type=int, default=8192)
    p.add_argument("--proj-seed", type=int, default=0)
    p.add_argument("--dump-scores", action="store_true", help="also write the raw score matrix per timestep")

    p = sub.add_parser("compress", help="permanently compress the committed pool")
    p.add_argument("--state", type=Path, required=True)
    p.add_argument("--pool-budget", type=int, required=True)

    p = sub.add_parser("metrics", help="compute metrics from a performance CSV")
    p.add_argument("--perf", type=Path, required=True)
    p.add_argument("--upper-bounds", default="auto", help="'auto' (per-skill maxima) or a CSV path")

    p = sub.add_parser("report", help="write metrics and selection summaries for a state dir")
    p.add_argument("--state", type=Path, required=True)
    p.add_argument("--perf", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    return parser


def _cmd_validate(args) -> int:
    report = validate_bundle(args.bundle)
    print(report.describe())
    return EXIT_OK if report.ok else EXIT_VALIDATION


def _cmd_advance(args) -> int:
    projection = None
    if args.proj_input_dim is not None:
        projection = ProjectionSpec(
            input_dim=args.proj_input_dim, output_dim=args.proj_output_dim, seed=args.proj_seed
        )
    config = lifecycle.EngineConfig(
        t_budget=args.budget,
        pool_budget=args.pool_budget,
        k_grid=args.grid,
        histogram=HistogramSpec(n_bins=args.bins, trim_fraction=args.trim, trim_scope=args.trim_scope),
        projection=projection,
        budget_mode=args.budget_mode,
        master_seed=args.seed,
        dump_scores=args.dump_scores,
    )
    manifest = lifecycle.advance_timestep(args.state, args.bundle, config)
    print(f"t={manifest.timestep}: selected {len(manifest.entries)} of budget {manifest.budget}")
    print(f"manifest: {args.state / 'manifests' / f't{manifest.timestep:04d}.jsonl'}")
    return EXIT_OK


def _cmd_compress(args) -> int:
    plan = lifecycle.compress_state(args.state, args.pool_budget)
    print(f"removed {len(plan.removals)} samples; pool budget {plan.pool_budget}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    table = read_performance_csv(args.perf)
    if args.upper_bounds == "auto":
        upper = skill_upper_bounds(table)
    else:
        reference = read_performance_csv(args.upper_bounds)
        if reference.skills != table.skills:
            raise ValueError("upper-bound CSV lists different skills")
        upper = skill_upper_bounds(reference)
    print(json.dumps(metrics_report(table, upper), indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_report(args) -> int:
    paths = lifecycle.report(args.state, args.perf, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


_COMMANDS = {
    "validate": _cmd_validate,
    "advance": _cmd_advance,
    "compress": _cmd_compress,
    "metrics": _cmd_metrics,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except BundleError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StateConflictError as exc:
        print(f"state conflict: {exc}", file=sys.stderr)
        return EXIT_STATE


if __name__ == "__main__":
    sys.exit(main())
