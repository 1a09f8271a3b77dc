"""CLI: extract statistics bundles from the demonstration model."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .extract import ExtractionConfig, extract_stats, load_dataset, make_demo_dataset


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extractor", description="Ingestion-bundle extractor")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="extract a bundle from a JSONL dataset")
    p.add_argument("--model", default="tiny", help="model preset id")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--layer", choices=["first", "middle", "last", "all"], default="middle")
    p.add_argument("--grad-mode", choices=["backprop", "zero-order"], default="backprop")
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--delim", default="\n")
    p.add_argument("--proj-dim", type=int, default=1024)
    p.add_argument("--proj-seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset-id", default=None)

    p = sub.add_parser("demo-data", help="write a small synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("-n", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "demo-data":
        path = make_demo_dataset(args.out, n=args.n, seed=args.seed)
        print(f"wrote {args.n} samples to {path}")
        return 0

    config = ExtractionConfig(
        model_id=args.model,
        layer=args.layer,
        grad_mode=args.grad_mode.replace("-", "_"),
        n_probes=args.probes,
        eps=args.eps,
        delimiter=args.delim,
        proj_output_dim=args.proj_dim,
        proj_seed=args.proj_seed,
        seed=args.seed,
    )
    samples = load_dataset(args.data)
    dataset_id = args.dataset_id or args.data.stem
    out = extract_stats(samples, config, args.out, dataset_id=dataset_id)
    print(f"extracted {len(samples)} samples to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
