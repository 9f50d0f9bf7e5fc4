"""Command-line entry point: ``evofuse run ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .data import DataError
from .metrics import MetricsWriteError, emit_metrics
from .prequential import run_prequential
from .runtime import BatchAbortedError
from .serialization import serialize_ensemble

ABLATIONS = {
    "reg": "disable_regularization",
    "aug": "disable_augmentation",
    "single-node": "force_single_node",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evofuse", description="Prequential evolving fuzzy ensemble runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a prequential experiment")
    run.add_argument("--config", help="flat key = value config file")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--dataset", help="CSV file, label in the last column")
    src.add_argument("--synthetic", help="preset name, JSON stream spec file or inline JSON")
    run.add_argument("--labels", type=float, help="label proportion in (0, 1]")
    run.add_argument("--partitions", type=int, help="partition count P")
    run.add_argument("--workers", type=int, help="worker processes")
    run.add_argument("--seed", type=int)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--setting", choices=["large", "small"])
    run.add_argument("--max-batches", type=int)
    run.add_argument("--ablation", action="append", choices=sorted(ABLATIONS), default=[],
                     help="disable a component; may be repeated")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--no-model", action="store_true", help="skip writing model.wsn")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = dict(dataset_path=args.dataset, synthetic=args.synthetic, label_proportion=args.labels,
                     partitions=args.partitions, workers=args.workers, seed=args.seed,
                     batch_size=args.batch_size, setting=args.setting, max_batches=args.max_batches)
    for name in args.ablation:
        overrides[ABLATIONS[name]] = True
    try:
        cfg = load_config(args.config, **overrides)
        result = run_prequential(cfg)
        if not result.trace:
            print("error: stream produced fewer than two batches, nothing was scored", file=sys.stderr)
            return 2
        out = Path(args.out)
        summary = emit_metrics(result.trace, out, cfg.as_dict())
        if not args.no_model:
            (out / "model.wsn").write_bytes(serialize_ensemble(result.ensemble))
    except (ConfigError, DataError, MetricsWriteError, BatchAbortedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    acc = summary["metrics"]["accuracy"]
    print(f"batches scored: {len(result.trace)}  accuracy: {acc['mean']:.4f} +/- {acc['std']:.4f}  "
          f"models: {result.ensemble.size}  rules: {result.ensemble.total_rules()}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
