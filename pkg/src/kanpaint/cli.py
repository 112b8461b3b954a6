"""Command-line interface.

Verbs: gen-data, train, inpaint, evaluate, ablate. Exit codes: 0 success,
2 configuration error, 3 data error, 4 checkpoint/config incompatibility.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError, DataError, IncompatibilityError
from .metrics import summary_table
from .workflows import (load_records, run_ablate, run_evaluate, run_gen_data,
                        run_inpaint, run_train)

EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    IncompatibilityError: 4,
}


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "out", None) is not None:
        config.out_dir = str(args.out)
    config.validate()
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kanpaint",
        description="Diffusion inpainting with a spline-activation U-net")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="key-path config file (defaults used otherwise)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", type=Path, default=None,
                       help="override the output directory")

    p = sub.add_parser("gen-data", help="write a synthetic phantom dataset")
    common(p)

    p = sub.add_parser("train", help="train a model and save its checkpoint")
    common(p)

    p = sub.add_parser("inpaint", help="inpaint a dataset with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, default=None,
                   help="dataset directory (defaults to the config's data)")

    p = sub.add_parser("evaluate", help="score predictions against references")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--method", default="kanpaint")
    p.add_argument("--paper-reference", action="store_true",
                   help="append published reference rows (not reproduced "
                        "by this implementation) to the summary table")

    p = sub.add_parser("ablate", help="train and evaluate each listed arch")
    common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            config = _load_config(args)
            out = run_gen_data(config, Path(config.out_dir) / "dataset")
            print(f"wrote dataset to {out}")
        elif args.command == "train":
            config = _load_config(args)
            result = run_train(config)
            print(f"checkpoint: {result.checkpoint_dir}")
            print(f"loss curve: {result.loss_curve_path}")
            print(f"first-epoch loss {result.first_epoch_loss:.6f}, "
                  f"final {result.final_loss:.6f}, "
                  f"{result.seconds:.1f}s")
        elif args.command == "inpaint":
            config = _load_config(args)
            if args.data is not None:
                config.data.source = "dir"
                config.data.dir = str(args.data)
            records = load_records(config)
            out_dir = Path(config.out_dir) / "inpainted"
            results = run_inpaint(config, args.checkpoint, records, out_dir)
            print(f"inpainted {len(results)} task(s) into {out_dir}")
        elif args.command == "evaluate":
            report = run_evaluate(args.pred, args.ref, args.out,
                                  method=args.method,
                                  include_reference=args.paper_reference)
            print(summary_table([report],
                                include_reference=args.paper_reference))
        elif args.command == "ablate":
            config = _load_config(args)
            rows = run_ablate(config)
            print((Path(config.out_dir) / "ablation_table.txt").read_text())
            print(f"{len(rows)} architectures evaluated")
    except (ConfigError, DataError, IncompatibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in EXIT_CODES.items():
            if isinstance(exc, cls):
                return code
    return 0


def entrypoint() -> None:  # console-script shim
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
