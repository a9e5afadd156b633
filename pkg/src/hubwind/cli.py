"""Command-line entry point: ``hubwind <stage> --config run.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys

from hubwind import pipeline
from hubwind.config import load_config


def _common(p):
    p.add_argument("--config", required=True, help="YAML configuration file")
    p.add_argument("--months", help="comma-separated YYYY-MM list (default: all in data)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--force", action="store_true", help="rerun even if outputs are up to date")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hubwind",
                                     description="Hub-height wind downscaling and kriging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "write a synthetic data set to the configured data paths"),
        ("downscale", "quantile-map reanalysis levels onto atlas Weibulls"),
        ("fit-shear", "fit per-station additive shear models"),
        ("fit-spatial", "fit monthly Gaussian-process hyperparameters"),
        ("predict", "krige hub-height speeds at target sites"),
        ("evaluate", "score predictions against farm observations"),
        ("run", "run every stage from downscale to evaluate"),
        ("export-grid", "krige onto a regular lattice"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "simulate":
            p.add_argument("--data-dir", help="output directory (default: beside stations path)")
        if name == "export-grid":
            p.add_argument("--month", required=True)
            p.add_argument("--height", type=float, required=True)
            p.add_argument("--bbox", required=True, help="xmin,ymin,xmax,ymax in km")
            p.add_argument("--spacing", type=float, required=True, help="node spacing in km")
            p.add_argument("--timestamp", help="ISO time of one row; omit for the month mean")
            p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    stage = args.command
    try:
        months = [m.strip() for m in args.months.split(",")] if args.months else None
        cfg = load_config(args.config, months=months, seed=args.seed, threads=args.threads,
                          deterministic=args.deterministic)
        if stage == "simulate":
            pipeline.simulate(cfg, args.data_dir)
        elif stage == "run":
            pipeline.run_pipeline(cfg, force=args.force)
        elif stage == "export-grid":
            bbox = [float(v) for v in args.bbox.split(",")]
            if len(bbox) != 4:
                raise ValueError("--bbox needs four comma-separated numbers")
            out = pipeline.export_grid(cfg, args.month, args.height, bbox, args.spacing,
                                       args.timestamp, args.out)
            print(out)
        else:
            pipeline.run_pipeline(cfg, stages=[stage], force=args.force)
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report with the stage tag
        print(f"error: [{stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
