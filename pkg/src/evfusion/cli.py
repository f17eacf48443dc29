"""Command line interface.

Subcommands: ``simulate`` (render a scene spec into a dataset),
``reconstruct`` (full pipeline), ``baseline-cf`` (complementary-filter
baseline), ``metrics`` (compare two output directories against each other or
against ground truth), and ``export-flow`` (write the optical flow between
two dataset frames as a .flo file).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as config_mod
from .config import ConfigError, PipelineConfig, load_config
from .dataset import load_dataset, load_sim_spec, simulate_dataset
from .flow import estimate_flow, export_flow
from .metrics import psnr, ssim, write_metrics_csv
from .pipeline import run_baseline_cf, run_pipeline
from .renderer import read_frame_png, read_manifest

_OVERRIDABLE = {
    "beta": float,
    "lambda_sm": float,
    "lambda_r": float,
    "block_size": int,
    "cf_cutoff": float,
    "contrast_step": float,
    "decay": float,
    "splat_gamma": float,
    "seed": int,
}


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file (flags below override it)")
    parser.add_argument("--input", help="dataset directory or simulator spec YAML")
    parser.add_argument("--output", help="output directory")
    for name, typ in _OVERRIDABLE.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.input:
        cfg.input = args.input
    if args.output:
        cfg.output = args.output
    for name in _OVERRIDABLE:
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    return cfg.validate()


def _cmd_simulate(args) -> int:
    spec = load_sim_spec(args.spec)
    out = simulate_dataset(spec, args.output)
    print(f"dataset written to {out}")
    return 0


def _cmd_reconstruct(args) -> int:
    cfg = _resolve_config(args)
    result = run_pipeline(cfg)
    print(f"{len(result.frames)} frames written to {result.output_dir}")
    return 0


def _cmd_baseline_cf(args) -> int:
    cfg = _resolve_config(args)
    result = run_baseline_cf(cfg)
    print(f"{len(result.frames)} frames written to {result.output_dir}")
    return 0


def _cmd_metrics(args) -> int:
    rec = Path(args.reconstruction)
    ref = Path(args.reference)
    rec_entries = read_manifest(rec / "manifest.txt")
    ref_manifest = ref / "manifest.txt"
    if not ref_manifest.exists():
        ref_manifest = ref / "frames.txt"
    ref_entries = read_manifest(ref_manifest)
    ref_dir = ref / "frames" if (ref / "frames").is_dir() else ref
    ref_by_time = {round(ts, 9): name for name, ts in ref_entries}
    rows = []
    for idx, (name, ts) in enumerate(rec_entries):
        key = round(ts, 9)
        if key not in ref_by_time:
            continue
        a = read_frame_png(rec / "frames" / name, ts)
        b = read_frame_png(ref_dir / ref_by_time[key], ts)
        rows.append((idx, ts, args.method, psnr(a, b), ssim(a, b)))
    write_metrics_csv(args.output, rows)
    print(f"{len(rows)} rows written to {args.output}")
    return 0


def _cmd_export_flow(args) -> int:
    data = load_dataset(args.input)
    i, j = args.frame, args.frame + 1
    if j >= len(data.frames):
        raise SystemExit(f"dataset has {len(data.frames)} frames; cannot use pair ({i}, {j})")
    flow = estimate_flow(data.frames[i], data.frames[j], levels=args.levels, iterations=args.iterations)
    export_flow(args.output, flow)
    print(f"flow written to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evfusion",
        description="Reconstruct temporally dense intensity frames from a hybrid "
        "event + frame camera stream.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a scene spec into a dataset directory")
    p.add_argument("spec", help="simulator spec YAML")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("reconstruct", help="run the full reconstruction pipeline")
    _add_config_args(p)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("baseline-cf", help="run the complementary-filter baseline")
    _add_config_args(p)
    p.set_defaults(func=_cmd_baseline_cf)

    p = sub.add_parser("metrics", help="PSNR/SSIM of a reconstruction against a reference")
    p.add_argument("--reconstruction", required=True, help="output dir with manifest.txt")
    p.add_argument("--reference", required=True, help="reference dir (manifest.txt or frames.txt)")
    p.add_argument("--output", required=True, help="CSV path to write")
    p.add_argument("--method", default="pipeline")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("export-flow", help="write optical flow between two dataset frames")
    p.add_argument("--input", required=True, help="dataset directory")
    p.add_argument("--frame", type=int, default=0, help="first frame index of the pair")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--output", required=True, help=".flo path to write")
    p.set_defaults(func=_cmd_export_flow)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
