"""Command-line entry point: simulate, control, fit, compare, plot."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

from . import bench
from .codec_sim import ContentScript, render_script_frames
from .errors import InfeasibleBracketError
from .frameio import load_y4m, write_y4m
from .metrics import sequence_rate_error
from .predictor import FeatureRDPredictor, LambdaGrid, RDSampleSet

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3

def _add_script_flags(p):
    p.add_argument("--n-frames", type=int)
    p.add_argument("--n-scenes", type=int)
    p.add_argument("--drift", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--coupling-gamma", type=float)


def _add_control_flags(p):
    p.add_argument("--lambda-min", type=float)
    p.add_argument("--lambda-max", type=float)
    p.add_argument("--m", type=int, help="lambda grid size")
    p.add_argument("--minigop-size", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--buffer-policy", choices=("persist", "reset"))
    p.add_argument("--ref-refinement", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lambdarc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a content script (and optional Y4M)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", type=Path)
    _add_script_flags(p)
    p.add_argument("--out", type=Path, required=True, help="script JSON path")
    p.add_argument("--y4m", type=Path, help="also render frames to this Y4M file")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)

    p = sub.add_parser("control", help="run one rate-control method on a script")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--script", type=Path, help="script JSON; generated from --seed if absent")
    p.add_argument("--y4m", type=Path, help="pixel frames for the feature predictor")
    p.add_argument("--method", choices=bench.METHODS, default="ours")
    p.add_argument("--predictor", choices=("oracle", "feature"))
    p.add_argument("--predictor-params", type=Path, help="saved feature predictor JSON")
    p.add_argument("--target", type=float, required=True, help="target bpp per frame")
    p.add_argument("--multipass-allocation", choices=("lambda", "uniform"))
    _add_script_flags(p)
    _add_control_flags(p)
    p.add_argument("--out", type=Path, required=True, help="per-frame CSV")

    p = sub.add_parser("fit", help="fit R-lambda / D-lambda models from a samples CSV")
    p.add_argument("samples", type=Path, help="CSV with lambda,bpp,mse[,frame] columns")
    p.add_argument("--out", type=Path, help="write model records as JSON")

    p = sub.add_parser("compare", help="run all methods and write CSV/SVG artifacts")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", type=Path)
    _add_script_flags(p)
    _add_control_flags(p)
    p.add_argument("--targets", type=float, nargs="+", help="bpp-per-frame targets")
    p.add_argument("--methods", nargs="+", choices=bench.METHODS)
    p.add_argument("--predictor", choices=("oracle", "feature"))
    p.add_argument("--multipass-allocation", choices=("lambda", "uniform"))
    p.add_argument("--fluctuation-scope", choices=("first", "all"))
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("plot", help="re-render SVG plots from a compare output directory")
    p.add_argument("dir", type=Path)
    return parser


_CONFIG_KEYS = (
    "n_frames", "n_scenes", "drift", "noise_sigma", "coupling_gamma", "lambda_min",
    "lambda_max", "m", "minigop_size", "max_iters", "tolerance", "buffer_policy",
    "ref_refinement", "targets", "methods", "predictor", "multipass_allocation",
    "fluctuation_scope", "width", "height",
)


def load_config(args) -> bench.ExperimentConfig:
    """Config file values overridden by any explicit command-line flags."""
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    overrides["seed"] = args.seed
    if getattr(args, "target", None) is not None:
        overrides["targets"] = [args.target]
    if args.config is not None:
        return bench.ExperimentConfig.load(args.config, **overrides)
    return bench.ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def cmd_simulate(args):
    cfg = load_config(args)
    script = cfg.script()
    script.save(args.out)
    msg = f"wrote script with {len(script)} frames to {args.out}"
    if args.y4m:
        write_y4m(render_script_frames(script, cfg.width, cfg.height), args.y4m)
        msg += f" and frames to {args.y4m}"
    print(msg)
    return EXIT_OK


def cmd_control(args):
    cfg = load_config(args)
    script = ContentScript.load(args.script) if args.script else cfg.script()
    frames = load_y4m(args.y4m) if args.y4m else None
    predictor = None
    if args.method == "ours" and cfg.predictor == "feature":
        if args.predictor_params:
            predictor = FeatureRDPredictor.load(args.predictor_params)
        else:
            predictor = bench.build_feature_predictor(cfg)
        if frames is None:
            frames = render_script_frames(script, cfg.width, cfg.height)
    n_frames = len(script) if frames is None else min(len(script), len(frames))
    r_tar = cfg.minigop_size * cfg.targets[0]
    lam = None
    if args.method == "fixed":
        lam = bench.anchor_lambda(cfg.codec(script), 0, n_frames, n_frames * cfg.targets[0])
    reports = bench.run_method(args.method, cfg, script, r_tar, predictor, frames,
                               n_frames=n_frames, lam=lam)
    bench.write_report_csv(reports, args.out, sequence_id=f"{args.method}@{cfg.targets[0]:g}")
    dr = [r.delta_r for r in reports]
    print(f"{args.method}: {len(reports)} mini-GOPs, mean dR {sum(dr) / len(dr):.4%}, "
          f"sequence dR {sequence_rate_error(reports):.4%}, "
          f"control calls {sum(r.control_invocations for r in reports)}")
    return EXIT_OK


def cmd_fit(args):
    groups = defaultdict(list)
    with open(args.samples, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"lambda", "bpp", "mse"} <= set(rows[0]):
        raise ValueError("samples CSV needs lambda, bpp and mse columns")
    for row in rows:
        groups[row.get("frame", "0")].append(
            (float(row["lambda"]), float(row["bpp"]), float(row["mse"]))
        )
    out = {}
    for frame, pts in groups.items():
        pts.sort()
        lam, bpp, mse = zip(*pts)
        samples = RDSampleSet(LambdaGrid(lam), bpp, mse)
        out[frame] = samples.to_models().to_record()
    text = json.dumps(out, indent=2)
    if args.out:
        args.out.write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_compare(args):
    cfg = load_config(args)
    summary = bench.run_compare(cfg, args.out)
    for row in summary:
        print(f"{row['method']:>10} @ {row['target_bpp']:<6g} mean dR {row['mean_delta_r']:.4f} "
              f"ctrl/mini-GOP {row['control_invocations_per_minigop']:.1f} "
              f"QF ratio {row['q_f_ratio']:.3f}")
    print(f"artifacts written to {args.out}")
    return EXIT_OK


def cmd_plot(args):
    for path in bench.render_plots(args.dir):
        print(path)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "control": cmd_control,
    "fit": cmd_fit,
    "compare": cmd_compare,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InfeasibleBracketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
