"""Command-line entry points.

Subcommands:
  test            single image -> JSON report (and optionally a mask PGM)
  calibrate       Monte Carlo FPR/TPR experiment -> CSV
  estimate-noise  isotropic variance from an object-free image
  plot-data       reshape a calibrate CSV into gnuplot-friendly blocks

Exit codes: 0 success, 2 input error, 3 internal tracking/numerics error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .errors import (DegenerateEventError, InputError, SegmentationError,
                     TrackingBugError)
from .graphcut import GraphCutParams
from .harness import ExperimentSpec, rows_to_csv, run_experiment
from .images import LinearPreprocess, NoiseModel, estimate_noise, load_image, save_pgm
from .inference import run_inference
from .threshold import LocalThresholdParams


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seginfer",
        description="Selective p-values for graph-cut and threshold segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_test = sub.add_parser("test", help="test one image's segmentation result")
    p_test.add_argument("--image", required=True, help="PGM (P2/P5) or PNG file")
    p_test.add_argument("--algo", required=True,
                        choices=["gc", "th-global", "th-local"])
    p_test.add_argument("--sigma2", type=float, required=True,
                        help="known/estimated pixel noise variance")
    p_test.add_argument("--window", type=int, default=3,
                        help="local-threshold window size in pixels "
                             "(effective window is the centered odd size)")
    p_test.add_argument("--theta", type=float, default=1.0,
                        help="local-threshold divisor")
    p_test.add_argument("--blur", type=int, default=0,
                        help="Gaussian blur kernel size (0 disables)")
    p_test.add_argument("--blur-sigma", type=float, default=None,
                        help="blur standard deviation (default (size-1)/6)")
    p_test.add_argument("--boundary", choices=["replicate", "zero"],
                        default="replicate")
    p_test.add_argument("--sigma", type=float, default=0.1,
                        help="graph-cut similarity scale")
    p_test.add_argument("--lambda", dest="lam", type=float, default=1.0,
                        help="graph-cut likelihood weight")
    p_test.add_argument("--seeds", default="auto",
                        help='"auto" or "obj1,obj2:bkg1,bkg2" pixel indices')
    p_test.add_argument("--no-normalize", action="store_true",
                        help="keep raw 0..255 values instead of [0,1]")
    p_test.add_argument("--mask-out", default=None,
                        help="write the object mask as a P5 PGM here")
    p_test.add_argument("--out", default=None,
                        help="write the JSON report here instead of stdout")

    p_cal = sub.add_parser("calibrate", help="Monte Carlo FPR/TPR experiment")
    p_cal.add_argument("--experiment", required=True, choices=["fpr", "tpr"])
    p_cal.add_argument("--algo", default="th-local",
                       choices=["gc", "th-global", "th-local"])
    p_cal.add_argument("--trials", type=int, default=2000)
    p_cal.add_argument("--alpha", type=float, default=0.05)
    p_cal.add_argument("--sizes", default="9,25,100",
                       help="comma-separated pixel counts (fpr)")
    p_cal.add_argument("--mus", default="0,0.2,0.4,0.6,0.8,1.0",
                       help="comma-separated mean shifts (tpr)")
    p_cal.add_argument("--seed", type=int, default=0)
    p_cal.add_argument("--window", type=int, default=3)
    p_cal.add_argument("--theta", type=float, default=1.0)
    p_cal.add_argument("--sigma", type=float, default=0.1)
    p_cal.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p_cal.add_argument("--null-sigma2", type=float, default=0.5)
    p_cal.add_argument("--signal-sigma", type=float, default=0.1)
    p_cal.add_argument("--signal-size", type=int, default=20)
    p_cal.add_argument("--signal-block", type=int, default=10)
    p_cal.add_argument("--workers", type=int, default=None)
    p_cal.add_argument("--allow-large-gc", action="store_true",
                       help="lift the graph-cut image-size cap")
    p_cal.add_argument("--out", default=None,
                       help="write CSV here instead of stdout")

    p_noise = sub.add_parser("estimate-noise",
                             help="ML variance from an object-free image")
    p_noise.add_argument("--image", required=True)
    p_noise.add_argument("--no-normalize", action="store_true")

    p_plot = sub.add_parser("plot-data",
                            help="emit gnuplot-ready blocks from a calibrate CSV")
    p_plot.add_argument("--csv", required=True)

    return parser


def _parse_seeds(text: str):
    if text == "auto":
        return "auto"
    try:
        obj_text, bkg_text = text.split(":")
        obj = tuple(int(i) for i in obj_text.split(",") if i)
        bkg = tuple(int(i) for i in bkg_text.split(",") if i)
    except ValueError as exc:
        raise InputError(f'bad --seeds value {text!r}; expected "a,b:c,d"') from exc
    return (obj, bkg)


def _cmd_test(args) -> int:
    img = load_image(args.image, normalize=not args.no_normalize)
    noise = NoiseModel.isotropic(args.sigma2)
    preprocess = None
    if args.blur:
        preprocess = LinearPreprocess.gaussian_blur(
            args.blur, args.blur_sigma, boundary=args.boundary)
    if args.algo == "th-local":
        params = LocalThresholdParams(half_width=max(args.window // 2, 1),
                                      theta=args.theta)
    elif args.algo == "gc":
        params = GraphCutParams(sigma=args.sigma, lam=args.lam,
                                seeds=_parse_seeds(args.seeds))
    else:
        params = None
    report, details = run_inference(img, args.algo, params, noise,
                                    preprocess=preprocess, want_details=True)
    if args.mask_out:
        save_pgm(details.result.mask(details.processed), args.mask_out)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_calibrate(args) -> int:
    spec = ExperimentSpec(
        experiment=args.experiment,
        algo=args.algo,
        sizes=tuple(int(v) for v in args.sizes.split(",") if v),
        mus=tuple(float(v) for v in args.mus.split(",") if v),
        trials=args.trials,
        alpha=args.alpha,
        seed=args.seed,
        null_sigma2=args.null_sigma2,
        signal_sigma=args.signal_sigma,
        signal_size=args.signal_size,
        signal_block=args.signal_block,
        th_half_width=max(args.window // 2, 1),
        th_theta=args.theta,
        gc_sigma=args.sigma,
        gc_lam=args.lam,
        workers=args.workers,
        allow_large_gc=args.allow_large_gc,
    )
    text = rows_to_csv(run_experiment(spec))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_estimate_noise(args) -> int:
    img = load_image(args.image, normalize=not args.no_normalize)
    noise = estimate_noise(img)
    print(f'{{"sigma2": {noise.sigma2!r}}}')
    return 0


def _cmd_plot_data(args) -> int:
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for estimator in ("selective", "naive"):
        print(f"# {estimator}")
        for row in rows:
            print(f'{row["setting"]} {row[estimator]} '
                  f'{row[estimator + "_ci_lo"]} {row[estimator + "_ci_hi"]}')
        print()
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage to stderr itself
        return exc.code if exc.code else 0
    try:
        if args.command == "test":
            return _cmd_test(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        if args.command == "estimate-noise":
            return _cmd_estimate_noise(args)
        if args.command == "plot-data":
            return _cmd_plot_data(args)
        raise InputError(f"unknown command {args.command!r}")
    except (InputError, SegmentationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrackingBugError, DegenerateEventError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
