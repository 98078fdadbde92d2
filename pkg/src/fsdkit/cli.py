"""Command line interface.

Exit codes are a stable contract: 0 success, 1 usage error, 2 I/O or file
format error, 3 computation error.

Heavy imports (numpy and the library modules) happen inside the command
bodies, after --threads is applied: BLAS thread-pool sizes can only be set
through environment variables read when numpy first loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_COMPUTE = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; our contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self.exit_with_usage(message))

    def exit_with_usage(self, message) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return EXIT_USAGE


def _usage(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0.0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _lod(text: str) -> int:
    value = int(text)
    if not 1 <= value <= 12:
        raise argparse.ArgumentTypeError(f"LoD must be in [1, 12], got {text}")
    return value


def _shape_spec(text: str):
    """Parse sphere:R | box:HX,HY,HZ | torus:R,r without touching numpy."""
    kind, sep, rest = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"shape spec needs kind:params, got {text!r}")
    try:
        params = tuple(float(p) for p in rest.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric shape parameters in {text!r}")
    expected = {"sphere": 1, "box": 3, "torus": 2}.get(kind)
    if expected is None:
        raise argparse.ArgumentTypeError(f"unknown shape kind {kind!r} (sphere, box, torus)")
    if len(params) != expected:
        raise argparse.ArgumentTypeError(f"{kind} takes {expected} parameter(s), got {len(params)}")
    if any(p <= 0.0 for p in params):
        raise argparse.ArgumentTypeError(f"shape parameters must be > 0: {text!r}")
    # Mirror the field constructors' canonical-cube bounds so bad sizes fail
    # as usage errors instead of surfacing later as computation errors.
    if kind == "torus":
        fits = params[0] + params[1] <= 1.0
    else:
        fits = max(params) <= 1.0
    if not fits:
        raise argparse.ArgumentTypeError(f"{kind} does not fit the [-1, 1]^3 cube: {text!r}")
    return kind, params


def _make_shape(spec):
    from .fields import BoxField, SphereField, TorusField
    kind, params = spec
    if kind == "sphere":
        return SphereField(params[0])
    if kind == "box":
        return BoxField(params)
    return TorusField(params[0], params[1])


def _read_json_doc(path):
    """Config JSON with parse failures mapped to the I/O-format exit code."""
    from .errors import FormatError
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc


def _apply_threads(threads):
    """Pin BLAS pools before numpy loads; FSD_THREADS is the fallback."""
    if threads is None:
        env = os.environ.get("FSD_THREADS", "")
        threads = int(env) if env.isdigit() else 0
    if threads > 0:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def build_parser() -> _Parser:
    parser = _Parser(prog="fsd", description="SDF surface extraction, pose geometry, "
                                             "losses, metrics, and benchmarking")
    parser.add_argument("--threads", type=_nonneg_int, default=None,
                        help="BLAS threads (0 = auto; FSD_THREADS as fallback)")
    parser.add_argument("--seed", type=_nonneg_int, default=0, help="seed for seeded commands")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="extract iso-surfaces to PLY")
    p.add_argument("--weights", help="FSDW decoder weight file")
    p.add_argument("--shape", action="append", type=_shape_spec, default=[],
                   help="analytic shape sphere:R | box:HX,HY,HZ | torus:R,r (repeatable)")
    p.add_argument("--latent", action="append", default=[], help="latent JSON, one per object")
    p.add_argument("--lod", type=_lod, default=6, help="final octree level (default 6)")
    p.add_argument("--lod-start", type=_lod, default=1, help="initial octree level (default 1)")
    p.add_argument("--prune-k", type=_positive_float, default=1.0,
                   help="prune threshold factor tau = k * edge (default 1)")
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("chamfer", help="thresholded Chamfer loss between two PLY clouds")
    p.add_argument("cloud_a")
    p.add_argument("cloud_b")
    p.add_argument("--epsilon", type=_positive_float, default=0.2)
    p.add_argument("--mode", choices=("clamped", "hinge"), default="clamped")
    p.set_defaults(func=cmd_chamfer)

    p = sub.add_parser("backproject", help="lift a depth PGM to a camera-frame PLY cloud")
    p.add_argument("depth", help="16-bit depth PGM")
    p.add_argument("intrinsics", help="intrinsics JSON {fx, fy, cx, cy}")
    p.add_argument("mask", nargs="?", help="optional mask PGM (nonzero = keep)")
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(func=cmd_backproject)

    p = sub.add_parser("orthogonalize", help="nearest rotation to a 3x3 matrix via SVD")
    p.add_argument("matrix", help="JSON 3x3 matrix (bare or under 'matrix')")
    p.add_argument("--out", help="write rotation JSON here instead of stdout")
    p.set_defaults(func=cmd_orthogonalize)

    p = sub.add_parser("metrics", help="AP suite over prediction/ground-truth record files")
    p.add_argument("preds", help="predictions JSONL")
    p.add_argument("gts", help="ground truth JSONL")
    p.add_argument("--config", help="JSON: samples, seed, iou_thresholds, pose_thresholds, symmetry_axes")
    p.add_argument("--out", help="report JSON path (figure PNG is written alongside)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="dense vs octree vs batched-octree timing")
    p.add_argument("--config", help="benchmark config JSON")
    p.add_argument("--quick", action="store_true", help="small preset for smoke runs")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="--out payload format (figure PNG alongside either)")
    p.add_argument("--out", help="report path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-weights", help="write a seeded random decoder (FSDW)")
    p.add_argument("--out", required=True)
    p.add_argument("--latent-dim", type=int, default=64)
    p.add_argument("--hidden-dim", type=int, default=512)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--activation", choices=("tanh", "none"), default="tanh")
    p.add_argument("--calibrated", action="store_true",
                   help="rescale the field for meaningful octree extraction")
    p.set_defaults(func=cmd_gen_weights)
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_extract(args) -> int:
    if bool(args.weights) == bool(args.shape):
        return _usage("provide exactly one of --weights or --shape")
    if args.shape and args.latent:
        return _usage("--latent only applies with --weights")
    if args.lod_start > args.lod:
        return _usage(f"--lod-start {args.lod_start} exceeds --lod {args.lod}")

    from . import fileio
    from .extraction import ExtractionConfig, extract_batched
    from .weights_io import load_weights

    if args.weights:
        if not args.latent:
            return _usage("--weights requires at least one --latent")
        decoder = load_weights(args.weights)
        fields = [(decoder, fileio.read_latent(p)) for p in args.latent]
    else:
        fields = [_make_shape(s) for s in args.shape]

    cfg = ExtractionConfig(lod_start=args.lod_start, lod_end=args.lod, prune_factor=args.prune_k)
    surfaces = extract_batched(fields, cfg)
    fileio.write_surfaces_ply(args.out, surfaces)
    total = 0
    for i, surface in enumerate(surfaces):
        total += surface.count
        if surface.count:
            print(f"object {i}: {surface.count} points, residual mean "
                  f"{surface.residuals.mean():.3e} max {surface.residuals.max():.3e}")
        else:
            print(f"object {i}: 0 points (no zero crossing survived pruning)")
    print(f"wrote {total} points to {args.out}")
    return EXIT_OK


def cmd_chamfer(args) -> int:
    from . import fileio
    from .losses import ChamferConfig, chamfer_thresholded

    points_a, _, _ = fileio.read_ply(args.cloud_a)
    points_b, _, _ = fileio.read_ply(args.cloud_b)
    mode = "clamped_inlier" if args.mode == "clamped" else "paper_hinge"
    result = chamfer_thresholded(points_a, points_b, ChamferConfig(args.epsilon, mode))
    print(json.dumps({"value": result.value, "term_ab": result.term_ab,
                      "term_ba": result.term_ba, "inliers_ab": result.inliers_ab,
                      "inliers_ba": result.inliers_ba, "epsilon": args.epsilon,
                      "mode": mode}))
    return EXIT_OK


def cmd_backproject(args) -> int:
    from . import fileio
    from .geometry import backproject_depth

    depth, _scale = fileio.read_depth_pgm(args.depth)
    intrinsics = fileio.read_intrinsics(args.intrinsics)
    mask = None
    if args.mask:
        mask_values, _maxval, _ = fileio.read_pgm(args.mask)
        if mask_values.shape != depth.shape:
            return _usage(f"mask {mask_values.shape} does not match depth {depth.shape}")
        mask = mask_values > 0
    cloud = backproject_depth(depth, intrinsics, mask)
    fileio.write_cloud_ply(args.out, cloud)
    print(f"wrote {cloud.shape[0]} points to {args.out}")
    return EXIT_OK


def cmd_orthogonalize(args) -> int:
    from . import fileio
    from .geometry import svd_orthogonalize

    rotation = svd_orthogonalize(fileio.read_matrix3(args.matrix))
    payload = json.dumps({"rotation": rotation.tolist()}, indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(f"wrote rotation to {args.out}")
    else:
        print(payload)
    return EXIT_OK


def cmd_metrics(args) -> int:
    from . import fileio
    from .metrics import evaluate_suite

    preds = fileio.read_pose_records(args.preds)
    gts = fileio.read_pose_records(args.gts)
    options: dict = {"seed": args.seed}
    if args.config:
        doc = _read_json_doc(args.config)
        for key in ("samples", "seed", "symmetry_axes"):
            if key in doc:
                options[key] = doc[key]
        if "iou_thresholds" in doc:
            options["iou_thresholds"] = tuple(doc["iou_thresholds"])
        if "pose_thresholds" in doc:
            options["pose_thresholds"] = tuple((float(d), float(c)) for d, c in doc["pose_thresholds"])
    report = evaluate_suite(preds, gts, **options)
    payload = json.dumps(report, indent=2)
    if args.out:
        out = Path(args.out)
        out.write_text(payload + "\n", encoding="utf-8")
        from .plots import save_metrics_figure
        figure = save_metrics_figure(report, out.with_suffix(".png"))
        for key, value in report.items():
            if isinstance(value, float):
                print(f"{key}: {value:.4f}")
        print(f"wrote report to {out} and figure to {figure}")
    else:
        print(payload)
    return EXIT_OK


def cmd_bench(args) -> int:
    import dataclasses

    from .bench import BenchConfig, report_to_csv, report_to_json, run_benchmark

    if args.config:
        doc = _read_json_doc(args.config)
        cfg = BenchConfig.from_dict({"seed": args.seed, **doc})
    else:
        cfg = BenchConfig(seed=args.seed)
    if args.quick:
        cfg = dataclasses.replace(
            cfg, num_objects=min(cfg.num_objects, 4), lod_end=min(cfg.lod_end, 5),
            dense_resolution=min(cfg.dense_resolution, 32), repetitions=3, warmup=1)

    report = run_benchmark(cfg)
    payload = report_to_csv(report) if args.format == "csv" else report_to_json(report) + "\n"
    if args.out:
        out = Path(args.out)
        out.write_text(payload, encoding="utf-8")
        from .plots import save_bench_figure
        figure = save_bench_figure(report, out.with_suffix(".png"))
        for name, stats in report.methods.items():
            print(f"{name}: median {stats.median_s:.4f}s ({stats.evals} evals, {stats.points} points)")
        for name, value in report.speedups.items():
            print(f"{name}: {value:.2f}x")
        print(f"wrote report to {out} and figure to {figure}")
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def cmd_gen_weights(args) -> int:
    if min(args.latent_dim, args.hidden_dim, args.depth) < 1:
        return _usage("decoder dims must be >= 1")
    from .weights_io import save_weights

    if args.calibrated:
        from .bench import calibrated_decoder
        decoder = calibrated_decoder(args.seed, args.latent_dim, args.hidden_dim, args.depth)
    else:
        from .fields import gen_random_decoder
        decoder = gen_random_decoder(args.seed, args.latent_dim, args.hidden_dim,
                                     args.depth, args.activation)
    blob = save_weights(decoder, args.out)
    print(f"wrote {len(blob)} bytes ({decoder!r}) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    _apply_threads(args.threads)

    from .errors import ComputationError, FormatError
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ComputationError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (ValueError, ArithmeticError) as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
