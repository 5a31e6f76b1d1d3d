"""Command-line entry point.

Subcommands: project, decalib, calibrate, evaluate, bench, gen-synthetic.
Exit codes are a stable scripting contract: 0 success, 2 usage/parse
failure, 3 domain failure. Every run echoes its resolved configuration and
ends stdout with a single machine-parseable ``RESULT:`` line.

Flags take human units (degrees, meters); conversion to radians happens at
this boundary only. CALIB_SEED and CALIB_THREADS provide environment
defaults for --seed and --threads.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import calibrator, harness, ingest
from .calibrator import CalibrationError, ConsistencyWeights, SearchConfig
from .geometry import Extrinsic, rotation_error_deg

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DOMAIN = 3


def _env_int(name: str, fallback: int) -> int:
    value = os.environ.get(name)
    if value is None:
        return fallback
    try:
        return int(value)
    except ValueError:
        raise SystemExit(EXIT_USAGE)


def _echo_config(args: argparse.Namespace) -> None:
    skip = {"func", "command"}
    for key in sorted(vars(args)):
        if key not in skip:
            print(f"config {key}={getattr(args, key)}")


def _search_config(args) -> SearchConfig:
    return SearchConfig(
        coarse_rot_step=args.coarse_step,
        coarse_rot_range=args.coarse_range,
        fine_rot_step=args.fine_rot_step,
        fine_trans_step=args.fine_trans_step,
        fine_range_rot=args.fine_rot_range,
        fine_range_trans=args.fine_trans_range,
        min_points_per_mask=args.min_points,
    )


def _weights(args) -> ConsistencyWeights:
    return ConsistencyWeights(args.w_reflect, args.w_normal, args.w_segment)


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--coarse-step", type=float, default=5.0, help="coarse rotation step (deg)")
    p.add_argument("--coarse-range", type=float, default=25.0, help="coarse rotation range (deg)")
    p.add_argument("--fine-rot-step", type=float, default=0.5)
    p.add_argument("--fine-trans-step", type=float, default=0.05)
    p.add_argument("--fine-rot-range", type=float, default=5.0)
    p.add_argument("--fine-trans-range", type=float, default=0.3)
    p.add_argument("--min-points", type=int, default=20, help="minimum projected points per mask")
    p.add_argument("--w-reflect", type=float, default=1.0 / 3.0)
    p.add_argument("--w-normal", type=float, default=1.0 / 3.0)
    p.add_argument("--w-segment", type=float, default=1.0 / 3.0)


def _add_attribute_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--knn", type=int, default=10, help="neighbors for normal estimation")
    p.add_argument("--cluster-radius", type=float, default=0.5)
    p.add_argument("--min-cluster-pts", type=int, default=5)


def _load_scene(args) -> calibrator.Scene:
    return ingest.load_scene(
        args.manifest,
        k=args.knn,
        radius=args.cluster_radius,
        min_pts=args.min_cluster_pts,
    )


def cmd_project(args) -> int:
    scene_paths = ingest.load_manifest(args.manifest)
    image = ingest.read_image(scene_paths["image"])
    with open(scene_paths["cloud"], "rb") as f:
        points = ingest.read_velodyne_bin(f.read())
    with open(scene_paths["calib"]) as f:
        calib = ingest.read_kitti_calib(f.read())
    k = ingest.kitti_intrinsics(calib, image.shape[1], image.shape[0])
    h = Extrinsic.load(args.extrinsic)

    _, drawn = ingest.render_overlay(image, points[:, :3], k, h, path=args.out)
    print(f"projected {points.shape[0]} points, {drawn} visible")
    if drawn == 0:
        print("error: no points project into the image", file=sys.stderr)
        return EXIT_DOMAIN
    print(f"RESULT: visible={drawn} out={args.out}")
    return EXIT_OK


def cmd_decalib(args) -> int:
    h_gt = Extrinsic.load(args.gt)
    spec = harness.DecalibSpec(rot_max=args.rot_max, trans_max=args.trans_max, seed=args.seed)
    phi = harness.sample_decalibration(spec, args.trial)
    h_init = harness.apply_decalibration(h_gt, phi)
    h_init.save(args.out)
    rot_mag = rotation_error_deg(phi.rotation, np.eye(3))
    trans_mag = float(np.linalg.norm(phi.translation))
    print(f"sampled decalibration: rotation {rot_mag:.6g} deg, translation {trans_mag:.6g} m")
    print(f"RESULT: out={args.out} rot_deg={rot_mag:.9g} trans_m={trans_mag:.9g}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _search_config(args)
    w = _weights(args)
    try:
        scene = _load_scene(args)
    except ValueError as e:
        if "mask" in str(e).lower():
            raise CalibrationError(str(e))  # unusable scene, not a usage error
        raise
    h_init = Extrinsic.load(args.init)

    result = calibrator.calibrate(scene, h_init, w, cfg, threads=args.threads)
    result.extrinsic.save(args.out)

    report_lines = [
        f"score={result.score:.9g}",
        f"candidates_evaluated={result.candidates_evaluated}",
        f"extrinsic={args.out}",
    ]
    if scene.gt_extrinsic is not None:
        trans_err, rot_err = harness.evaluate(result.extrinsic, scene.gt_extrinsic)
        report_lines += [f"trans_err_cm={trans_err:.9g}", f"rot_err_deg={rot_err:.9g}"]
        print(f"errors vs ground truth: {trans_err:.4g} cm / {rot_err:.4g} deg")
    if args.report:
        with open(args.report, "w") as f:
            f.write("\n".join(report_lines) + "\n")
    print(f"score {result.score:.9g} after {result.candidates_evaluated} candidates")
    print(f"RESULT: {' '.join(report_lines)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    h_pred = Extrinsic.load(args.pred)
    h_gt = Extrinsic.load(args.gt)
    trans_err, rot_err = harness.evaluate(h_pred, h_gt)
    print(f"{trans_err:.9g},{rot_err:.9g}")
    print(f"RESULT: trans_err_cm={trans_err:.9g} rot_err_deg={rot_err:.9g}")
    return EXIT_OK


def cmd_bench(args) -> int:
    scenes = [_load_scene_from(path, args) for path in args.manifests]
    spec = harness.DecalibSpec(rot_max=args.rot_max, trans_max=args.trans_max, seed=args.seed)

    if args.method == "calibrate":
        cfg = _search_config(args)
        w = _weights(args)
        method = lambda scene, h_init: calibrator.calibrate(scene, h_init, w, cfg).extrinsic
    else:
        method = args.method

    report = harness.run_benchmark(scenes, method, spec, args.trials, threads=args.threads)
    harness.write_report(report, args.out)
    failed = sum(1 for t in report.trials if t.failed)
    print(f"wrote {args.out}: {len(report.trials)} trials, {failed} failed")
    print(
        "RESULT: "
        f"mean_trans_err_cm={report.mean_trans_err_cm:.9g} "
        f"mean_rot_err_deg={report.mean_rot_err_deg:.9g} "
        f"trials={len(report.trials)} failed={failed} out={args.out}"
    )
    return EXIT_OK


def _load_scene_from(path, args):
    return ingest.load_scene(
        path,
        k=args.knn,
        radius=args.cluster_radius,
        min_pts=args.min_cluster_pts,
    )


def cmd_gen_synthetic(args) -> int:
    cfg = ingest.SyntheticSceneConfig(
        seed=args.seed,
        object_count=args.objects,
        points_per_object=args.points,
    )
    manifest = ingest.write_synthetic_scene(cfg, args.out)
    scene = ingest.load_scene(manifest)
    print(f"wrote scene bundle under {args.out}")
    print(
        "RESULT: "
        f"manifest={manifest} points={len(scene.cloud)} "
        f"masks={len(scene.masks)} clusters={scene.cloud.class_count}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidarcam",
        description="LiDAR-camera extrinsic calibration toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = _env_int("CALIB_SEED", 0)
    threads_default = _env_int("CALIB_THREADS", os.cpu_count() or 1)

    p = sub.add_parser("project", help="render a depth-colored projection overlay")
    p.add_argument("manifest")
    p.add_argument("extrinsic", help="extrinsic text file to project with")
    p.add_argument("--out", default="overlay.ppm")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("decalib", help="sample a decalibrated initial extrinsic")
    p.add_argument("gt", help="ground-truth extrinsic text file")
    p.add_argument("--rot-max", type=float, default=25.0, help="per-axis bound (deg)")
    p.add_argument("--trans-max", type=float, default=1.5, help="per-axis bound (m)")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--out", default="h_init.txt")
    p.set_defaults(func=cmd_decalib)

    p = sub.add_parser("calibrate", help="run the consistency-score calibration")
    p.add_argument("manifest")
    p.add_argument("--init", required=True, help="initial extrinsic text file")
    p.add_argument("--out", default="pred.txt")
    p.add_argument("--report", default=None, help="optional key=value report path")
    p.add_argument("--threads", type=int, default=threads_default)
    _add_search_flags(p)
    _add_attribute_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="compare a predicted extrinsic to ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="run the decalibrate-predict-evaluate benchmark")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--method", default="oracle",
                   help="oracle | identity | calibrate | directory of pred_XXXXX.txt")
    p.add_argument("--rot-max", type=float, default=25.0)
    p.add_argument("--trans-max", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--threads", type=int, default=threads_default)
    p.add_argument("--out", default="report.csv")
    _add_search_flags(p)
    _add_attribute_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-synthetic", help="write a synthetic scene bundle")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--points", type=int, default=1200, help="points per object")
    p.add_argument("--out", default="scene")
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _echo_config(args)
    try:
        return args.func(args)
    except CalibrationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
