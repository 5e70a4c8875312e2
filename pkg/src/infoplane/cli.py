"""Batch command-line front end.

Subcommands: ``detect``, ``synth``, ``eval``, ``eval-sweep`` and ``replay``.
Every command writes into a fresh temporary directory next to ``--out`` and
moves the files into place only after all of them were written, so a failed
run leaves no partial outputs. Exit codes: 0 ok, 2 usage or input error,
3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .baseline import BaselineConfig, baseline_detect
from .detector import DetectionResult, DetectorConfig, detect, merge_planes, trial_count
from .evaluation import EvalReport, evaluate, match_and_param_errors
from .fileio import (
    FormatError,
    dumps_json,
    read_image16,
    read_json,
    replace_dir,
    sha256_file,
    write_csv,
    write_image16,
    write_json,
    write_ply,
)
from .geometry import Plane
from .information import InfoContext, Variant, cloud_sigmas
from .partition import PartitionSet, detect_partitioned, grid_partition, load_label_map
from .postprocess import estimate_normals, reassign
from .sensor import (
    KINECT_NOISE,
    Constant,
    DepthImage,
    SensorSpec,
    check_quantization,
    parse_noise,
    resolve_range,
    sensor_from_dict,
    sensor_to_dict,
    unproject,
)
from .synthetic import (
    TWO_PLANE_ANGLES,
    SceneSpec,
    generate,
    scene_from_name,
)

logger = logging.getLogger("infoplane")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3
PLANE_FIELDS = ("rank", "nx", "ny", "nz", "d", "inliers", "reduction_nats")
SWEEP_FIELDS = ("scene", "angle_deg", "sigma_assumed", "method", "seeds", "planes_median",
                "normal_error_deg_median", "distance_error_m_median")


class InputError(Exception):
    """Bad user input: reported with exit code 2."""


# helpers

def _output_dir(out: str):
    final = Path(out)
    parent = final.parent if str(final.parent) else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    return final, tempfile.mkdtemp(prefix=".infoplane-", dir=parent)


def _finish(tmp: str, final: Path) -> None:
    replace_dir(tmp, str(final))
    shutil.rmtree(tmp, ignore_errors=True)


def _input_record(path: str) -> dict:
    return {"path": path, "sha256": sha256_file(path)}


def _plane_rows(result: DetectionResult) -> List[dict]:
    rows = []
    for p in result.planes:
        nx, ny, nz, d = p.plane.as_tuple()
        rows.append({"rank": p.rank, "nx": nx, "ny": ny, "nz": nz, "d": d,
                     "inliers": p.inlier_count, "reduction_nats": p.reduction_nats})
    return rows


def _load_planes(path: str) -> List[Plane]:
    data = read_json(path)
    if isinstance(data, dict) and "planes" in data:
        data = data["planes"]
    try:
        return [Plane.from_coefficients([r["nx"], r["ny"], r["nz"]], r["d"]) for r in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed plane list ({exc})") from None


def _parse_range(text: str) -> List[float]:
    """``a:b:step`` (inclusive) or a comma list."""
    try:
        if ":" in text:
            a, b, s = (float(v) for v in text.split(":"))
            if s <= 0:
                raise ValueError
            n = int(np.floor((b - a) / s + 1e-9)) + 1
            return [a + i * s for i in range(n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"cannot parse range {text!r}") from None


def _strip_out(argv: List[str]) -> List[str]:
    """argv without the output location, so manifests do not depend on it."""
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            out.append(a)
    return out


def _num(v: float):
    return int(v) if float(v).is_integer() else v


# detect

def _detector_config(args) -> DetectorConfig:
    return DetectorConfig(confidence_c=args.confidence, inlier_ratio_r=args.inlier_ratio,
                          max_planes_N=args.max_planes, min_inliers=args.min_inliers, seed=args.seed,
                          refit=not args.no_refit, early_stop_patience=args.patience, trials=args.trials)


def _partition(args, img: DepthImage) -> Optional[PartitionSet]:
    if args.labels and args.grid:
        raise InputError("--labels and --grid are mutually exclusive")
    parts = None
    if args.labels:
        parts = load_label_map(args.labels, img.depth.shape)
    elif args.grid:
        try:
            rows, cols = (int(v) for v in args.grid.lower().split("x"))
        except ValueError:
            raise InputError(f"--grid expects RxC, got {args.grid!r}") from None
        parts = grid_partition(img, rows, cols)
    if parts is None:
        return None
    if args.region_max_planes is not None:
        parts.region_defaults["max_planes_N"] = args.region_max_planes
    if args.region_r is not None:
        parts.region_defaults["inlier_ratio_r"] = args.region_r
    if args.leftover_max_planes is not None:
        parts.leftover["max_planes_N"] = args.leftover_max_planes
    if args.leftover_r is not None:
        parts.leftover["inlier_ratio_r"] = args.leftover_r
    return parts


def cmd_detect(args) -> int:
    for name in ("depth", "intrinsics"):
        if not os.path.isfile(getattr(args, name)):
            raise InputError(f"--{name}: no such file {getattr(args, name)!r}")
    try:
        spec, noise = sensor_from_dict(read_json(args.intrinsics))
    except ValueError as exc:
        raise InputError(f"{args.intrinsics}: {exc}") from None
    if args.epsilon is not None:
        spec = replace(spec, epsilon=args.epsilon)
    if args.range is not None:
        spec = replace(spec, range_R=args.range)
    if args.noise:
        noise = parse_noise(args.noise)
    if noise is None:
        noise = KINECT_NOISE
    img = DepthImage.from_millimeters(read_image16(args.depth))
    parts = _partition(args, img)

    cloud = unproject(img, spec)
    if len(cloud) < 3:
        raise InputError("depth image has fewer than 3 valid pixels")
    R = resolve_range(img, spec)
    ctx = InfoContext.from_range(R, spec.epsilon, noise, Variant(args.variant))
    check_quantization(cloud, noise, spec.epsilon)
    sigmas = cloud_sigmas(cloud, ctx)

    manifest = {
        "command": "detect",
        "version": __version__,
        "argv": args.argv,
        "inputs": {"depth": _input_record(args.depth), "intrinsics": _input_record(args.intrinsics)},
        "sensor": sensor_to_dict(spec, noise),
        "range_R": R,
        "variant": ctx.variant.value,
    }
    if parts is not None and args.labels:
        manifest["inputs"]["labels"] = _input_record(args.labels)

    if args.baseline:
        bcfg = BaselineConfig(args.threshold if args.threshold is not None else float(np.median(sigmas)),
                              args.max_planes, args.trials or trial_count(args.confidence, args.inlier_ratio),
                              args.seed)
        result = baseline_detect(cloud, bcfg, ctx)
        manifest["baseline"] = bcfg.to_dict()
    else:
        cfg = _detector_config(args)
        manifest["detector"] = cfg.to_dict()
        if parts is not None:
            result = detect_partitioned(cloud, parts, ctx, cfg, sigmas)
            manifest["partition"] = parts.to_dict()
        else:
            result = detect(cloud, ctx, cfg, sigmas)
        if not args.no_merge:
            result = merge_planes(result, cloud, ctx, sigmas)
        if args.postprocess:
            nm = estimate_normals(img, spec, args.kernel_radius, args.smooth_sigma)
            result = reassign(result, cloud, nm, ctx, args.angle_tol, sigmas)
            manifest["postprocess"] = {"kernel_radius": args.kernel_radius,
                                       "smooth_sigma_px": args.smooth_sigma, "angle_tol_deg": args.angle_tol}
    manifest["phi_trace"] = list(result.phi_trace)
    manifest["info"] = result.info.to_dict()
    manifest["audit"] = result.audit

    final, tmp = _output_dir(args.out)
    try:
        rows = _plane_rows(result)
        write_json(os.path.join(tmp, "planes.json"), rows)
        write_csv(os.path.join(tmp, "planes.csv"), rows, PLANE_FIELDS)
        write_image16(os.path.join(tmp, "labels.pgm"), cloud.label_image(result.mask.labels))
        write_ply(os.path.join(tmp, "cloud.ply"), cloud.points, result.mask.labels)
        write_json(os.path.join(tmp, "manifest.json"), manifest)
        _finish(tmp, final)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print(f"{result.plane_count} plane(s), phi {result.info.total_nats:.1f} nats -> {final}")
    return EXIT_OK


# synth

def _scene_params(args) -> dict:
    name = args.scene.lower()
    p = {}
    if name == "twoplane" and args.angle is not None:
        p["intersection_angle_deg"] = args.angle
    if name == "sinusoid":
        if args.freqs:
            p["frequencies"] = tuple(_parse_range(args.freqs))
        if args.amplitude is not None:
            p["amplitude"] = args.amplitude
    if args.distance is not None:
        p["distance"] = args.distance
    return p


def _scene_spec(args):
    try:
        kind = scene_from_name(args.scene, **_scene_params(args))
    except (ValueError, TypeError) as exc:
        raise InputError(str(exc)) from None
    w, h = (640, 480) if args.full_size else (args.width, args.height)
    sigma = args.sigma
    if sigma is None:
        sigma = 0.0 if args.scene.lower() in ("sinusoid", "tjunction") else 0.005
    return SceneSpec(kind, width=w, height=h, noise_sigma=sigma, seed=args.seed)


def cmd_synth(args) -> int:
    spec = _scene_spec(args)
    img, gt = generate(spec)
    ext = "png" if args.format == "png" else "pgm"
    final, tmp = _output_dir(args.out)
    try:
        write_image16(os.path.join(tmp, f"depth.{ext}"), img.to_millimeters())
        write_image16(os.path.join(tmp, "gt_mask.pgm"), gt.label_image(img.depth.shape))
        write_json(os.path.join(tmp, "gt_planes.json"), [p.to_dict() for p in gt.planes])
        if args.intrinsics_out:
            sensor = SensorSpec(0.01, spec.intrinsics)
            noise = Constant(spec.noise_sigma) if spec.noise_sigma > 0 else None
            write_json(os.path.join(tmp, "intrinsics.json"), sensor_to_dict(sensor, noise))
        _finish(tmp, final)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print(f"{args.scene}: {len(gt.planes)} plane(s) -> {final}")
    return EXIT_OK


# eval

def cmd_eval(args) -> int:
    for path in filter(None, [args.pred, args.gt, args.pred_planes, args.gt_planes]):
        if not os.path.isfile(path):
            raise InputError(f"no such file {path!r}")
    pred = read_image16(args.pred).astype(np.int64)
    gt = read_image16(args.gt).astype(np.int64)
    if pred.shape != gt.shape:
        raise InputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    pp = _load_planes(args.pred_planes) if args.pred_planes else None
    gp = _load_planes(args.gt_planes) if args.gt_planes else None
    rep = evaluate(pred, gt, pp, gp, ignore_outliers=args.ignore_outliers)
    sys.stdout.write(rep.to_json())
    if args.out:
        final, tmp = _output_dir(args.out)
        try:
            Path(tmp, "eval.json").write_text(dumps_json(rep.to_dict()), encoding="utf-8")
            write_csv(os.path.join(tmp, "eval.csv"), [rep.csv_row()], EvalReport.CSV_FIELDS)
            _finish(tmp, final)
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
    return EXIT_OK


def _median_errors(pred, gt_planes):
    e = match_and_param_errors(pred, gt_planes)
    if not e:
        return float("nan"), float("nan")
    return (float(np.mean([x.normal_error_deg for x in e])), float(np.mean([x.distance_error_m for x in e])))


def sweep_rows(scene: str, angles, sigmas, seeds: int, true_sigma: float, include_baseline: bool,
               cfg: DetectorConfig, epsilon: float = 0.01) -> List[dict]:
    """Median plane errors per (angle, assumed sigma, method) over ``seeds`` runs."""
    rows = []
    for ang in angles:
        runs = []
        for seed in range(seeds):
            params = {"intersection_angle_deg": ang} if scene == "twoplane" else {}
            spec = SceneSpec(scene_from_name(scene, **params), noise_sigma=true_sigma, seed=seed)
            img, gt = generate(spec)
            sensor = SensorSpec(epsilon, spec.intrinsics)
            runs.append((seed, unproject(img, sensor), resolve_range(img, sensor), gt))
        for sig in sigmas:
            for method in ["ours"] + (["baseline"] if include_baseline else []):
                errs, counts = [], []
                for seed, cloud, R, gt in runs:
                    ctx = InfoContext.from_range(R, epsilon, Constant(sig))
                    if method == "ours":
                        res = detect(cloud, ctx, replace(cfg, seed=seed))
                    else:
                        res = baseline_detect(cloud, BaselineConfig(sig, cfg.max_planes_N, cfg.n_trials, seed), ctx)
                    errs.append(_median_errors([p.plane for p in res.planes], gt.planes))
                    counts.append(res.plane_count)
                e = np.array(errs)
                rows.append({"scene": scene, "angle_deg": _num(ang) if scene == "twoplane" else "",
                             "sigma_assumed": sig, "method": method, "seeds": seeds,
                             "planes_median": float(np.median(counts)),
                             "normal_error_deg_median": float(np.median(e[:, 0])),
                             "distance_error_m_median": float(np.median(e[:, 1]))})
                logger.info("%s angle=%s sigma=%g %s: %s", scene, ang, sig, method, rows[-1])
    return rows


def cmd_eval_sweep(args) -> int:
    scene = args.scene.lower()
    if scene not in ("twoplane", "staircase", "tetra", "sinusoid"):
        raise InputError(f"unknown scene {args.scene!r}")
    angles = _parse_range(args.angles) if scene == "twoplane" else [0.0]
    sigmas = _parse_range(args.sigmas)
    if not sigmas or any(s <= 0 for s in sigmas):
        raise InputError("--sigmas must be positive")
    if args.seeds < 1:
        raise InputError("--seeds must be >= 1")
    cfg = DetectorConfig(max_planes_N=args.max_planes, refit=not args.no_refit)
    rows = sweep_rows(scene, angles, sigmas, args.seeds, args.true_sigma, not args.no_baseline, cfg)
    manifest = {"command": "eval-sweep", "version": __version__, "argv": args.argv,
                "detector": cfg.to_dict(), "true_sigma": args.true_sigma, "seeds": args.seeds}
    final, tmp = _output_dir(args.out)
    try:
        write_csv(os.path.join(tmp, "sweep.csv"), rows, SWEEP_FIELDS)
        write_json(os.path.join(tmp, "manifest.json"), manifest)
        _finish(tmp, final)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    print(f"{len(rows)} row(s) -> {final}")
    return EXIT_OK


# replay

def cmd_replay(args) -> int:
    if not os.path.isfile(args.manifest):
        raise InputError(f"no such file {args.manifest!r}")
    m = read_json(args.manifest)
    if not isinstance(m, dict) or "argv" not in m:
        raise InputError(f"{args.manifest}: not a run manifest")
    for name, rec in sorted(m.get("inputs", {}).items()):
        if not os.path.isfile(rec["path"]):
            raise InputError(f"input {name} missing: {rec['path']}")
        if sha256_file(rec["path"]) != rec["sha256"]:
            raise InputError(f"input {name} changed since the run: {rec['path']}")
    return main(_strip_out(list(m["argv"])) + ["--out", args.out])


# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="infoplane", description="Information-based plane detection for depth images.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="detect planes in a depth image")
    d.add_argument("--depth", required=True, help="16-bit PGM/PNG depth in millimeters (0 = invalid)")
    d.add_argument("--intrinsics", required=True, help="JSON {fx, fy, cx, cy, epsilon_m, range_m?, noise?}")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--noise", help="const:<s> | prop:<alpha> | quad:<a>,<b>,<z0> (default: sensor file, else Kinect)")
    d.add_argument("--epsilon", type=float, help="override quantisation step (m)")
    d.add_argument("--range", type=float, help="override operating range R (m)")
    d.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.DEPTH_IMAGE.value)
    d.add_argument("--max-planes", type=int, default=8)
    d.add_argument("--confidence", type=float, default=0.99)
    d.add_argument("--inlier-ratio", type=float, default=0.25)
    d.add_argument("--min-inliers", type=int, default=3)
    d.add_argument("--patience", type=int, default=2)
    d.add_argument("--trials", type=int)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--no-refit", action="store_true")
    d.add_argument("--no-merge", action="store_true")
    d.add_argument("--labels", help="16-bit PGM/PNG region map, 0 = leftover")
    d.add_argument("--grid", help="rectangular partition RxC, e.g. 2x1")
    d.add_argument("--region-max-planes", type=int)
    d.add_argument("--region-r", type=float)
    d.add_argument("--leftover-max-planes", type=int)
    d.add_argument("--leftover-r", type=float)
    d.add_argument("--postprocess", action="store_true", help="normal-guided pixel reassignment")
    d.add_argument("--angle-tol", type=float, default=10.0)
    d.add_argument("--kernel-radius", type=int, default=1)
    d.add_argument("--smooth-sigma", type=float, default=1.0)
    d.add_argument("--baseline", action="store_true", help="run threshold RANSAC instead")
    d.add_argument("--threshold", type=float, help="baseline inlier distance (default: median sigma)")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("synth", help="render a synthetic scene")
    s.add_argument("scene", help="staircase | tetra | sinusoid | twoplane | tjunction")
    s.add_argument("--out", required=True)
    s.add_argument("--angle", type=float, help="twoplane intersection angle (deg)")
    s.add_argument("--freqs", help="sinusoid frequencies, e.g. 0,2,10,100")
    s.add_argument("--amplitude", type=float)
    s.add_argument("--distance", type=float)
    s.add_argument("--sigma", type=float, help="depth noise (m); default 0.005, 0 for sinusoid/tjunction")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=160)
    s.add_argument("--height", type=int, default=120)
    s.add_argument("--full-size", action="store_true", help="640x480")
    s.add_argument("--format", choices=["pgm", "png"], default="pgm")
    s.add_argument("--intrinsics-out", action="store_true", help="also write intrinsics.json")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="compare predicted and ground-truth masks/planes")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--pred-planes")
    e.add_argument("--gt-planes")
    e.add_argument("--ignore-outliers", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("eval-sweep", help="median plane errors over seeds, ours and baseline")
    w.add_argument("scene", help="twoplane | staircase | tetra | sinusoid")
    w.add_argument("--angles", default=f"{TWO_PLANE_ANGLES[0]}:{TWO_PLANE_ANGLES[-1]}:10")
    w.add_argument("--sigmas", default="0.002,0.005,0.010")
    w.add_argument("--true-sigma", type=float, default=0.005)
    w.add_argument("--seeds", type=int, default=20)
    w.add_argument("--max-planes", type=int, default=8)
    w.add_argument("--no-refit", action="store_true")
    w.add_argument("--no-baseline", action="store_true")
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_eval_sweep)

    r = sub.add_parser("replay", help="re-run a detect/eval-sweep manifest after checking input hashes")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_replay)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = _strip_out(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - last resort
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
