"""Command-line entry point: extract / eval / synth / losscheck subcommands.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 infeasible generation.
"""
from __future__ import annotations

import argparse
import csv
import glob
import multiprocessing
import os
import sys

from . import fusion, gradcheck, mep, metrics, synth
from .raster import RasterError, read_float_raster, read_semantic_png

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    """key=value config file; keys use the long flag spelling."""
    out = {}
    try:
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}: bad config line {line!r}")
                k, v = line.split("=", 1)
                out[k.strip().replace("-", "_")] = v.strip()
        return out
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e


def _apply_config(args: argparse.Namespace) -> None:
    # precedence: explicit flags > config file > parser defaults
    if not getattr(args, "config", None):
        return
    parser = args.subparser
    cfg = _load_config(args.config)
    for key, raw in cfg.items():
        if not hasattr(args, key) or key in ("config", "func", "subparser"):
            raise UsageError(f"unknown config key {key!r}")
        if getattr(args, key) != parser.get_default(key):
            continue  # flag was given explicitly
        default = parser.get_default(key)
        if isinstance(default, bool):
            value = raw.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            value = int(raw)
        elif isinstance(default, float):
            value = float(raw)
        else:
            value = raw
        setattr(args, key, value)


# ---------------------------------------------------------------------------
# extract

def _image_ids_from_boundary_dir(boundary_dir: str) -> list[str]:
    ids = []
    for p in sorted(glob.glob(os.path.join(boundary_dir, "*.bfr"))):
        stem = os.path.splitext(os.path.basename(p))[0]
        if stem.endswith("_boundary"):
            stem = stem[: -len("_boundary")]
        ids.append(stem)
    return ids


def _boundary_path(boundary_dir: str, image_id: str) -> str:
    for cand in (f"{image_id}_boundary.bfr", f"{image_id}.bfr"):
        p = os.path.join(boundary_dir, cand)
        if os.path.exists(p):
            return p
    raise UsageError(f"no boundary raster for image {image_id} in {boundary_dir}")


def _semantic_path(semantic_dir: str, image_id: str) -> str:
    for cand in (f"{image_id}_semantic.png", f"{image_id}.png"):
        p = os.path.join(semantic_dir, cand)
        if os.path.exists(p):
            return p
    raise UsageError(f"no semantic map for image {image_id} in {semantic_dir}")


def _extract_one(task) -> tuple[str, int]:
    boundary_path, semantic_path, out_dir, cfg_dict, apply_refine = task
    config = mep.MepConfig(**cfg_dict)
    boundary = read_float_raster(boundary_path)
    semantic = read_semantic_png(semantic_path)
    labels = mep.extract_masks(boundary, semantic, config, apply_refine=apply_refine)
    instance_set = fusion.score_instances(
        fusion.assign_classes(labels, semantic), boundary
    )
    image_id = os.path.splitext(os.path.basename(boundary_path))[0]
    if image_id.endswith("_boundary"):
        image_id = image_id[: -len("_boundary")]
    instance_set.image_id = image_id
    os.makedirs(out_dir, exist_ok=True)
    if instance_set.instances:
        fusion.write_instance_set(instance_set, out_dir)
    else:
        fusion.write_empty_instance_set(
            image_id, boundary.height, boundary.width, out_dir
        )
    return image_id, len(instance_set)


def cmd_extract(args) -> int:
    cfg_dict = dict(
        boundary_threshold=args.threshold,
        min_component_area=args.min_area,
        closing_radius=args.closing_radius,
        connectivity=args.connectivity,
    )
    mep.MepConfig(**cfg_dict)  # validate ranges before any IO

    if os.path.isdir(args.boundary):
        semantic_dir = args.semantic
        if not os.path.isdir(semantic_dir):
            raise UsageError(f"--semantic must be a directory when --boundary is: {semantic_dir}")
        ids = _image_ids_from_boundary_dir(args.boundary)
        tasks = [
            (
                _boundary_path(args.boundary, i),
                _semantic_path(semantic_dir, i),
                args.out,
                cfg_dict,
                not args.no_refine,
            )
            for i in ids
        ]
    else:
        if not os.path.exists(args.boundary):
            raise UsageError(f"boundary file not found: {args.boundary}")
        if not os.path.exists(args.semantic):
            raise UsageError(f"semantic file not found: {args.semantic}")
        tasks = [(args.boundary, args.semantic, args.out, cfg_dict, not args.no_refine)]

    if args.jobs > 1 and len(tasks) > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            results = pool.map(_extract_one, tasks)
    else:
        results = [_extract_one(t) for t in tasks]
    for image_id, count in results:
        print(f"{image_id}: {count} instances")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def _instance_ids(d: str) -> list[str]:
    ids = []
    for p in sorted(glob.glob(os.path.join(d, "*.csv"))):
        stem = os.path.splitext(os.path.basename(p))[0]
        if stem == "manifest":
            continue
        if os.path.exists(os.path.join(d, f"{stem}.png")):
            ids.append(stem)
    return ids


def cmd_eval(args) -> int:
    try:
        thresholds = [float(t) for t in args.thresholds.split(",") if t]
    except ValueError as e:
        raise UsageError(f"bad --thresholds: {e}") from e
    gt_ids = _instance_ids(args.gt)
    pred_ids = _instance_ids(args.pred)
    unmatched = sorted(set(pred_ids) - set(gt_ids))
    if unmatched:
        raise UsageError("predictions without ground truth: " + ", ".join(unmatched))
    if not gt_ids:
        raise UsageError(f"no ground-truth instance sets found in {args.gt}")

    gt_sets = [fusion.read_instance_set(args.gt, i) for i in gt_ids]
    pred_sets = [
        fusion.read_instance_set(args.pred, i) for i in gt_ids if i in set(pred_ids)
    ]
    preds = metrics.dataset_from_instance_sets(pred_sets)
    gts = metrics.ground_truth_from_instance_sets(gt_sets)

    table = metrics.map_at(thresholds, preds, gts, eleven_point=args.eleven_point)
    header = "thresholds: " + ",".join(f"{t:g}" for t in thresholds)
    print(header)
    rows = [("mAP@%g" % t, table[t]) for t in thresholds]
    if args.coco_ap:
        rows.append(("AP[0.50:0.95]", metrics.coco_ap(preds, gts)))
    for name, value in rows:
        print(f"{name}\t{value:.4f}")
    if args.out:
        tmp = args.out + ".tmp"
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "value"])
            for name, value in rows:
                writer.writerow([name, f"{value:.6f}"])
        os.replace(tmp, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth

def _synth_one(task):
    master_seed, index, spec, out_dir = task
    scene = synth.generate_scene(
        synth.scene_seed(master_seed, index), spec, image_id=f"scene_{index:04d}"
    )
    if scene.instances.instances:
        synth.write_scene(scene, out_dir)
    else:
        os.makedirs(out_dir, exist_ok=True)
        synth.write_float_raster(
            scene.boundary, os.path.join(out_dir, f"{scene.image_id}_boundary.bfr")
        )
        synth.write_semantic_png(
            scene.semantic, os.path.join(out_dir, f"{scene.image_id}_semantic.png")
        )
        fusion.write_empty_instance_set(
            scene.image_id, spec.height, spec.width, out_dir
        )
    rows = [
        [scene.image_id, i, inst.class_id, f"{inst.score:.6f}"]
        for i, inst in enumerate(scene.instances.instances, start=1)
    ]
    return rows


def cmd_synth(args) -> int:
    spec = synth.SceneSpec(
        height=args.size,
        width=args.size,
        min_instances=args.min_instances,
        max_instances=args.max_instances,
        num_classes=args.classes,
        min_separation=args.min_separation,
        blur_sigma=args.blur_sigma,
        noise_sigma=args.noise_sigma,
    )
    tasks = [(args.seed, i, spec, args.out) for i in range(args.n)]
    try:
        if args.jobs > 1 and len(tasks) > 1:
            with multiprocessing.Pool(args.jobs) as pool:
                all_rows = pool.map(_synth_one, tasks)
        else:
            all_rows = [_synth_one(t) for t in tasks]
    except synth.GenerationError as e:
        print(f"error: infeasible scene spec: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    os.makedirs(args.out, exist_ok=True)
    tmp = os.path.join(args.out, "manifest.csv.tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(fusion.CSV_HEADER)
        for rows in all_rows:
            writer.writerows(rows)
    os.replace(tmp, os.path.join(args.out, "manifest.csv"))
    print(f"wrote {args.n} scenes to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# losscheck

def cmd_losscheck(args) -> int:
    if args.trials == 0:
        print("warning: --trials 0, no gradient checks executed")
        return EXIT_OK
    results = gradcheck.run_gradient_suite(
        args.trials, args.seed, negate=args.self_test_negate_grad
    )
    results += gradcheck.run_invariant_checks(args.seed)
    failed = False
    print(f"{'check':<24}{'worst rel err':>16}{'tolerance':>12}  status")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<24}{r.worst:>16.3e}{r.tolerance:>12.0e}  {status}")
        if not r.passed:
            failed = True
            if r.failing_seed is not None:
                print(f"  failing case seed: {r.failing_seed}")
    return EXIT_VERIFY_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskpipe",
        description="Boundary-map to instance-mask pipeline toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run the mask extraction pipeline")
    p.add_argument("--boundary", required=True, help="boundary .bfr file or directory")
    p.add_argument("--semantic", required=True, help="semantic .png file or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--min-area", type=int, default=16)
    p.add_argument("--closing-radius", type=int, default=1)
    p.add_argument("--connectivity", type=int, default=4, choices=(4, 8))
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", default=None, help="key=value config file")
    p.set_defaults(func=cmd_extract, subparser=p)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds", default="0.25,0.5,0.7,0.75")
    p.add_argument("--coco-ap", action="store_true")
    p.add_argument("--eleven-point", action="store_true")
    p.add_argument("--out", default=None, help="optional metrics CSV path")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval, subparser=p)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=416)
    p.add_argument("--min-instances", type=int, default=3)
    p.add_argument("--max-instances", type=int, default=6)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--min-separation", type=int, default=8)
    p.add_argument("--blur-sigma", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_synth, subparser=p)

    p = sub.add_parser("losscheck", help="verify loss gradients and invariants")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--self-test-negate-grad", action="store_true",
                   help="negate analytic gradients; the suite must then fail")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_losscheck, subparser=p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        _apply_config(args)
        return args.func(args)
    except (UsageError, RasterError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except synth.GenerationError as e:
        print(f"error: infeasible generation: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
