"""Command-line interface: segment, evaluate, synth, classify, bench.

Exit codes: 0 success, 1 a metric came out undefined, 2 input errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .annotation_rules import ContractViolation, RuleConfig, classify, extract_features
from .config import read_key_values
from .dataset import (
    DatasetError,
    atomic_write,
    list_image_ids,
    read_counts,
    read_instances,
    write_instances,
)
from .detect import DetectionParseError, baseline_detect, format_detections, parse_detections
from .metrics import evaluate, evaluate_counts, mean_size
from .morphology import Connectivity, StructuringElement
from .pipeline import PipelineConfig, overlay, segment_image
from .raster import LabelMapError, PGMFormatError, read_label_map, read_pgm, write_pgm
from .synthgen import SceneGenerationError, SceneSpec, generate

log = logging.getLogger("crystalseg")

EXIT_OK, EXIT_UNDEFINED, EXIT_INPUT = 0, 1, 2
BENCH_BUDGET_S = 1.82


class InputError(Exception):
    pass


def _write_manifest(out: Path, command: str, config: dict, inputs: list[str],
                    timing: dict[str, float], warnings: list[str], errors: list[str] | None = None) -> None:
    doc = {
        "tool": "crystalseg",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": inputs,
        "timing_s": timing,
        "warnings": warnings,
        "errors": errors or [],
    }
    atomic_write(out / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults <- config file <- explicit flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        try:
            file_values = read_key_values(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise InputError(f"config {args.config}: {exc}") from None
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise InputError(f"config {args.config}: unknown keys {sorted(unknown)}")
        for k, v in file_values.items():
            resolved[k] = type(defaults[k])(v) if defaults[k] is not None else v
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            resolved[k] = v
    return resolved


# segment

SEGMENT_DEFAULTS = {"dark_fraction": 0.70, "se_shape": "square", "se_radius": 1, "conn": "eight"}


def cmd_segment(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    conf = _resolve(args, SEGMENT_DEFAULTS)
    cfg = PipelineConfig(
        dark_fraction=float(conf["dark_fraction"]),
        se=StructuringElement(conf["se_shape"], int(conf["se_radius"])),
        fg_conn=Connectivity(conf["conn"]),
        stage_dump=out / "stages" if args.stage_dump else None,
    )
    timing = {"read": 0.0, "detect": 0.0, "segment": 0.0, "write": 0.0}
    warnings: list[str] = []
    errors: list[str] = []
    for path in map(Path, args.images):
        image_id = path.stem
        t0 = time.perf_counter()
        try:
            img = read_pgm(path.read_bytes())
        except (OSError, PGMFormatError) as exc:
            errors.append(f"{path}: {exc}")
            continue
        t1 = time.perf_counter()
        if args.baseline:
            dets = baseline_detect(img, image_id=image_id)
        else:
            det_path = Path(args.detections) / f"{image_id}.txt"
            synth_boxes = Path(args.detections) / f"{image_id}_boxes.txt"
            if not det_path.exists() and synth_boxes.exists():
                det_path = synth_boxes
            try:
                dets = parse_detections(det_path.read_text(encoding="utf-8"), img.width, img.height, image_id)
            except FileNotFoundError:
                errors.append(f"missing detections file: {det_path}")
                continue
            except (OSError, DetectionParseError) as exc:
                errors.append(f"{det_path}: {exc}")
                continue
        t2 = time.perf_counter()
        instances = segment_image(img, dets, cfg)
        t3 = time.perf_counter()
        write_instances(out, instances, img.width, img.height)
        if args.baseline:
            atomic_write(out / f"{image_id}_detections.txt", format_detections(dets, img.width, img.height))
        if args.overlay:
            atomic_write(out / f"{image_id}_overlay.pgm", write_pgm(overlay(img, instances)))
        t4 = time.perf_counter()
        warnings.extend(f"{image_id}: {w}" for w in instances.warnings)
        for key, dt in zip(timing, (t1 - t0, t2 - t1, t3 - t2, t4 - t3)):
            timing[key] += dt
        log.info("%s: %d crystal instances", image_id, len(instances.crystals()))
    for e in errors:
        log.error(e)
    _write_manifest(out, "segment", {**cfg.as_dict(), "stage_dump": bool(args.stage_dump),
                                     "baseline": bool(args.baseline),
                                     "detections": args.detections},
                    [str(p) for p in args.images], timing, warnings, errors)
    return EXIT_INPUT if errors else EXIT_OK


# evaluate

def _crystal_diameters(instance_sets, mpp: float) -> list[float]:
    return [mean_size([i.mask], mpp) for s in instance_sets for i in s.crystals()]


def cmd_evaluate(args: argparse.Namespace) -> int:
    from . import plotting

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    conf = _resolve(args, {"microns_per_pixel": 1.0, "iou": 0.5})
    mpp, iou = float(conf["microns_per_pixel"]), float(conf["iou"])
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    timing: dict[str, float] = {}
    t0 = time.perf_counter()
    pred_ids = list_image_ids(pred_dir)
    gt_ids = list_image_ids(gt_dir)
    counts_path = gt_dir / "counts.csv"
    count_only = not gt_ids and counts_path.exists()
    if count_only:
        gt_counts = read_counts(counts_path)
        gt_ids = sorted(gt_counts)
    if set(pred_ids) != set(gt_ids):
        only_pred = sorted(set(pred_ids) - set(gt_ids))
        only_gt = sorted(set(gt_ids) - set(pred_ids))
        raise InputError(f"image id sets differ: only in predictions {only_pred}, only in ground truth {only_gt}")
    if not gt_ids:
        raise InputError(f"no images found in {gt_dir}")
    preds = [read_instances(pred_dir, i) for i in gt_ids]
    timing["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if count_only:
        report = evaluate_counts([(p.image_id, len(p.crystals()), gt_counts[p.image_id]) for p in preds])
        gts = []
    else:
        gts = [read_instances(gt_dir, i) for i in gt_ids]
        report = evaluate(list(zip(preds, gts)), microns_per_pixel=mpp, iou_thresh=iou)
    timing["metrics"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    plotting.plot_counts(report.per_image, out / "counts.png")
    if not count_only:
        plotting.plot_confusion_matrix(report.confusion_normalized, out / "confusion_matrix.png")
        plotting.plot_size_distribution(_crystal_diameters(preds, mpp), _crystal_diameters(gts, mpp),
                                        out / "size_distribution.png")
    timing["figures"] = time.perf_counter() - t0
    report.timing = timing

    atomic_write(out / "report.json", report.to_json())
    atomic_write(out / "per_image.csv", report.per_image_csv())
    _write_manifest(out, "evaluate", {"microns_per_pixel": mpp, "iou": iou, "count_only": count_only},
                    [str(pred_dir), str(gt_dir)], timing,
                    [f"{s['image_id']}: {s['metric']} skipped ({s['reason']})" for s in report.skipped])
    expected = [report.cnt_acc] if count_only else [
        report.cnt_acc, report.cov_err, report.size_err, report.map50, report.recall50]
    def fmt(v, scale=1.0):
        return "n/a" if v is None else f"{v * scale:.4f}"

    print(f"images {report.n_images}  cnt_acc {fmt(report.cnt_acc)}  cov_err% {fmt(report.cov_err, 100)}  "
          f"size_err_um {fmt(report.size_err)}  map50 {fmt(report.map50)}  recall50 {fmt(report.recall50)}")
    return EXIT_UNDEFINED if any(v is None for v in expected) else EXIT_OK


# synth

def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    written = []
    for i in range(args.count):
        image_id = args.id if args.count == 1 and args.id else f"{args.prefix}_{i:03d}"
        spec = SceneSpec(
            width=args.width, height=args.height,
            n_crystals=args.crystals, n_mimics=args.mimics, n_bubbles=args.bubbles,
            size_range=(args.size_min, args.size_max), noise_sigma=args.noise_sigma,
            seed=args.seed + i,
        )
        try:
            scene = generate(spec)
        except SceneGenerationError as exc:
            raise InputError(f"{image_id}: {exc}") from None
        scene.truth.image_id = image_id
        atomic_write(out / f"{image_id}.pgm", write_pgm(scene.image))
        write_instances(out, scene.truth, spec.width, spec.height)
        atomic_write(out / f"{image_id}_boxes.txt", format_detections(scene.boxes, spec.width, spec.height))
        written.append(image_id)
    config = {k: getattr(args, k) for k in ("width", "height", "crystals", "mimics", "bubbles",
                                            "size_min", "size_max", "noise_sigma", "seed", "count")}
    _write_manifest(out, "synth", config, written, {"generate": time.perf_counter() - t0}, [])
    return EXIT_OK


# classify

def cmd_classify(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = RuleConfig.from_file(args.rules) if args.rules else RuleConfig()
    t0 = time.perf_counter()
    img = read_pgm(Path(args.image).read_bytes())
    lm = read_label_map(Path(args.labels).read_bytes())
    if (lm.width, lm.height) != (img.width, img.height):
        raise InputError(f"label map is {lm.width}x{lm.height}, image is {img.width}x{img.height}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance_id", "class", "rule_fired"])
    for k, mask in sorted(lm.instance_masks().items()):
        try:
            feats = extract_features(img, mask, cfg)
        except ContractViolation as exc:
            raise InputError(f"instance {k}: {exc}") from None
        cls, rule = classify(feats, cfg)
        w.writerow([k, cls.label, rule or "none"])
    image_id = Path(args.image).stem
    atomic_write(out / f"{image_id}_rules.csv", buf.getvalue())
    config = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    _write_manifest(out, "classify", config, [args.image, args.labels],
                    {"classify": time.perf_counter() - t0}, [])
    return EXIT_OK


# bench

def run_bench(width: int, height: int, boxes: int, repeat: int, seed: int = 0,
              size_range: tuple[int, int] = (16, 40)) -> dict:
    """Time the post-processing stage alone over a synthetic scene's crystal boxes."""
    scene = generate(SceneSpec(width=width, height=height, n_crystals=boxes, n_mimics=0, n_bubbles=0,
                               size_range=size_range, seed=seed))
    cfg = PipelineConfig()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        segment_image(scene.image, scene.boxes, cfg)
        samples.append(time.perf_counter() - t0)
    area = sum(d.box.area for d in scene.boxes)
    median = float(np.median(samples)) if samples else 0.0
    return {
        "width": width, "height": height, "boxes": boxes, "repeat": repeat,
        "samples_s": samples,
        "median_s": median,
        "p95_s": float(np.percentile(samples, 95)) if samples else 0.0,
        "box_area_px": area,
        "throughput_mpx_s": (area / 1e6 / median) if median > 0 else 0.0,
        "budget_s": BENCH_BUDGET_S,
        "within_budget": median <= BENCH_BUDGET_S,
    }


def cmd_bench(args: argparse.Namespace) -> int:
    from . import plotting

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_bench(args.width, args.height, args.boxes, args.repeat, args.seed, (args.size_min, args.size_max))
    atomic_write(out / "bench.json", json.dumps(res, indent=2, sort_keys=True) + "\n")
    atomic_write(out / "bench_samples.csv",
                 "repeat,seconds\n" + "".join(f"{i},{s:.6f}\n" for i, s in enumerate(res["samples_s"], 1)))
    plotting.plot_bench(res["samples_s"], BENCH_BUDGET_S, out / "bench_timing.png")
    _write_manifest(out, "bench", {k: res[k] for k in ("width", "height", "boxes", "repeat")},
                    [], {"median": res["median_s"], "p95": res["p95_s"]}, [])
    print(f"post-processing median {res['median_s']:.4f} s, p95 {res['p95_s']:.4f} s, "
          f"{res['box_area_px']} px in boxes, {res['throughput_mpx_s']:.2f} Mpx/s, "
          f"budget {BENCH_BUDGET_S} s: {'PASS' if res['within_budget'] else 'FAIL'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crystalseg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", help="segment crystal detections into instance masks")
    s.add_argument("images", nargs="+")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--detections", help="directory holding <image_id>.txt detection files")
    src.add_argument("--baseline", action="store_true", help="use the classical blob detector")
    s.add_argument("--config", help="key=value config file; flags override it")
    s.add_argument("--dark-fraction", type=float, dest="dark_fraction")
    s.add_argument("--se-shape", choices=["square", "disk"], dest="se_shape")
    s.add_argument("--se-radius", type=int, dest="se_radius")
    s.add_argument("--conn", choices=["four", "eight"], help="foreground connectivity")
    s.add_argument("--overlay", action="store_true", help="also write <id>_overlay.pgm")
    s.add_argument("--stage-dump", action="store_true", help="write per-stage masks under <out>/stages")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    e = sub.add_parser("evaluate", help="compute quality-control metrics")
    e.add_argument("pred_dir")
    e.add_argument("gt_dir")
    e.add_argument("--config")
    e.add_argument("--microns-per-pixel", type=float, dest="microns_per_pixel")
    e.add_argument("--iou", type=float)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    y = sub.add_parser("synth", help="generate synthetic scenes with ground truth")
    y.add_argument("--out", required=True)
    y.add_argument("--id", help="image id when --count is 1")
    y.add_argument("--prefix", default="scene")
    y.add_argument("--count", type=int, default=1)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--width", type=int, default=256)
    y.add_argument("--height", type=int, default=256)
    y.add_argument("--crystals", type=int, default=8)
    y.add_argument("--mimics", type=int, default=3)
    y.add_argument("--bubbles", type=int, default=1)
    y.add_argument("--size-min", type=int, default=16)
    y.add_argument("--size-max", type=int, default=40)
    y.add_argument("--noise-sigma", type=float, default=4.0)
    y.set_defaults(func=cmd_synth)

    c = sub.add_parser("classify", help="apply the hard-mimic rules to labelled objects")
    c.add_argument("image")
    c.add_argument("labels")
    c.add_argument("--rules", help="key=value threshold file")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_classify)

    b = sub.add_parser("bench", help="time post-processing on a synthetic image")
    b.add_argument("--width", type=int, default=2048)
    b.add_argument("--height", type=int, default=1536)
    b.add_argument("--boxes", type=int, default=150)
    b.add_argument("--repeat", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--size-min", type=int, default=16)
    b.add_argument("--size-max", type=int, default=40)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, DatasetError, PGMFormatError, LabelMapError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
