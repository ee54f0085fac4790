"""Command-line entry point.

Every artifact-producing command writes its primary outputs plus a
``manifest_<command>.json`` into ``--out-dir``. Exit codes: 0 success,
1 input or validation error, 2 internal invariant breach.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .anchor_opt import (
    anchors_document,
    configs_from_document,
    coverage_from_groups,
    evaluate_coverage,
    evolve,
    kmeans_anchor_baseline,
    split_by_region,
)
from .config import (
    DEFAULT_SEED,
    ConfigError,
    cluster_options,
    config_hash,
    ea_params,
    fusion_config,
    load_config,
)
from .data import (
    CAMERA_GROUPS,
    DataError,
    derive_features,
    feature_matrix,
    filter_camera_group,
    load_detections,
    pearson_correlation,
    read_annotations,
    usable,
    write_records,
)
from .ensemble_eval import (
    affirmative_merge,
    evaluate,
    group_by_image_class,
    tta_deaugment,
)
from .geometry import default_config, iou
from .regions import RegionPartition, divide_regions
from .svg import line_chart_svg, scatter_svg
from . import synthetic

log = logging.getLogger("persanchor")

SCATTER_POINTS = 1500


class InvariantError(RuntimeError):
    """An output failed a self-check; indicates a bug rather than bad input."""


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Collects outputs of one command and writes its manifest."""

    def __init__(self, args: argparse.Namespace, effective: dict):
        self.args = args
        self.effective = effective
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.started = time.perf_counter()
        self.outputs: list[Path] = []

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text, encoding="utf-8")
        self.outputs.append(path)
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, _dump_json(obj))

    def finish(self, inputs: Sequence[str | Path]) -> Path:
        manifest = {
            "command": self.args.command,
            "config_hash": config_hash(self.effective),
            "config": self.effective,
            "seed": self.args.seed,
            "inputs": {str(p): _sha256(Path(p)) for p in inputs},
            "outputs": {str(p): _sha256(p) for p in self.outputs},
            "tool_version": __version__,
            "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "duration_s": round(time.perf_counter() - self.started, 3),
        }
        path = self.out_dir / f"manifest_{self.args.command}.json"
        path.write_text(_dump_json(manifest), encoding="utf-8")
        return path


def _annotations(args) -> tuple[list, list[str]]:
    records, report = read_annotations(args.annotations)
    for message in report.warnings:
        log.warning("%s: %s", report.path, message)
    records = filter_camera_group(records, args.camera_group)
    return records, report.warnings


def _partition(args) -> RegionPartition:
    return RegionPartition.load(args.partition) if args.partition else RegionPartition()


def cmd_analyze(args, cfg) -> None:
    records, warnings = _annotations(args)
    if not records:
        raise DataError("no annotations to analyze")
    run = Run(args, {"camera_group": args.camera_group})
    n = len(records)
    classes: dict[str, int] = {}
    cameras: dict[str, int] = {}
    levels: dict[str, int] = {}
    for r in records:
        classes[r.object_class.value] = classes.get(r.object_class.value, 0) + 1
        cameras[r.camera.value] = cameras.get(r.camera.value, 0) + 1
        levels[r.difficulty.value] = levels.get(r.difficulty.value, 0) + 1

    valid = usable(records)
    feats = [derive_features(r) for r in valid]
    correlation: dict[str, float | None] = {}
    series = {}
    fits = {}
    rng = np.random.default_rng(args.seed)
    for group in ("frontal", "lateral"):
        idx = [i for i, r in enumerate(valid) if r.camera.group == group]
        ys = np.array([(valid[i].box.y_min + valid[i].box.y_max) / 2 for i in idx])
        hs = np.array([feats[i].height_px for i in idx])
        try:
            correlation[group] = pearson_correlation(ys, hs)
        except ValueError:
            correlation[group] = None
            continue
        slope, icpt = np.polyfit(ys, hs, 1)
        fits[group] = (float(slope), float(icpt))
        pick = np.sort(rng.choice(len(idx), min(len(idx), SCATTER_POINTS), replace=False))
        series[group] = (ys[pick].tolist(), hs[pick].tolist())
    try:
        correlation["all"] = pearson_correlation(
            [f.y_center_norm for f in feats],
            [f.height_px / r.image_height for f, r in zip(feats, valid)],
        )
    except ValueError:
        correlation["all"] = None

    scale = np.array([f.scale_ratio for f in feats]) if feats else np.array([np.nan])
    stats = {
        "n_objects": n,
        "classes": {
            c: {"count": k, "percentage": round(100.0 * k / n, 4)} for c, k in sorted(classes.items())
        },
        "cameras": dict(sorted(cameras.items())),
        "difficulty": dict(sorted(levels.items())),
        "pearson_y_center_height": correlation,
        "scale_ratio_quantiles": {
            q: float(np.quantile(scale, float(q))) for q in ("0.05", "0.5", "0.95")
        } if feats else {},
        "degenerate_boxes": n - len(valid),
        "load_warnings": warnings,
    }
    run.write_json("stats.json", stats)
    run.write_text(
        "correlation.svg",
        scatter_svg(
            series, title="Object height vs. vertical position",
            xlabel="y center (px)", ylabel="height (px)", fits=fits,
        ),
    )
    run.finish([args.annotations])


def cmd_cluster(args, cfg) -> None:
    opts = cluster_options(cfg, k_min=args.k_min, k_max=args.k_max)
    records, _ = _annotations(args)
    records = usable(records)
    if not records:
        raise DataError("no annotations to cluster")

    def study(recs):
        x = feature_matrix(recs)
        y = [derive_features(r).y_center_norm for r in recs]
        return divide_regions(
            x, y, range(int(opts["k_min"]), int(opts["k_max"]) + 1), args.seed,
            mass=float(opts["mass"]), standardize=bool(opts["standardize"]),
            min_silhouette=float(opts["min_silhouette"]),
            sample_size=opts["sample_size"],
        )

    main = study(records)
    report = {"all": main.to_dict()}
    per_camera = None
    if args.split_cameras:
        per_camera = {}
        for group in ("frontal", "lateral"):
            subset = filter_camera_group(records, group)
            if not subset:
                continue
            s = study(subset)
            per_camera[group] = s.partition.bounds
            report[group] = s.to_dict()
    for s in report.values():
        for w in s["warnings"]:
            log.warning("%s", w)
    partition = RegionPartition(main.partition.bounds, per_camera)
    run = Run(args, {"cluster": opts, "camera_group": args.camera_group, "split_cameras": args.split_cameras})
    run.write_json("partition.json", partition.to_dict())
    run.write_json("cluster_report.json", report)
    run.finish([args.annotations])


def _kmeans_global(records, partition: RegionPartition, k: int, seed: int):
    wh = np.array([(r.box.width(), r.box.height()) for r in records])
    km = kmeans_anchor_baseline(wh, k, seed)
    groups = split_by_region(records, partition)
    report = coverage_from_groups(
        [km.specs] * partition.n_regions, [groups[i] for i in range(partition.n_regions)], partition
    )
    return km, report


def cmd_optimize(args, cfg) -> None:
    params = ea_params(cfg, args.seed, generations=args.generations, population=args.population)
    records, _ = _annotations(args)
    records = usable(records)
    if not records:
        raise DataError("no annotations to optimize on")
    partition = _partition(args)
    camera_groups = ["frontal", "lateral"] if args.split_cameras else [args.camera_group]

    run = Run(args, {
        "ea": {k: v for k, v in vars(params).items() if k != "seed"},
        "camera_group": args.camera_group,
        "split_cameras": args.split_cameras,
        "baseline": args.baseline,
        "partition": partition.to_dict(),
    })
    coverage: dict[str, dict] = {}
    curves: dict[str, list[float]] = {}
    flat: dict[str, list[float]] = {}
    for group in camera_groups:
        subset = filter_camera_group(records, group)
        if not subset:
            log.warning("camera group %s has no annotations; skipped", group)
            continue
        part = partition.for_camera(group)
        groups = split_by_region(subset, part)
        result = evolve(groups, part, params)
        for i, fb in enumerate(result.fallback):
            if fb:
                log.warning("%s region %d has no boxes; default anchors kept", group, i)
        for h in result.report.history:
            fit = h["fitness"]
            if any(b > a for a, b in zip(fit, fit[1:])):
                raise InvariantError(f"best fitness increased in {group} region {h['region']}")
            if h["mean_max_iou"]:
                curves[f"{group} R{h['region'] + 1}"] = h["mean_max_iou"]
        default = coverage_from_groups(
            [default_config()] * part.n_regions, [groups[i] for i in range(part.n_regions)], part
        )
        entry = {"ea": result.report.to_dict(), "default": default.to_dict()}
        n_gen = params.generations + 1
        flat[f"{group} default"] = [default.region_average_iou] * n_gen
        if args.baseline == "kmeans":
            km, km_report = _kmeans_global(subset, part, 12, args.seed)
            entry["kmeans"] = km_report.to_dict()
            entry["kmeans"]["anchors"] = [[a.scale_ratio, a.aspect_ratio] for a in km.specs]
            entry["kmeans"]["degenerate"] = km.degenerate
            flat[f"{group} k-means"] = [km_report.region_average_iou] * n_gen
        coverage[group] = entry
        name = f"anchors_{group}.json" if args.split_cameras else "anchors.json"
        run.write_json(
            name,
            anchors_document(result.chromosomes, part, group, args.seed, result.report.history),
        )
    if not coverage:
        raise DataError("no camera group had annotations")
    run.write_json("coverage_report.json", {"camera_groups": coverage})
    run.write_text(
        "convergence.svg",
        line_chart_svg(
            {**curves, **flat}, title="Anchor search: mean max-IoU of best individual",
            xlabel="generation", ylabel="mean max-IoU", dashed=list(flat),
        ),
    )
    inputs = [args.annotations] + ([args.partition] if args.partition else [])
    run.finish(inputs + ([args.config] if args.config else []))


def cmd_eval_coverage(args, cfg) -> None:
    records, _ = _annotations(args)
    records = usable(records)
    with open(args.anchors, encoding="utf-8") as fh:
        doc = json.load(fh)
    configs, implied = configs_from_document(doc)
    partition = _partition(args) if args.partition else implied
    report = evaluate_coverage(configs, records, partition)
    run = Run(args, {"camera_group": args.camera_group, "partition": partition.to_dict()})
    run.write_json("coverage.json", report.to_dict())
    run.finish([args.annotations, args.anchors] + ([args.partition] if args.partition else []))


def cmd_kmeans_anchors(args, cfg) -> None:
    records, _ = _annotations(args)
    records = usable(records)
    partition = _partition(args)
    if args.per_region:
        groups = split_by_region(records, partition)
        shared = None
        configs, fallback, degenerate = [], [], False
        for i in range(partition.n_regions):
            if len(groups[i]) < args.k:
                # Too few boxes to fit k centroids: reuse anchors fitted on all boxes.
                log.warning("region %d has %d boxes (< k=%d); global anchors used",
                            i, len(groups[i]), args.k)
                if shared is None:
                    shared = kmeans_anchor_baseline(
                        np.concatenate([groups[j] for j in range(partition.n_regions)]),
                        args.k, args.seed,
                    )
                km, is_fallback = shared, True
            else:
                km, is_fallback = kmeans_anchor_baseline(groups[i], args.k, args.seed), False
            configs.append(km.specs)
            fallback.append(is_fallback)
            degenerate = degenerate or km.degenerate
        report = coverage_from_groups(
            configs, [groups[i] for i in range(partition.n_regions)], partition, fallback
        )
    else:
        km, report = _kmeans_global(records, partition, args.k, args.seed)
        configs = [km.specs] * partition.n_regions
        degenerate = km.degenerate
    if degenerate:
        log.warning("fewer distinct box sizes than k; some anchors are repeated")
    doc = {
        "regions": [
            {"bounds": [lo, hi], "anchors": [[a.scale_ratio, a.aspect_ratio] for a in cfg_]}
            for (lo, hi), cfg_ in zip(partition.intervals(), configs)
        ],
        "camera_group": args.camera_group,
        "seed": args.seed,
        "degenerate": degenerate,
        "coverage": report.to_dict(),
    }
    run = Run(args, {"k": args.k, "per_region": args.per_region, "camera_group": args.camera_group})
    run.write_json("kmeans_anchors.json", doc)
    run.finish([args.annotations] + ([args.partition] if args.partition else []))


def cmd_ensemble(args, cfg) -> None:
    fcfg = fusion_config(cfg, nms_iou_threshold=args.nms_threshold)
    outputs = []
    for path in args.model:
        dets = load_detections(path)
        outputs.append(dets if args.no_deaugment else tta_deaugment(dets))
    fused = affirmative_merge(outputs, fcfg)
    for group in group_by_image_class(fused).values():
        for i, a in enumerate(group):
            for b in group[i + 1:]:
                if iou(a.box, b.box) > fcfg.nms_iou_threshold:
                    raise InvariantError("fused detections overlap above the NMS threshold")
    run = Run(args, {"fusion": {"nms_iou_threshold": fcfg.nms_iou_threshold,
                                "strategy": fcfg.strategy,
                                "tta_scales": list(fcfg.tta_scales)},
                     "deaugment": not args.no_deaugment})
    path = run.out_dir / args.output
    write_records(path, fused, "jsonl")
    run.outputs.append(path)
    run.finish(list(args.model))


def cmd_eval_ap(args, cfg) -> None:
    records, _ = _annotations(args)
    dets = load_detections(args.detections)
    result = evaluate(dets, records)
    run = Run(args, {"camera_group": args.camera_group})
    run.write_json("ap_report.json", result.to_dict())
    run.finish([args.detections, args.annotations])


def cmd_synth(args, cfg) -> None:
    makers = {
        "perspective": lambda: synthetic.perspective_dataset(args.n, args.seed),
        "bimodal": lambda: synthetic.bimodal_dataset(args.n, args.seed),
        "single": lambda: synthetic.single_mode_dataset(args.n, args.seed),
    }
    records = makers[args.kind]()
    run = Run(args, {"kind": args.kind, "n": args.n})
    path = run.out_dir / args.output
    write_records(path, records)
    run.outputs.append(path)
    run.finish([])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"random seed (default: {DEFAULT_SEED})")
    common.add_argument("--config", help="TOML config file; flags override its values")
    common.add_argument("--out-dir", default=".", help="directory for outputs (default: .)")
    common.add_argument("--camera-group", choices=CAMERA_GROUPS, default="all",
                        help="restrict annotations to one camera group")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="persanchor",
        description="Perspective-aware anchor optimization, detection fusion and AP evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="dataset statistics and size/position correlation")
    p.add_argument("annotations")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cluster", parents=[common], help="divide the image into perspective regions")
    p.add_argument("annotations")
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--split-cameras", action="store_true",
                   help="also derive separate frontal/lateral partitions")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("optimize", parents=[common], help="evolve per-region anchors")
    p.add_argument("annotations")
    p.add_argument("--partition", help="partition.json (default: one region)")
    p.add_argument("--split-cameras", action="store_true",
                   help="optimize frontal and lateral cameras separately")
    p.add_argument("--baseline", choices=("none", "kmeans"), default="none")
    p.add_argument("--generations", type=int)
    p.add_argument("--population", type=int)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval-coverage", parents=[common], help="audit anchors against annotations")
    p.add_argument("annotations")
    p.add_argument("--anchors", required=True)
    p.add_argument("--partition")
    p.set_defaults(func=cmd_eval_coverage)

    p = sub.add_parser("kmeans-anchors", parents=[common], help="YOLO-style K-means anchor baseline")
    p.add_argument("annotations")
    p.add_argument("--partition")
    p.add_argument("--k", type=int, default=12)
    p.add_argument("--per-region", action="store_true", help="cluster each region separately")
    p.set_defaults(func=cmd_kmeans_anchors)

    p = sub.add_parser("ensemble", parents=[common], help="affirmative NMS fusion of model outputs")
    p.add_argument("--model", action="append", required=True, help="detections JSONL (repeatable)")
    p.add_argument("--nms-threshold", type=float)
    p.add_argument("--no-deaugment", action="store_true",
                   help="do not map rescaled (TTA) detections back to the original frame")
    p.add_argument("--output", default="fused.jsonl")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("eval-ap", parents=[common], help="per-class, per-level interpolated AP")
    p.add_argument("detections")
    p.add_argument("--annotations", required=True)
    p.set_defaults(func=cmd_eval_ap)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic annotation set")
    p.add_argument("--kind", choices=("perspective", "bimodal", "single"), default="perspective")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--output", default="annotations.jsonl")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (DataError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvariantError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
