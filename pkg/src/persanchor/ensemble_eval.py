"""Detection fusion (NMS, affirmative ensembling, TTA) and AP evaluation."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import AnnotationRecord, DetectionRecord, Difficulty, ObjectClass
from .geometry import BoundingBox, iou_matrix

# IoU needed for a true positive, per class.
CLASS_IOU_THRESHOLDS = {
    ObjectClass.VEHICLE: 0.7,
    ObjectClass.PEDESTRIAN: 0.5,
    ObjectClass.CYCLIST: 0.5,
}
STRATEGIES = ("affirmative",)


@dataclass(frozen=True)
class FusionConfig:
    nms_iou_threshold: float = 0.7
    tta_scales: tuple[float, ...] = (0.8, 1.0, 1.2)
    strategy: str = "affirmative"

    def __post_init__(self) -> None:
        if not 0.0 < self.nms_iou_threshold < 1.0:
            raise ValueError("NMS threshold must be in (0, 1)")
        if any(s <= 0 for s in self.tta_scales):
            raise ValueError("TTA scales must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unsupported fusion strategy {self.strategy!r}")


def _rank_key(d: DetectionRecord):
    return (-d.score, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max)


def _output_key(d: DetectionRecord):
    return (d.image_id, d.object_class.value, *_rank_key(d), d.model_tag)


def nms(dets: Sequence[DetectionRecord], iou_threshold: float) -> list[DetectionRecord]:
    """Greedy NMS over detections of one image and class.

    Boxes are visited by descending score (ties: smaller ``x_min``, then
    ``y_min``); a box is dropped when its IoU with any kept box exceeds
    the threshold.
    """
    ordered = sorted(dets, key=_rank_key)
    if not ordered:
        return []
    boxes = np.array([d.box.as_tuple() for d in ordered])
    overlaps = iou_matrix(boxes, boxes)
    suppressed = np.zeros(len(ordered), dtype=bool)
    keep = []
    for i, det in enumerate(ordered):
        if suppressed[i]:
            continue
        keep.append(det)
        suppressed |= overlaps[i] > iou_threshold
    return keep


def group_by_image_class(
    dets: Iterable[DetectionRecord],
) -> dict[tuple[str, ObjectClass], list[DetectionRecord]]:
    groups: dict[tuple[str, ObjectClass], list[DetectionRecord]] = defaultdict(list)
    for d in dets:
        groups[(d.image_id, d.object_class)].append(d)
    return groups


def batched_nms(dets: Iterable[DetectionRecord], iou_threshold: float) -> list[DetectionRecord]:
    """NMS run independently per (image, class), returned in a fixed order."""
    out = []
    for group in group_by_image_class(dets).values():
        out.extend(nms(group, iou_threshold))
    return sorted(out, key=_output_key)


def affirmative_merge(
    model_outputs: Sequence[Sequence[DetectionRecord]], cfg: FusionConfig = FusionConfig()
) -> list[DetectionRecord]:
    """Accept every model's detections, then suppress duplicates with NMS.

    All inputs must already be in the original image frame
    (``scale_factor == 1``); run :func:`tta_deaugment` first otherwise.
    """
    if cfg.strategy != "affirmative":
        raise ValueError(f"unsupported fusion strategy {cfg.strategy!r}")
    union = []
    for m, dets in enumerate(model_outputs):
        for d in dets:
            if d.scale_factor != 1.0:
                raise ValueError(
                    f"model {m}: detection on {d.image_id!r} is in a rescaled frame "
                    f"(scale_factor={d.scale_factor}); de-augment before merging"
                )
            union.append(d)
    return batched_nms(union, cfg.nms_iou_threshold)


def tta_augment(dets: Iterable[DetectionRecord], factor: float) -> list[DetectionRecord]:
    """Map detections into an image rescaled by ``factor`` (used for simulation)."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    return [
        replace(d, box=d.box.scale(factor), scale_factor=d.scale_factor * factor) for d in dets
    ]


def tta_deaugment(dets: Iterable[DetectionRecord]) -> list[DetectionRecord]:
    """Map detections from rescaled inputs back to the original frame."""
    out = []
    for d in dets:
        if d.scale_factor <= 0:
            raise ValueError(f"invalid scale factor {d.scale_factor} on {d.image_id!r}")
        f = d.scale_factor
        box = d.box
        if f != 1.0:
            box = BoundingBox(box.x_min / f, box.y_min / f, box.x_max / f, box.y_max / f)
        out.append(replace(d, box=box, scale_factor=1.0))
    return out


@dataclass
class APEntry:
    """AP for one class at one difficulty level; ``ap`` is None without ground truths."""

    ap: float | None
    tp: int
    fp: int
    fn: int
    n_gt: int
    ignored: int = 0
    precision: list[float] = field(default_factory=list, repr=False)
    recall: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "n_gt": self.n_gt,
            "ignored": self.ignored,
        }


def _level_masks(gts: Sequence[AnnotationRecord], level: str) -> np.ndarray:
    """True for ground truths scored at ``level``; the rest are ignored."""
    if level == Difficulty.L2.value:
        return np.ones(len(gts), dtype=bool)
    if level == Difficulty.L1.value:
        return np.array([g.difficulty is Difficulty.L1 for g in gts], dtype=bool)
    raise ValueError(f"unknown difficulty level {level!r}")


def interpolated_ap(precision: Sequence[float], recall: Sequence[float]) -> float:
    """Area under the max-interpolated precision/recall staircase.

    ``precision[k]`` and ``recall[k]`` describe the first ``k + 1`` ranked
    detections; interpolated precision at step ``k`` is the best precision
    at any later step.
    """
    p = np.asarray(precision, dtype=float)
    r = np.asarray(recall, dtype=float)
    if p.size == 0:
        return 0.0
    p_interp = np.maximum.accumulate(p[::-1])[::-1]
    dr = np.diff(np.concatenate([[0.0], r]))
    return float(np.sum(p_interp * dr))


def average_precision(
    dets: Sequence[DetectionRecord],
    gts: Sequence[AnnotationRecord],
    iou_threshold: float,
    level: str = "L2",
) -> APEntry:
    """AP of one class's detections against that class's ground truths.

    At ``L1`` only level-1 objects are scored; a detection that misses
    every level-1 object but overlaps a level-2 object is ignored rather
    than counted as a false positive. At ``L2`` every object is scored.
    Each detection, in descending score order, claims the unmatched
    scored object it overlaps most, if that IoU reaches the threshold.
    """
    level = getattr(level, "value", level)
    scored = _level_masks(gts, level)
    n_gt = int(scored.sum())
    by_image: dict[str, list[int]] = defaultdict(list)
    for i, g in enumerate(gts):
        by_image[g.image_id].append(i)
    gt_boxes = np.array([g.box.as_tuple() for g in gts]).reshape(-1, 4)
    matched = np.zeros(len(gts), dtype=bool)

    ordered = sorted(dets, key=lambda d: (-d.score, d.image_id, *d.box.as_tuple()))
    flags = []
    ignored = 0
    for d in ordered:
        idx = by_image.get(d.image_id, [])
        if not idx:
            flags.append(False)
            continue
        idx = np.array(idx)
        ious = iou_matrix(np.array([d.box.as_tuple()]), gt_boxes[idx])[0]
        candidates = scored[idx] & ~matched[idx] & (ious >= iou_threshold)
        if candidates.any():
            best = idx[candidates][np.argmax(ious[candidates])]
            matched[best] = True
            flags.append(True)
        elif np.any(~scored[idx] & (ious >= iou_threshold)):
            ignored += 1
        else:
            flags.append(False)

    tp_flags = np.array(flags, dtype=bool)
    tp = int(tp_flags.sum())
    fp = int(len(tp_flags) - tp)
    if n_gt == 0:
        return APEntry(None, tp, fp, 0, 0, ignored)
    cum_tp = np.cumsum(tp_flags)
    cum_fp = np.cumsum(~tp_flags)
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1)
    recall = cum_tp / n_gt
    return APEntry(
        ap=interpolated_ap(precision, recall),
        tp=tp,
        fp=fp,
        fn=n_gt - tp,
        n_gt=n_gt,
        ignored=ignored,
        precision=precision.tolist(),
        recall=recall.tolist(),
    )


@dataclass
class APResult:
    entries: dict[tuple[str, str], APEntry]
    mean_ap: dict[str, float | None]

    def to_dict(self) -> dict:
        per_class: dict[str, dict] = {}
        for (cls, level), e in sorted(self.entries.items()):
            per_class.setdefault(cls, {})[level] = e.to_dict()
        return {
            "iou_thresholds": {c.value: t for c, t in CLASS_IOU_THRESHOLDS.items()},
            "classes": per_class,
            "mean_ap": self.mean_ap,
        }


def evaluate(
    dets: Sequence[DetectionRecord],
    gts: Sequence[AnnotationRecord],
    thresholds: Mapping[ObjectClass, float] = CLASS_IOU_THRESHOLDS,
    levels: Sequence[str] = ("L1", "L2"),
) -> APResult:
    """Per-class, per-level AP with class-specific IoU thresholds.

    Classes without scored ground truths at a level are absent (``ap`` is
    None) and left out of that level's mean.
    """
    entries = {}
    mean_ap: dict[str, float | None] = {}
    for level in levels:
        values = []
        for cls, thr in thresholds.items():
            e = average_precision(
                [d for d in dets if d.object_class is cls],
                [g for g in gts if g.object_class is cls],
                thr,
                level,
            )
            entries[(cls.value, level)] = e
            if e.ap is not None:
                values.append(e.ap)
        mean_ap[level] = float(np.mean(values)) if values else None
    return APResult(entries, mean_ap)
