"""Annotation and detection records, file I/O and per-object features."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .geometry import ANCHOR_BASE, BoundingBox

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for malformed input files; carries the offending line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line = line


class ObjectClass(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"


class Camera(str, Enum):
    FRONT = "front"
    FRONT_LEFT = "front_left"
    FRONT_RIGHT = "front_right"
    SIDE_LEFT = "side_left"
    SIDE_RIGHT = "side_right"

    @property
    def group(self) -> str:
        return "lateral" if self in (Camera.SIDE_LEFT, Camera.SIDE_RIGHT) else "frontal"


class Difficulty(str, Enum):
    L1 = "L1"
    L2 = "L2"


CAMERA_GROUPS = ("all", "frontal", "lateral")

# Image sizes of the reference camera rig (frontal / lateral).
FRONTAL_SIZE = (1920, 1280)
LATERAL_SIZE = (1920, 886)

ANNOTATION_FIELDS = (
    "image_id", "camera", "image_width", "image_height", "class", "difficulty",
    "x_min", "y_min", "x_max", "y_max",
)
DETECTION_FIELDS = (
    "image_id", "class", "score", "x_min", "y_min", "x_max", "y_max",
    "model_tag", "scale_factor",
)


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    camera: Camera
    image_width: float
    image_height: float
    object_class: ObjectClass
    difficulty: Difficulty
    box: BoundingBox

    def to_row(self) -> dict:
        return {
            "image_id": self.image_id,
            "camera": self.camera.value,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "class": self.object_class.value,
            "difficulty": self.difficulty.value,
            "x_min": self.box.x_min,
            "y_min": self.box.y_min,
            "x_max": self.box.x_max,
            "y_max": self.box.y_max,
        }


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    object_class: ObjectClass
    score: float
    box: BoundingBox
    model_tag: str = ""
    scale_factor: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def to_row(self) -> dict:
        return {
            "image_id": self.image_id,
            "class": self.object_class.value,
            "score": self.score,
            "x_min": self.box.x_min,
            "y_min": self.box.y_min,
            "x_max": self.box.x_max,
            "y_max": self.box.y_max,
            "model_tag": self.model_tag,
            "scale_factor": self.scale_factor,
        }


@dataclass(frozen=True)
class ObjectFeatures:
    scale_ratio: float
    aspect_ratio: float
    y_center_norm: float
    x_center_norm: float
    height_px: float


@dataclass
class LoadReport:
    path: str
    rows: int = 0
    warnings: list[str] = field(default_factory=list)


def _enum(kind: type[Enum], value, what: str):
    try:
        return kind(value)
    except ValueError:
        allowed = ", ".join(m.value for m in kind)
        raise ValueError(f"unknown {what} {value!r} (expected one of: {allowed})") from None


def _float(row: dict, key: str) -> float:
    if key not in row or row[key] in (None, ""):
        raise ValueError(f"missing field {key!r}")
    try:
        value = float(row[key])
    except (TypeError, ValueError):
        raise ValueError(f"field {key!r} is not a number: {row[key]!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"field {key!r} is not finite")
    return value


def _str(row: dict, key: str) -> str:
    if key not in row or row[key] is None:
        raise ValueError(f"missing field {key!r}")
    return str(row[key])


def _iter_rows(path: Path, fmt: str) -> Iterator[tuple[int, dict]]:
    if fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"invalid JSON: {exc.msg}", str(path), lineno) from None
                if not isinstance(row, dict):
                    raise DataError("expected a JSON object", str(path), lineno)
                yield lineno, row
    elif fmt == "csv":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataError("missing CSV header row", str(path), 1)
            for row in reader:
                yield reader.line_num, row
    else:
        raise ValueError(f"unsupported format {fmt!r}")


def guess_format(path: str | Path) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "jsonl"


def _parse_annotation(row: dict, report: LoadReport, lineno: int) -> AnnotationRecord:
    width = _float(row, "image_width")
    height = _float(row, "image_height")
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    x0, y0, x1, y1 = (_float(row, k) for k in ("x_min", "y_min", "x_max", "y_max"))
    if x1 < x0 or y1 < y0:
        raise ValueError(f"box corners out of order: ({x0}, {y0}, {x1}, {y1})")
    cx0, cy0 = min(max(x0, 0.0), width), min(max(y0, 0.0), height)
    cx1, cy1 = min(max(x1, 0.0), width), min(max(y1, 0.0), height)
    if (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1):
        report.warnings.append(
            f"line {lineno}: box ({x0}, {y0}, {x1}, {y1}) clamped to image "
            f"{width:g}x{height:g}"
        )
    return AnnotationRecord(
        image_id=_str(row, "image_id"),
        camera=_enum(Camera, row.get("camera"), "camera"),
        image_width=width,
        image_height=height,
        object_class=_enum(ObjectClass, row.get("class"), "class"),
        difficulty=_enum(Difficulty, row.get("difficulty", "L1") or "L1", "difficulty"),
        box=BoundingBox(cx0, cy0, cx1, cy1),
    )


def _parse_detection(row: dict) -> DetectionRecord:
    x0, y0, x1, y1 = (_float(row, k) for k in ("x_min", "y_min", "x_max", "y_max"))
    if x1 < x0 or y1 < y0:
        raise ValueError(f"box corners out of order: ({x0}, {y0}, {x1}, {y1})")
    scale = row.get("scale_factor")
    return DetectionRecord(
        image_id=_str(row, "image_id"),
        object_class=_enum(ObjectClass, row.get("class"), "class"),
        score=_float(row, "score"),
        box=BoundingBox(x0, y0, x1, y1),
        model_tag=str(row.get("model_tag") or ""),
        scale_factor=1.0 if scale in (None, "") else _float(row, "scale_factor"),
    )


def read_annotations(
    path: str | Path, fmt: str | None = None
) -> tuple[list[AnnotationRecord], LoadReport]:
    """Parse an annotation file, returning the records and a load report.

    Boxes reaching outside the image are clamped to it and reported; any
    other invalid row raises :class:`DataError` naming the line.
    """
    path = Path(path)
    fmt = fmt or guess_format(path)
    report = LoadReport(str(path))
    records = []
    for lineno, row in _iter_rows(path, fmt):
        try:
            records.append(_parse_annotation(row, report, lineno))
        except ValueError as exc:
            raise DataError(str(exc), str(path), lineno) from None
    report.rows = len(records)
    return records, report


def load_annotations(path: str | Path, fmt: str | None = None) -> list[AnnotationRecord]:
    records, report = read_annotations(path, fmt)
    for message in report.warnings:
        log.warning("%s: %s", report.path, message)
    return records


def load_detections(path: str | Path, fmt: str | None = None) -> list[DetectionRecord]:
    path = Path(path)
    fmt = fmt or guess_format(path)
    out = []
    for lineno, row in _iter_rows(path, fmt):
        try:
            out.append(_parse_detection(row))
        except ValueError as exc:
            raise DataError(str(exc), str(path), lineno) from None
    return out


def dumps_records(records: Iterable, fmt: str = "jsonl") -> str:
    """Serialize annotation or detection records to JSONL or CSV text."""
    rows = [r.to_row() for r in records]
    if fmt == "jsonl":
        return "".join(json.dumps(row) + "\n" for row in rows)
    if fmt == "csv":
        if not rows:
            return ""
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()
    raise ValueError(f"unsupported format {fmt!r}")


def write_records(path: str | Path, records: Iterable, fmt: str | None = None) -> None:
    path = Path(path)
    path.write_text(dumps_records(records, fmt or guess_format(path)), encoding="utf-8")


def derive_features(r: AnnotationRecord) -> ObjectFeatures:
    """Scale ratio, aspect ratio and normalized center of an annotated object.

    Scale is ``sqrt(w * h) / 256``, so an object matching a decoded anchor
    of scale ``s`` exactly has scale ratio ``s``.
    """
    w, h = r.box.width(), r.box.height()
    if h <= 0:
        raise ValueError(f"zero-height box in image {r.image_id!r}: aspect ratio undefined")
    cx, cy = r.box.center()
    return ObjectFeatures(
        scale_ratio=math.sqrt(w * h) / ANCHOR_BASE,
        aspect_ratio=w / h,
        y_center_norm=cy / r.image_height,
        x_center_norm=cx / r.image_width,
        height_px=h,
    )


def usable(records: Iterable[AnnotationRecord]) -> list[AnnotationRecord]:
    """Drop degenerate (zero width or height) boxes, which carry no shape."""
    return [r for r in records if r.box.width() > 0 and r.box.height() > 0]


def filter_camera_group(records: Iterable[AnnotationRecord], group: str) -> list[AnnotationRecord]:
    if group not in CAMERA_GROUPS:
        raise ValueError(f"unknown camera group {group!r}")
    if group == "all":
        return list(records)
    return [r for r in records if r.camera.group == group]


def feature_matrix(records: Sequence[AnnotationRecord]) -> np.ndarray:
    """``(N, 2)`` array of (aspect_ratio, scale_ratio) used for clustering."""
    feats = [derive_features(r) for r in records]
    return np.array([(f.aspect_ratio, f.scale_ratio) for f in feats], dtype=float).reshape(-1, 2)


def pearson_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("series must be one-dimensional and of equal length")
    if x.size < 2:
        raise ValueError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))
