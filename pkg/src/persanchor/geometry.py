"""Axis-aligned boxes, IoU and anchor decoding.

Boxes are in pixel coordinates with the origin at the top-left corner of
the image, stored as ``(x_min, y_min, x_max, y_max)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ANCHOR_BASE = 256.0
GENE_MIN = 0.06
GENE_MAX = 4.0

DEFAULT_SCALES = (0.25, 0.5, 1.0, 2.0)
DEFAULT_ASPECTS = (0.5, 1.0, 2.0)


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"invalid box corners: {self.as_tuple()}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    def width(self) -> float:
        return self.x_max - self.x_min

    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return self.width() * self.height()

    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def scale(self, factor: float) -> "BoundingBox":
        return BoundingBox(
            self.x_min * factor, self.y_min * factor, self.x_max * factor, self.y_max * factor
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class AnchorSpec:
    """An anchor shape given as a scale ratio and an aspect (width/height) ratio.

    The decoded anchor keeps the area of a ``base * scale`` square while its
    aspect ratio changes.
    """

    scale_ratio: float
    aspect_ratio: float
    base: float = ANCHOR_BASE

    def size(self) -> tuple[float, float]:
        if self.scale_ratio <= 0 or self.aspect_ratio <= 0:
            raise ValueError(
                f"anchor scale and aspect must be positive, got "
                f"s={self.scale_ratio}, a={self.aspect_ratio}"
            )
        root = math.sqrt(self.aspect_ratio)
        side = self.base * self.scale_ratio
        return side * root, side / root


def iou(b1: BoundingBox, b2: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    iw = min(b1.x_max, b2.x_max) - max(b1.x_min, b2.x_min)
    ih = min(b1.y_max, b2.y_max) - max(b1.y_min, b2.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = b1.area() + b2.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` corner arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(union)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def decode_anchor(spec: AnchorSpec) -> BoundingBox:
    """Decode an anchor into a box centered at the origin."""
    w, h = spec.size()
    return BoundingBox.from_center(0.0, 0.0, w, h)


def anchor_sizes(specs: Iterable[AnchorSpec]) -> np.ndarray:
    """``(n, 2)`` array of decoded (width, height) pairs."""
    return np.array([s.size() for s in specs], dtype=float).reshape(-1, 2)


def cartesian_config(scales: Sequence[float], aspects: Sequence[float]) -> list[AnchorSpec]:
    """All (aspect, scale) combinations, aspect-major."""
    return [AnchorSpec(s, a) for a in aspects for s in scales]


def default_config() -> list[AnchorSpec]:
    return cartesian_config(DEFAULT_SCALES, DEFAULT_ASPECTS)


def centered_iou(gt_wh: np.ndarray, anchor_wh: np.ndarray) -> np.ndarray:
    """IoU of boxes sharing a center, from their sizes alone.

    ``gt_wh`` has shape ``(..., K, 2)`` and ``anchor_wh`` ``(..., M, 2)``;
    the result is ``(..., K, M)``.
    """
    gw = gt_wh[..., :, None, 0]
    gh = gt_wh[..., :, None, 1]
    aw = anchor_wh[..., None, :, 0]
    ah = anchor_wh[..., None, :, 1]
    inter = np.minimum(gw, aw) * np.minimum(gh, ah)
    union = gw * gh + aw * ah - inter
    out = np.zeros(np.broadcast(inter, union).shape)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def max_iou_over_config(gt: BoundingBox, config: Sequence[AnchorSpec]) -> float:
    """Best IoU between ``gt`` and any anchor of ``config`` placed on the gt center."""
    if not config:
        raise ValueError("anchor configuration is empty")
    cx, cy = gt.center()
    best = 0.0
    for spec in config:
        w, h = spec.size()
        best = max(best, iou(gt, BoundingBox.from_center(cx, cy, w, h)))
    return best


def max_iou_many(gt_wh: np.ndarray, config: Sequence[AnchorSpec]) -> np.ndarray:
    """Vectorized :func:`max_iou_over_config` over an ``(K, 2)`` array of gt sizes."""
    if not config:
        raise ValueError("anchor configuration is empty")
    gt_wh = np.asarray(gt_wh, dtype=float).reshape(-1, 2)
    return centered_iou(gt_wh, anchor_sizes(config)).max(axis=-1)


def boxes_to_wh(boxes: Iterable[BoundingBox]) -> np.ndarray:
    return np.array([(b.width(), b.height()) for b in boxes], dtype=float).reshape(-1, 2)
