"""Seeded synthetic datasets with known structure.

These stand in for real driving-camera annotations in tests, tutorials and
the acceptance suite: every generator plants a property (anchor shapes,
a size/position trend, cluster modes) that the pipeline should recover.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import (
    FRONTAL_SIZE,
    LATERAL_SIZE,
    AnnotationRecord,
    Camera,
    Difficulty,
    ObjectClass,
)
from .geometry import AnchorSpec, BoundingBox, anchor_sizes

FRONTAL_CAMERAS = (Camera.FRONT, Camera.FRONT_LEFT, Camera.FRONT_RIGHT)
LATERAL_CAMERAS = (Camera.SIDE_LEFT, Camera.SIDE_RIGHT)

# class -> (share, median aspect, log-sd of aspect)
CLASS_PROFILE = {
    ObjectClass.VEHICLE: (0.78, 1.4, 0.25),
    ObjectClass.PEDESTRIAN: (0.21, 0.4, 0.15),
    ObjectClass.CYCLIST: (0.01, 0.7, 0.15),
}


def planted_sizes(
    config: Sequence[AnchorSpec], n: int, jitter: float = 0.02, seed: int = 0
) -> np.ndarray:
    """``(n, 2)`` box sizes drawn from the decoded anchors of ``config``.

    Width and height are independently scaled by a factor in
    ``[1 - jitter, 1 + jitter]``.
    """
    rng = np.random.default_rng(seed)
    sizes = anchor_sizes(config)
    picks = sizes[rng.integers(0, len(sizes), size=n)]
    return picks * rng.uniform(1.0 - jitter, 1.0 + jitter, size=(n, 2))


def _record(
    rng: np.random.Generator,
    idx: int,
    camera: Camera,
    cls: ObjectClass,
    y_norm: float,
    w: float,
    h: float,
) -> AnnotationRecord:
    width, height = FRONTAL_SIZE if camera in FRONTAL_CAMERAS else LATERAL_SIZE
    w = min(w, width)
    h = min(h, height)
    cy = min(max(y_norm * height, h / 2), height - h / 2)
    cx = rng.uniform(w / 2, width - w / 2)
    box = BoundingBox.from_center(cx, cy, w, h)
    box = BoundingBox(max(box.x_min, 0.0), max(box.y_min, 0.0), min(box.x_max, width), min(box.y_max, height))
    return AnnotationRecord(
        image_id=f"img{idx // 8:05d}_{camera.value}",
        camera=camera,
        image_width=float(width),
        image_height=float(height),
        object_class=cls,
        difficulty=Difficulty.L2 if rng.random() < 0.2 else Difficulty.L1,
        box=box,
    )


def _pick_class(rng: np.random.Generator) -> ObjectClass:
    classes = list(CLASS_PROFILE)
    shares = np.array([CLASS_PROFILE[c][0] for c in classes])
    return classes[rng.choice(len(classes), p=shares / shares.sum())]


def perspective_dataset(
    n: int = 5000,
    seed: int = 0,
    *,
    lateral_share: float = 0.3,
    trend: float = 0.45,
    horizon: float = 0.1,
    y_range: tuple[float, float] = (0.12, 0.98),
    noise: float = 0.25,
) -> list[AnnotationRecord]:
    """Boxes whose height grows linearly with their vertical position.

    Centers ``y`` are uniform in ``y_range`` (fractions of image height);
    object height is ``trend * (y - horizon)`` of the image height times
    log-normal noise of log-sd ``noise``. Widths follow per-class aspect
    profiles. Boxes that would cross the image edge are shifted inside.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        lateral = rng.random() < lateral_share
        cams = LATERAL_CAMERAS if lateral else FRONTAL_CAMERAS
        camera = cams[rng.integers(len(cams))]
        height_px = (LATERAL_SIZE if lateral else FRONTAL_SIZE)[1]
        cls = _pick_class(rng)
        _, aspect_med, aspect_sd = CLASS_PROFILE[cls]
        y = rng.uniform(*y_range)
        h = max(4.0, trend * (y - horizon) * height_px * rng.lognormal(0.0, noise))
        w = max(4.0, h * aspect_med * rng.lognormal(0.0, aspect_sd))
        out.append(_record(rng, i, camera, cls, y, w, h))
    return out


def linear_trend_dataset(n: int, slope: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Pairs ``(x, y)`` with ``y = slope * x + noise`` and a known correlation ``slope``.

    ``x`` and the noise are unit-variance, noise scaled so corr = ``slope``
    for ``|slope| < 1``.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    e = rng.standard_normal(n)
    return x, slope * x + np.sqrt(1.0 - slope**2) * e


def trend_records(n: int, target_r: float, seed: int = 0) -> list[AnnotationRecord]:
    """Frontal and lateral boxes whose (y-center, height) correlation is ``target_r``."""
    x, z = linear_trend_dataset(n, target_r, seed)
    out = []
    for i in range(n):
        lateral = i % 2 == 1
        cams = LATERAL_CAMERAS if lateral else FRONTAL_CAMERAS
        camera = cams[i % len(cams)]
        height_px = (LATERAL_SIZE if lateral else FRONTAL_SIZE)[1]
        # Map standard normals into the image: center in (0.3, 0.7), height 60-180px.
        y_norm = 0.5 + 0.05 * x[i]
        h = 120.0 + 15.0 * z[i]
        cy = y_norm * height_px
        box = BoundingBox.from_center(960.0, cy, h * 0.5, h)
        out.append(AnnotationRecord(
            image_id=f"trend{i:05d}", camera=camera, image_width=1920.0,
            image_height=float(height_px), object_class=ObjectClass.VEHICLE,
            difficulty=Difficulty.L1, box=box,
        ))
    return out


# Tall synthetic frame: a scale-1.8 box (about 460 px) spans under 1% of
# its height, so centers can reach the bottom edge without truncation.
FIXTURE_SIZE = (1920.0, 24000.0)


def bimodal_dataset(n: int = 2000, seed: int = 0) -> list[AnnotationRecord]:
    """Two populations: small boxes (scale ~0.3) high in the image and
    large boxes (scale ~1.8) toward the bottom.

    Small-object centers lie in ``[0.188, 0.691]`` and large-object centers
    in ``[0.392, 1.0]`` of the frame height, so the region pipeline should
    find two clusters and four bands.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        large = i % 2 == 1
        scale = (1.8 if large else 0.3) * rng.lognormal(0.0, 0.08)
        aspect = rng.lognormal(0.0, 0.1)
        y = rng.uniform(0.392, 1.0) if large else rng.uniform(0.188, 0.691)
        out.append(_place(rng, i, y, scale, aspect))
    return out


def single_mode_dataset(n: int = 1000, seed: int = 0) -> list[AnnotationRecord]:
    """One shapeless blob of medium boxes spread over the full frame height."""
    rng = np.random.default_rng(seed)
    return [
        _place(rng, i, rng.uniform(0.0, 1.0), 0.5 * rng.lognormal(0.0, 0.3), rng.lognormal(0.0, 0.3))
        for i in range(n)
    ]


def _place(rng, i, y_norm, scale, aspect) -> AnnotationRecord:
    """A box of the given scale/aspect in the tall frame, center pulled inside if needed."""
    width, height = FIXTURE_SIZE
    side = 256.0 * scale
    w, h = side * np.sqrt(aspect), side / np.sqrt(aspect)
    cy = min(max(y_norm * height, h / 2), height - h / 2)
    cx = rng.uniform(w / 2, width - w / 2)
    return AnnotationRecord(
        image_id=f"img{i // 8:05d}",
        camera=Camera.FRONT,
        image_width=width,
        image_height=height,
        object_class=ObjectClass.VEHICLE,
        difficulty=Difficulty.L1,
        box=BoundingBox.from_center(cx, cy, w, h),
    )
