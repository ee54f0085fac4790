"""Independent reference implementations used by the test suite.

They favour obviously-correct brute force over speed and share no code
with the package beyond the record types.
"""

import itertools

import numpy as np

from persanchor.data import (
    AnnotationRecord,
    Camera,
    DetectionRecord,
    Difficulty,
    ObjectClass,
)
from persanchor.geometry import BoundingBox


def box_iou(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def nms_by_subsets(dets, threshold):
    """The unique subset satisfying the greedy-NMS fixed point.

    Ranking by score (descending), a detection belongs to the output iff
    no higher-ranked member of the output overlaps it above ``threshold``.
    Every subset is tested; exactly one must qualify.
    """
    ranked = sorted(dets, key=lambda d: (-d.score, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max))
    n = len(ranked)
    solutions = []
    for mask in itertools.product((False, True), repeat=n):
        ok = True
        for i in range(n):
            blocked = any(
                mask[j] and box_iou(ranked[j].box.as_tuple(), ranked[i].box.as_tuple()) > threshold
                for j in range(i)
            )
            if mask[i] == blocked:
                ok = False
                break
        if ok:
            solutions.append([ranked[i] for i in range(n) if mask[i]])
    assert len(solutions) == 1, "greedy fixed point must be unique"
    return solutions[0]


def _greedy_counts(dets, gts, threshold, scored):
    matched = [False] * len(gts)
    tp = fp = 0
    for d in dets:
        best, best_iou = None, -1.0
        ignored = False
        for j, g in enumerate(gts):
            if g.image_id != d.image_id:
                continue
            v = box_iou(d.box.as_tuple(), g.box.as_tuple())
            if v < threshold:
                continue
            if not scored[j]:
                ignored = True
            elif not matched[j] and v > best_iou:
                best, best_iou = j, v
        if best is not None:
            matched[best] = True
            tp += 1
        elif not ignored:
            fp += 1
    return tp, fp


def ap_by_threshold_sweep(dets, gts, threshold, level="L2"):
    """AP by re-scoring the detector at every distinct score cut-off.

    For each cut-off the detections at or above it are matched from
    scratch; the precision envelope at recall r is the best precision of
    any cut-off reaching recall >= r, integrated over the recall steps.
    """
    scored = [level == "L2" or g.difficulty is Difficulty.L1 for g in gts]
    n_gt = sum(scored)
    if n_gt == 0:
        return None
    points = []
    for cut in sorted({d.score for d in dets}, reverse=True):
        subset = sorted(
            (d for d in dets if d.score >= cut),
            key=lambda d: (-d.score, d.image_id, *d.box.as_tuple()),
        )
        tp, fp = _greedy_counts(subset, gts, threshold, scored)
        if tp + fp:
            points.append((tp / (tp + fp), tp / n_gt))
    ap = 0.0
    previous = 0.0
    for r in sorted({r for _, r in points if r > 0}):
        ap += (r - previous) * max(p for p, rr in points if rr >= r)
        previous = r
    return ap


def random_scene(rng, n_gt_max=10, n_det_max=15, cls=ObjectClass.VEHICLE, images=("a", "b")):
    """Ground truths plus jittered, duplicated and spurious detections."""
    gts, dets = [], []
    for _ in range(int(rng.integers(0, n_gt_max + 1))):
        x, y = rng.uniform(0, 400, 2)
        w, h = rng.uniform(20, 120, 2)
        level = Difficulty.L1 if rng.random() < 0.7 else Difficulty.L2
        gts.append(AnnotationRecord(
            str(rng.choice(images)), Camera.FRONT, 1920, 1280, cls, level,
            BoundingBox(x, y, x + w, y + h),
        ))
    scores = rng.permutation(np.linspace(0.05, 0.95, n_det_max))
    for k in range(int(rng.integers(0, n_det_max + 1))):
        if gts and rng.random() < 0.75:
            g = gts[int(rng.integers(len(gts)))]
            x0, y0, x1, y1 = g.box.as_tuple()
            j = rng.normal(0, 0.08 * (x1 - x0), 4)
            box = BoundingBox(x0 + j[0], y0 + j[1], max(x1 + j[2], x0 + j[0] + 1), max(y1 + j[3], y0 + j[1] + 1))
            image = g.image_id
        else:
            x, y = rng.uniform(0, 400, 2)
            w, h = rng.uniform(20, 120, 2)
            box = BoundingBox(x, y, x + w, y + h)
            image = str(rng.choice(images))
        dets.append(DetectionRecord(image, cls, float(scores[k]), box, "m0"))
    return gts, dets
