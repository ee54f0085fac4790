import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from persanchor.geometry import (
    AnchorSpec,
    BoundingBox,
    cartesian_config,
    centered_iou,
    decode_anchor,
    default_config,
    iou,
    iou_matrix,
    max_iou_many,
    max_iou_over_config,
)


def overlap_1d(a0, a1, b0, b1):
    # Sum of lengths minus the extent of the hull; negative means a gap.
    return max(0.0, (a1 - a0) + (b1 - b0) - (max(a1, b1) - min(a0, b0)))


def iou_oracle(a, b):
    inter = overlap_1d(a[0], a[2], b[0], b[2]) * overlap_1d(a[1], a[3], b[1], b[3])
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


coord = st.floats(-1e3, 1e3, allow_nan=False)
extent = st.floats(1e-2, 5e2, allow_nan=False)


@st.composite
def boxes(draw):
    x, y, w, h = draw(coord), draw(coord), draw(extent), draw(extent)
    return BoundingBox(x, y, x + w, y + h)


class TestBoundingBox:
    def test_rejects_inverted_corners(self):
        with pytest.raises(ValueError):
            BoundingBox(5, 0, 1, 2)

    def test_degenerate_box_allowed(self):
        assert BoundingBox(1, 1, 1, 3).area() == 0

    def test_from_center_roundtrip(self):
        b = BoundingBox.from_center(10, 20, 4, 6)
        assert b.as_tuple() == (8, 17, 12, 23)
        assert b.center() == (10, 20)


class TestIoU:
    def test_identical(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6)) == 0.0

    def test_partial_overlap(self):
        assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-15)

    def test_touching_edges(self):
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(1, 0, 2, 1)) == 0.0

    def test_zero_area_boxes(self):
        assert iou(BoundingBox(1, 1, 1, 1), BoundingBox(1, 1, 1, 1)) == 0.0

    @given(boxes(), boxes())
    def test_matches_oracle_and_is_symmetric(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)
        assert v == pytest.approx(iou_oracle(a.as_tuple(), b.as_tuple()), abs=1e-12)

    @given(boxes(), boxes(), st.integers(-100, 100), st.integers(-100, 100))
    def test_integer_translation_invariance(self, a, b, dx, dy):
        # Integer shifts of dyadic coordinates are exact in floating point.
        a = BoundingBox(*(round(v * 4) / 4 for v in a.as_tuple()))
        b = BoundingBox(*(round(v * 4) / 4 for v in b.as_tuple()))
        assert iou(a.translate(dx, dy), b.translate(dx, dy)) == iou(a, b)

    def test_matrix_agrees_with_scalar(self):
        rng = np.random.default_rng(3)
        xy = rng.uniform(0, 100, (7, 2))
        a = np.hstack([xy, xy + rng.uniform(1, 50, (7, 2))])
        xy = rng.uniform(0, 100, (5, 2))
        b = np.hstack([xy, xy + rng.uniform(1, 50, (5, 2))])
        m = iou_matrix(a, b)
        for i, j in itertools.product(range(7), range(5)):
            assert m[i, j] == pytest.approx(iou(BoundingBox(*a[i]), BoundingBox(*b[j])), abs=1e-14)


class TestAnchors:
    @pytest.mark.parametrize(
        "spec, size",
        [
            (AnchorSpec(1, 1), (256, 256)),
            (AnchorSpec(4, 1), (1024, 1024)),
            (AnchorSpec(0.5, 4), (256, 64)),
        ],
    )
    def test_decode(self, spec, size):
        box = decode_anchor(spec)
        assert (box.width(), box.height()) == pytest.approx(size)
        assert box.center() == (0, 0)

    @pytest.mark.parametrize("s, a", [(0, 1), (1, 0), (-1, 2)])
    def test_decode_rejects_non_positive(self, s, a):
        with pytest.raises(ValueError):
            decode_anchor(AnchorSpec(s, a))

    def test_default_config_is_twelve_anchors(self):
        cfg = default_config()
        assert len(cfg) == 12
        assert {c.scale_ratio for c in cfg} == {0.25, 0.5, 1, 2}
        assert {c.aspect_ratio for c in cfg} == {0.5, 1, 2}

    def test_area_preserving(self):
        for spec in cartesian_config([0.3, 1.7], [0.25, 3.0]):
            w, h = spec.size()
            assert w * h == pytest.approx((256 * spec.scale_ratio) ** 2)
            assert w / h == pytest.approx(spec.aspect_ratio)


class TestMaxIoU:
    def test_exact_anchor(self):
        gt = BoundingBox(100, 100, 356, 356)
        assert max_iou_over_config(gt, default_config()) == pytest.approx(1.0)

    def test_nested_smaller_anchor(self):
        gt = BoundingBox(0, 0, 256, 256)
        assert max_iou_over_config(gt, [AnchorSpec(0.5, 1)]) == pytest.approx(0.25)

    def test_empty_config_rejected(self):
        with pytest.raises(ValueError):
            max_iou_over_config(BoundingBox(0, 0, 1, 1), [])

    def test_matches_exhaustive_loop(self):
        rng = np.random.default_rng(11)
        cfg = default_config()
        for _ in range(200):
            cx, cy = rng.uniform(0, 1000, 2)
            w, h = rng.uniform(5, 800, 2)
            gt = BoundingBox.from_center(cx, cy, w, h)
            best = 0.0
            for spec in cfg:
                aw = 256 * spec.scale_ratio * math.sqrt(spec.aspect_ratio)
                ah = 256 * spec.scale_ratio / math.sqrt(spec.aspect_ratio)
                anchor = (cx - aw / 2, cy - ah / 2, cx + aw / 2, cy + ah / 2)
                best = max(best, iou_oracle(gt.as_tuple(), anchor))
            assert max_iou_over_config(gt, cfg) == pytest.approx(best, abs=1e-12)
            assert max_iou_many(np.array([[w, h]]), cfg)[0] == pytest.approx(best, abs=1e-12)

    def test_centered_iou_shape(self):
        out = centered_iou(np.ones((4, 2)), np.ones((3, 2)))
        assert out.shape == (4, 3)
        assert np.allclose(out, 1.0)
