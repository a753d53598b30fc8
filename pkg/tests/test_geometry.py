import numpy as np
import pytest

from boxverify.geometry import (
    Box,
    area,
    box_array,
    intersection_area,
    ioa,
    ioa_many,
    iou,
    iou_many,
)


def pixel_count(b: Box, grid: int) -> np.ndarray:
    """Boolean pixel mask of an integer-coordinate box on a grid."""
    mask = np.zeros((grid, grid), dtype=bool)
    mask[int(b.y1):int(b.y2), int(b.x1):int(b.x2)] = True
    return mask


def random_int_box(rng, grid) -> Box:
    x1, x2 = sorted(rng.integers(0, grid, size=2).tolist())
    y1, y2 = sorted(rng.integers(0, grid, size=2).tolist())
    return Box(x1, y1, max(x2, x1 + 1), max(y2, y1 + 1))


class TestBox:
    def test_rejects_zero_area(self):
        with pytest.raises(ValueError):
            Box(0, 0, 0, 10)
        with pytest.raises(ValueError):
            Box(5, 5, 5, 5)

    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            Box(10, 0, 0, 10)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Box(0, 0, float("inf"), 10)
        with pytest.raises(ValueError):
            Box(0, float("nan"), 10, 10)


class TestArea:
    def test_square(self):
        assert area(Box(0, 0, 10, 10)) == 100.0

    def test_unit(self):
        assert area(Box(0, 0, 1, 1)) == 1.0

    def test_rectangle_matches_pixel_count(self):
        b = Box(2, 3, 7, 11)
        assert area(b) == 40.0
        assert pixel_count(b, 16).sum() == 40


class TestIoU:
    def test_identity(self):
        b = Box(0, 0, 10, 10)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        # inter = 50, union = 150
        assert iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)

    def test_touching_edges_do_not_intersect(self):
        assert iou(Box(0, 0, 10, 10), Box(10, 0, 20, 10)) == 0.0

    def test_symmetry_random(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            a = random_int_box(rng, 32)
            b = random_int_box(rng, 32)
            assert iou(a, b) == iou(b, a)
            assert 0.0 <= iou(a, b) <= 1.0


class TestIoA:
    def test_contained(self):
        assert ioa(Box(2, 2, 8, 8), Box(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert ioa(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0

    def test_half(self):
        assert ioa(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) == 0.5

    def test_area_weighted_symmetry(self):
        # ioa(a,b) * area(a) == ioa(b,a) * area(b) == intersection
        rng = np.random.default_rng(11)
        for _ in range(500):
            a = random_int_box(rng, 32)
            b = random_int_box(rng, 32)
            lhs = ioa(a, b) * area(a)
            rhs = ioa(b, a) * area(b)
            assert lhs == pytest.approx(rhs, abs=1e-9)
            assert lhs == pytest.approx(intersection_area(a, b), abs=1e-9)

    def test_containment_relations(self):
        inner = Box(2, 2, 8, 8)
        outer = Box(0, 0, 10, 10)
        assert ioa(inner, outer) == 1.0
        assert iou(inner, outer) == pytest.approx(area(inner) / area(outer))


class TestPixelGridOracle:
    """iou/ioa must agree with counting pixels on integer boxes."""

    def test_against_grid(self):
        rng = np.random.default_rng(42)
        grid = 32
        for _ in range(2000):
            a = random_int_box(rng, grid)
            b = random_int_box(rng, grid)
            ma = pixel_count(a, grid)
            mb = pixel_count(b, grid)
            inter = float(np.count_nonzero(ma & mb))
            union = float(np.count_nonzero(ma | mb))
            expected_iou = inter / union
            assert abs(iou(a, b) - expected_iou) < 1e-12
            assert abs(ioa(a, b) - inter / ma.sum()) < 1e-12
            assert abs(ioa(b, a) - inter / mb.sum()) < 1e-12


class TestVectorized:
    def test_matches_scalar(self):
        rng = np.random.default_rng(3)
        boxes = [random_int_box(rng, 40) for _ in range(200)]
        arr = box_array(boxes)
        d = random_int_box(rng, 40)
        vec_iou = iou_many(arr, d)
        vec_ioa = ioa_many(arr, d)
        for i, b in enumerate(boxes):
            assert vec_iou[i] == pytest.approx(iou(b, d), abs=1e-12)
            assert vec_ioa[i] == pytest.approx(ioa(b, d), abs=1e-12)
