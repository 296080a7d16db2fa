import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orsim.core import BBox, Embedding, Frame, GalleryItem, ProbeContext, check_same_dim, iou, l2_normalize
from orsim.errors import DimensionMismatch, OutOfRange, ValidationError, ZeroVector

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
positive = st.floats(1e-2, 1e3, allow_nan=False, allow_infinity=False)
boxes = st.builds(BBox, finite, finite, positive, positive)
vectors = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=32).filter(
    lambda v: math.sqrt(sum(x * x for x in v)) > 1e-6)


class TestNormalize:
    def test_basis_vector_unchanged(self):
        out = l2_normalize(Embedding(np.array([1.0, 0.0, 0.0])))
        assert out.values.tolist() == [1.0, 0.0, 0.0]

    def test_three_four(self):
        out = l2_normalize(Embedding(np.array([3.0, 4.0])))
        np.testing.assert_allclose(out.values, [0.6, 0.8], rtol=0, atol=1e-15)

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            l2_normalize(Embedding(np.zeros(2)))

    def test_tiny_vector(self):
        with pytest.raises(ZeroVector):
            l2_normalize(Embedding(np.array([1e-13, 0.0])))

    @given(vectors)
    def test_unit_norm_and_idempotent(self, v):
        once = l2_normalize(Embedding(np.array(v)))
        assert abs(np.linalg.norm(once.values) - 1.0) <= 1e-6
        twice = l2_normalize(once)
        assert np.max(np.abs(twice.values - once.values)) <= 1e-6

    @given(vectors)
    def test_direction_preserved(self, v):
        arr = np.array(v)
        out = l2_normalize(Embedding(arr)).values
        assert np.dot(out, arr) > 0
        np.testing.assert_allclose(out * np.linalg.norm(arr), arr, rtol=1e-9, atol=1e-9)


class TestEmbedding:
    def test_values_read_only(self):
        e = Embedding(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            e.values[0] = 5.0

    def test_source_array_is_copied(self):
        src = np.array([1.0, 2.0])
        e = Embedding(src)
        src[0] = 9.0
        assert e.values[0] == 1.0

    def test_equality_respects_dtype(self):
        a = Embedding(np.array([1.0, 2.0], dtype=np.float32))
        assert a == Embedding(np.array([1.0, 2.0], dtype=np.float32))
        assert a != Embedding(np.array([1.0, 2.0], dtype=np.float64))

    def test_rejects_matrix(self):
        with pytest.raises(ValidationError):
            Embedding(np.ones((2, 2)))

    def test_grid_is_integer_valued(self):
        e = Embedding(np.array([0.3, -0.7, 0.2]))
        assert np.all(e.grid == np.rint(e.grid))
        assert e.grid_sq == float(np.dot(e.grid, e.grid))


class TestBBox:
    def test_rejects_nonpositive_size(self):
        with pytest.raises(ValidationError):
            BBox(0, 0, 0, 1)
        with pytest.raises(ValidationError):
            BBox(0, 0, 1, -1)

    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            BBox(float("nan"), 0, 1, 1)

    def test_area(self):
        assert BBox(1, 2, 3, 4).area == 12.0


class TestIoU:
    def test_identical(self):
        b = BBox(3, 4, 10, 20)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)) == 0.0

    def test_touching_edges(self):
        assert iou(BBox(0, 0, 1, 1), BBox(1, 0, 1, 1)) == 0.0

    def test_half_shift(self):
        assert iou(BBox(0, 0, 2, 2), BBox(1, 0, 2, 2)) == pytest.approx(1 / 3, abs=1e-15)

    def test_half_height(self):
        assert iou(BBox(0, 0, 4, 8), BBox(0, 0, 4, 4)) == 0.5

    @given(boxes, boxes)
    def test_symmetric(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(boxes)
    def test_self_is_one(self, a):
        assert iou(a, a) == 1.0

    @given(boxes, boxes)
    @settings(max_examples=200)
    def test_bounded(self, a, b):
        assert 0.0 <= iou(a, b) <= 1.0


class TestItems:
    def test_det_score_range(self, make_item):
        with pytest.raises(OutOfRange):
            make_item("a", "f", [1, 0], det=1.5)
        with pytest.raises(OutOfRange):
            make_item("a", "f", [1, 0], det=-0.1)

    def test_probe_context_checks_frame(self, make_item):
        p = make_item("p", "f1", [1, 0])
        with pytest.raises(ValidationError):
            ProbeContext(p, (make_item("n", "f2", [0, 1]),))

    def test_probe_not_own_neighbor(self, make_item):
        p = make_item("p", "f1", [1, 0])
        with pytest.raises(ValidationError):
            ProbeContext(p, (p,))

    def test_queries_order(self, make_item):
        p = make_item("p", "f1", [1, 0])
        n = make_item("n", "f1", [0, 1])
        ctx = ProbeContext(p, [n])
        assert ctx.queries == (p, n)
        assert ctx.num_neighbors == 1

    def test_frame_person_ids_distinct(self):
        with pytest.raises(ValidationError):
            Frame("f", ((BBox(0, 0, 1, 1), "a"), (BBox(2, 0, 1, 1), "a")))

    def test_check_same_dim(self, make_item):
        items = [make_item("a", "f", [1, 0]), make_item("b", "f", [1, 0, 0])]
        with pytest.raises(DimensionMismatch, match="'b'"):
            check_same_dim(items)

    def test_items_are_immutable(self, make_item):
        it = make_item("a", "f", [1, 0])
        with pytest.raises(Exception):
            it.det_score = 0.3
        assert isinstance(it, GalleryItem)
