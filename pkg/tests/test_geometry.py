import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from checkfields.geometry import (BoundingBox, CandidateSet, FieldKind, GeometryError, ScoredBox,
                                  Space, TEXT_FIELDS, iou, micr_widen, nms, size_filter)

from conftest import boxes
from oracles import iou_matrix, nms_oracle


def sb(coords, score):
    return ScoredBox(BoundingBox(*coords), score)


class TestIou:
    def test_identity(self):
        a = BoundingBox(3, 4, 30, 40)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_touching_edges_is_zero(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(10, 0, 20, 10)) == 0.0

    def test_mixed_spaces_rejected(self):
        with pytest.raises(GeometryError):
            iou(BoundingBox(0, 0, 1, 1, Space.MODEL), BoundingBox(0, 0, 1, 1))

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0

    @given(boxes(), boxes())
    def test_matches_matrix_oracle(self, a, b):
        m = iou_matrix(np.array([a.as_list(), b.as_list()]))
        assert iou(a, b) == pytest.approx(m[0, 1], abs=1e-12)


class TestBoundingBox:
    def test_rejects_degenerate(self):
        with pytest.raises(GeometryError):
            BoundingBox(5, 5, 5, 10)

    def test_rejects_negative(self):
        with pytest.raises(GeometryError):
            BoundingBox(-1, 0, 5, 5)

    def test_clamped(self):
        b = BoundingBox.clamped(-5, 10, 120, 40, (100, 50))
        assert b.as_list() == [0, 10, 100, 40]

    def test_clamped_to_nothing(self):
        with pytest.raises(GeometryError):
            BoundingBox.clamped(120, 10, 150, 40, (100, 50))


class TestNms:
    def test_single(self):
        c = [sb((0, 0, 10, 10), 0.5)]
        assert nms(c) == c

    def test_disjoint_both_kept(self):
        c = [sb((0, 0, 10, 10), 0.5), sb((20, 20, 30, 30), 0.6)]
        assert nms(c) == [c[1], c[0]]

    def test_worked_example(self):
        a, b, c = sb((0, 0, 10, 10), 0.9), sb((1, 1, 11, 11), 0.8), sb((50, 50, 60, 60), 0.5)
        assert iou(a.box, b.box) == pytest.approx(81 / 119)
        assert nms([a, b, c], 0.4) == [a, c]
        assert nms([a, b, c], 0.4) == nms_oracle([a, b, c], 0.4)

    def test_threshold_is_inclusive(self):
        # iou exactly 1/3 with threshold 1/3 -> suppressed
        a, b = sb((0, 0, 10, 10), 0.9), sb((5, 0, 15, 10), 0.8)
        assert nms([a, b], 1 / 3) == [a]
        assert nms([a, b], 0.34) == [a, b]

    def test_empty(self):
        assert nms([]) == []

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            nms([], 0.0)

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.tuples(boxes(100.0, 1.0), st.floats(0, 1)), max_size=30),
           st.floats(0.05, 1.0))
    def test_properties(self, raw, t):
        cands = [ScoredBox(b, s) for b, s in raw]
        kept = nms(cands, t)
        assert all(k in cands for k in kept)
        assert [k.score for k in kept] == sorted((k.score for k in kept), reverse=True)
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert iou(a.box, b.box) < t
        if cands:
            assert kept[0].score == max(c.score for c in cands)
        assert kept == nms_oracle(cands, t)


class TestSizeFilter:
    dims = (960, 960)

    def test_area_rule(self):
        assert size_filter([sb((0, 0, 600, 600), 0.5)], self.dims) == []

    def test_thin_rule(self):
        assert size_filter([sb((0, 0, 8, 40), 0.5)], self.dims) == []
        assert size_filter([sb((0, 0, 40, 8), 0.5)], self.dims) == []

    def test_side_rule(self):
        assert size_filter([sb((0, 0, 300, 20), 0.5)], self.dims) == []   # 300 > 288
        assert size_filter([sb((0, 0, 20, 300), 0.5)], self.dims) == []

    def test_kept(self):
        c = [sb((100, 100, 200, 140), 0.5)]
        assert size_filter(c, self.dims) == c

    @given(st.lists(st.tuples(boxes(960.0, 1.0), st.floats(0, 1)), max_size=20))
    def test_idempotent_subset_order(self, raw):
        cands = [ScoredBox(b, s) for b, s in raw]
        out = size_filter(cands, self.dims)
        assert size_filter(out, self.dims) == out
        it = iter(cands)
        assert all(any(o is c for c in it) for o in out)  # order-preserving subsequence


class TestMicrWiden:
    def test_rule(self):
        assert micr_widen(BoundingBox(200, 440, 820, 460), 960).as_list() == [0, 440, 960, 460]

    def test_idempotent(self):
        b = BoundingBox(0, 440, 960, 460)
        assert micr_widen(b, 960) == b

    def test_small(self):
        assert micr_widen(BoundingBox(10, 5, 90, 15), 100).as_list() == [0, 5, 100, 15]

    def test_clamps_to_height(self):
        assert micr_widen(BoundingBox(10, 5, 90, 15), 100, 12).as_list() == [0, 5, 100, 12]

    @given(boxes(), st.integers(1, 2000))
    def test_properties(self, b, w):
        once = micr_widen(b, w)
        assert (once.y1, once.y2) == (b.y1, b.y2)
        assert (once.x1, once.x2) == (0, w)
        assert micr_widen(once, w) == once


class TestCandidateSet:
    def test_build_orders_and_labels(self):
        raw = [sb((0, 0, 10, 10), 0.2), sb((0, 0, 20, 20), 0.9), sb((0, 0, 30, 30), 0.5)]
        cs = CandidateSet.build("signature", raw, (100, 100))
        assert cs.labels == ("O-1", "O-2", "O-3")
        assert [b.score for b in cs.boxes] == [0.9, 0.5, 0.2]
        assert cs.box_for("O-3") == raw[0].box

    def test_without_keeps_alignment(self):
        raw = [sb((0, 0, 10 + i, 10), 0.9 - i / 10) for i in range(4)]
        cs = CandidateSet.build("texts", raw, (100, 100)).without("O-2")
        assert cs.labels == ("O-1", "O-3", "O-4")
        assert cs.box_for("O-3") == raw[2].box

    def test_unsorted_rejected(self):
        raw = (sb((0, 0, 10, 10), 0.2), sb((0, 0, 20, 20), 0.9))
        with pytest.raises(GeometryError):
            CandidateSet("x", raw, ("O-1", "O-2"), (100, 100))

    @given(st.lists(st.tuples(boxes(100.0, 1.0), st.floats(0, 1)), max_size=25))
    def test_alignment_property(self, raw):
        cands = [ScoredBox(b, s) for b, s in raw]
        cs = CandidateSet.build("p", cands, (100, 100))
        scores = [b.score for b in cs.boxes]
        assert scores == sorted(scores, reverse=True)
        assert sorted(map(id, cs.boxes)) == sorted(map(id, cands))
        for i, label in enumerate(cs.labels):
            assert label == f"O-{i + 1}" and cs.box_for(label) == cs.boxes[i].box


def test_field_groups():
    assert FieldKind.SIGNATURE.module == 1
    assert len(TEXT_FIELDS) == 8 and all(f.module == 2 for f in TEXT_FIELDS)
    assert {f.prompt for f in FieldKind} == {"signature", "check fields", "texts"}
    assert FieldKind.MEMO.prompt == "check fields" and FieldKind.PAYEE_NAME.prompt == "texts"
