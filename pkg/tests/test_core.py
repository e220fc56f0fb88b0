import json

import pytest
from hypothesis import given, strategies as st

from sgreason.core import (
    Box,
    POSITION_CATEGORIES,
    Vocabulary,
    iou,
    match_boxes,
    position_predicate,
)
from sgreason.errors import InvalidBoxError, VocabularyError


def boxes_strategy():
    origin = st.floats(0.0, 0.7, allow_nan=False)
    extent = st.floats(0.01, 0.3, allow_nan=False)
    return st.tuples(origin, origin, extent, extent).map(
        lambda t: Box(t[0], t[1], t[0] + t[2], t[1] + t[3])
    )


class TestBox:
    def test_properties(self):
        b = Box(0.1, 0.2, 0.5, 0.6)
        assert b.width == pytest.approx(0.4)
        assert b.height == pytest.approx(0.4)
        assert b.area == pytest.approx(0.16)
        assert b.center == pytest.approx((0.3, 0.4))

    @pytest.mark.parametrize(
        "coords",
        [
            (0.5, 0.1, 0.5, 0.9),  # zero width
            (0.6, 0.1, 0.5, 0.9),  # x1 > x2
            (0.1, 0.9, 0.5, 0.1),  # y1 > y2
            (-0.1, 0.1, 0.5, 0.9),  # out of range
            (0.1, 0.1, 1.5, 0.9),
            (float("nan"), 0.1, 0.5, 0.9),
        ],
    )
    def test_invalid(self, coords):
        with pytest.raises(InvalidBoxError):
            Box(*coords)


class TestIou:
    def test_known_value(self):
        a = Box(0.0, 0.0, 0.5, 0.5)
        b = Box(0.25, 0.25, 0.75, 0.75)
        # intersection 0.25^2, union 2*0.25 - 0.0625
        assert iou(a, b) == pytest.approx(0.0625 / 0.4375)

    def test_disjoint(self):
        assert iou(Box(0.0, 0.0, 0.2, 0.2), Box(0.5, 0.5, 0.9, 0.9)) == 0.0

    @given(boxes_strategy(), boxes_strategy())
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0 + 1e-12
        assert v == pytest.approx(iou(b, a))

    @given(boxes_strategy())
    def test_self_iou(self, a):
        assert iou(a, a) == pytest.approx(1.0)


class TestMatchBoxes:
    def test_one_to_one(self):
        gt = [Box(0.0, 0.0, 0.3, 0.3), Box(0.6, 0.6, 0.9, 0.9)]
        det = [Box(0.61, 0.6, 0.9, 0.9), Box(0.01, 0.0, 0.3, 0.3)]
        m = match_boxes(det, gt, 0.5)
        assert m.pairs == {0: 1, 1: 0}
        assert m.gt_to_detected() == {1: 0, 0: 1}

    def test_threshold_excludes(self):
        gt = [Box(0.0, 0.0, 0.3, 0.3)]
        det = [Box(0.25, 0.25, 0.55, 0.55)]
        assert match_boxes(det, gt, 0.5).pairs == {}

    def test_greedy_prefers_higher_iou(self):
        gt = [Box(0.0, 0.0, 0.4, 0.4)]
        det = [Box(0.05, 0.0, 0.4, 0.4), Box(0.0, 0.0, 0.4, 0.4)]
        m = match_boxes(det, gt, 0.5)
        assert m.pairs == {1: 0}

    @given(st.lists(boxes_strategy(), max_size=6), st.lists(boxes_strategy(), max_size=6))
    def test_matching_is_injective(self, det, gt):
        m = match_boxes(det, gt, 0.5)
        assert len(set(m.pairs.values())) == len(m.pairs)
        for di, gi in m.pairs.items():
            assert iou(det[di], gt[gi]) >= 0.5


class TestPositionPredicate:
    def test_thirds(self):
        left = Box(0.0, 0.4, 0.2, 0.6)
        assert position_predicate(left, "left")
        assert not position_predicate(left, "right")
        assert position_predicate(left, "middle-v")
        mid = Box(0.4, 0.4, 0.6, 0.6)
        assert position_predicate(mid, "middle-h")
        assert position_predicate(mid, "middle-v")

    @given(boxes_strategy())
    def test_exactly_one_horizontal_and_vertical(self, b):
        horiz = [c for c in ("left", "middle-h", "right") if position_predicate(b, c)]
        vert = [c for c in ("top", "middle-v", "bottom") if position_predicate(b, c)]
        assert len(horiz) == 1 and len(vert) == 1

    def test_category_names_cover_vocab(self):
        assert set(POSITION_CATEGORIES) == {
            "left", "middle-h", "right", "top", "middle-v", "bottom"
        }


class TestVocabulary:
    def test_round_trip(self, vocab, tmp_path):
        data = vocab.to_json_dict()
        again = Vocabulary.from_json_dict(json.loads(json.dumps(data)))
        assert tuple(again.object_names) == tuple(vocab.object_names)
        assert again.concepts == vocab.concepts

    def test_lookup_errors(self, vocab):
        with pytest.raises(VocabularyError):
            vocab.object_id("unicorn")
        with pytest.raises(VocabularyError):
            vocab.concept("nope")
        with pytest.raises(VocabularyError):
            vocab.category_id("color", "wood")  # wood is a material

    def test_category_id(self, vocab):
        assert vocab.category_id("color", "red") == vocab.attribute_id("red")
