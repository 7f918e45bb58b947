import math

import numpy as np
import pytest

from weakloc.assignment import (LABEL_IGNORE, LABEL_NEGATIVE, LABEL_POSITIVE,
                                NO_MATCH, AnchorSet, AssignmentResult,
                                assign_labels, generate_anchors, sample_minibatch)
from weakloc.geometry import Box, encode_deltas, iou


class TestGenerateAnchors:
    def test_count_single_template(self):
        a = generate_anchors((64, 64), 16, [24.0], [1.0])
        assert len(a) == 16

    def test_count_and_first_center_two_scales(self):
        a = generate_anchors((64, 64), 16, [16.0, 32.0], [1.0])
        assert len(a) == 32
        first = a.box(0)
        assert first.center == (8.0, 8.0)
        assert (first.width, first.height) == (16.0, 16.0)

    def test_ratio_preserves_area(self):
        a = generate_anchors((32, 32), 16, [16.0], [2.0])
        box = a.box(0)
        assert box.width == pytest.approx(16.0 * math.sqrt(2.0))
        assert box.height == pytest.approx(16.0 / math.sqrt(2.0))
        assert box.area == pytest.approx(256.0)

    def test_ordering_row_major_then_scale_then_ratio(self):
        a = generate_anchors((64, 32), 16, [8.0, 16.0], [0.5, 2.0])
        per_loc = 4
        assert len(a) == 4 * 2 * per_loc
        # location order: (8,8), (24,8), (40,8), (56,8), (8,24), ...
        assert a.box(0).center == (8.0, 8.0)
        assert a.box(per_loc).center == (24.0, 8.0)
        assert a.box(4 * per_loc).center == (8.0, 24.0)
        # within a location: scale-major, ratio-minor
        assert a.box(0).area == pytest.approx(64.0)
        assert a.box(1).area == pytest.approx(64.0)
        assert a.box(2).area == pytest.approx(256.0)
        widths = [a.box(i).width for i in range(2)]
        assert widths[0] < widths[1]  # ratio 0.5 narrower than ratio 2

    def test_anchors_may_overhang_image(self):
        a = generate_anchors((32, 32), 16, [48.0], [1.0])
        assert a.boxes[:, 0].min() < 0

    def test_rejects_non_dividing_stride(self):
        with pytest.raises(ValueError):
            generate_anchors((60, 64), 16, [16.0], [1.0])

    def test_rejects_empty_templates(self):
        with pytest.raises(ValueError):
            generate_anchors((64, 64), 16, [], [1.0])


def _anchors_from_boxes(boxes):
    """Hand-built AnchorSet for threshold tests."""
    arr = np.array([b.as_list() for b in boxes])
    return AnchorSet(boxes=arr, stride=1, scales=(1.0,), ratios=(1.0,),
                     image_size=(1, 1))


def _iou_targets(target_ious, gt=Box(0, 0, 10, 10)):
    """Construct anchor boxes with prescribed IoU against one ground truth:
    each anchor shares the gt's left edge and height, width chosen so that
    IoU = w_overlap / union hits the requested value exactly."""
    anchors = []
    for t in target_ious:
        # anchor [0, 0, w, 10] vs gt [0,0,10,10]: iou = min(w,10)/max(w,10)
        w = 10.0 * t
        anchors.append(Box(0, 0, w, 10))
    for a, t in zip(anchors, target_ious):
        assert iou(a, gt) == pytest.approx(t)
    return anchors, gt


class TestAssignLabels:
    def test_threshold_bands(self):
        anchors, gt = _iou_targets([0.8, 0.4, 0.1])
        result = assign_labels(_anchors_from_boxes(anchors), [gt], 0.7, 0.3)
        assert list(result.labels) == [LABEL_POSITIVE, LABEL_IGNORE, LABEL_NEGATIVE]
        assert list(result.matched_gt) == [0, NO_MATCH, NO_MATCH]

    def test_forced_best_match(self):
        anchors, gt = _iou_targets([0.2, 0.5, 0.4])
        result = assign_labels(_anchors_from_boxes(anchors), [gt], 0.7, 0.3)
        assert list(result.labels) == [LABEL_NEGATIVE, LABEL_POSITIVE, LABEL_IGNORE]
        assert result.matched_gt[1] == 0

    def test_no_pseudo_boxes_all_negative(self):
        anchors, _ = _iou_targets([0.8, 0.4])
        result = assign_labels(_anchors_from_boxes(anchors), [], 0.7, 0.3)
        assert (result.labels == LABEL_NEGATIVE).all()
        assert (result.matched_gt == NO_MATCH).all()
        assert (result.max_iou == 0).all()

    def test_later_forced_match_wins_collision(self):
        # both gts overlap only the single anchor, neither reaches fg
        anchor = Box(0, 0, 10, 10)
        gts = [Box(0, 0, 4, 4), Box(6, 6, 10, 10)]
        result = assign_labels(_anchors_from_boxes([anchor]), gts, 0.7, 0.05)
        assert result.labels[0] == LABEL_POSITIVE
        assert result.matched_gt[0] == 1  # higher index wins

    def test_forced_match_overrides_negative(self):
        anchors, gt = _iou_targets([0.1, 0.05])
        result = assign_labels(_anchors_from_boxes(anchors), [gt], 0.7, 0.3)
        assert result.labels[0] == LABEL_POSITIVE  # was negative by threshold
        assert result.labels[1] == LABEL_NEGATIVE

    def test_rejects_crossed_thresholds(self):
        anchors, gt = _iou_targets([0.5])
        with pytest.raises(ValueError):
            assign_labels(_anchors_from_boxes(anchors), [gt], 0.3, 0.7)


def _random_instance(rng):
    """Grid anchors + pseudo boxes drawn like the synthetic scenes."""
    stride = int(rng.choice([8, 16]))
    size = int(rng.choice([32, 64]))
    n_scales = int(rng.integers(1, 3))
    scales = sorted(rng.uniform(10, 40, size=n_scales))
    ratios = [1.0] if rng.random() < 0.5 else [0.5, 1.0, 2.0]
    anchors = generate_anchors((size, size), stride, scales, ratios)
    n_gt = int(rng.integers(1, 5))
    gts = []
    for _ in range(n_gt):
        w = rng.uniform(6, size / 2)
        h = rng.uniform(6, size / 2)
        x1 = rng.uniform(0, size - w)
        y1 = rng.uniform(0, size - h)
        gts.append(Box(x1, y1, x1 + w, y1 + h))
    fg = rng.uniform(0.5, 0.8)
    bg = rng.uniform(0.2, fg - 0.1)
    return anchors, gts, fg, bg


class TestAssignmentInvariants:
    def test_500_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            anchors, gts, fg, bg = _random_instance(rng)
            result = assign_labels(anchors, gts, fg, bg)
            labels = result.labels
            # labels partition the anchor set
            assert (np.isin(labels, [LABEL_POSITIVE, LABEL_NEGATIVE, LABEL_IGNORE])).all()
            counts = [(labels == v).sum() for v in
                      (LABEL_POSITIVE, LABEL_NEGATIVE, LABEL_IGNORE)]
            assert sum(counts) == len(anchors)
            # every pseudo box keeps at least one matched positive anchor
            matched = set(result.matched_gt[labels == LABEL_POSITIVE])
            assert matched.issuperset(range(len(gts)))
            # matched_gt present iff positive
            assert ((result.matched_gt != NO_MATCH) == (labels == LABEL_POSITIVE)).all()
            # positives below bg_thresh can only be forced best matches: their
            # IoU with the matched box is maximal among anchors not claimed by
            # any other pseudo box
            weak = np.flatnonzero((labels == LABEL_POSITIVE) & (result.max_iou < bg))
            for i in weak:
                j = result.matched_gt[i]
                column = np.array([iou(anchors.box(k), gts[j]) for k in range(len(anchors))])
                available = (result.matched_gt == j) | (result.matched_gt == NO_MATCH)
                assert column[i] == column[available].max()


class TestSampleMinibatch:
    def _assignment(self, n_pos, n_neg, n_ignore=0):
        labels = np.array([LABEL_POSITIVE] * n_pos + [LABEL_NEGATIVE] * n_neg
                          + [LABEL_IGNORE] * n_ignore)
        matched = np.where(labels == LABEL_POSITIVE, 0, NO_MATCH)
        n = labels.size
        boxes = np.zeros((n, 4))
        boxes[:, 0] = np.arange(n) * 20.0
        boxes[:, 1] = 0.0
        boxes[:, 2] = boxes[:, 0] + 10.0
        boxes[:, 3] = 10.0
        anchors = AnchorSet(boxes=boxes, stride=1, scales=(1.0,), ratios=(1.0,),
                            image_size=(1, 1))
        return (AssignmentResult(labels=labels, matched_gt=matched,
                                 max_iou=np.zeros(n)), anchors, [Box(0, 0, 10, 10)])

    def test_scarce_positives_backfilled_with_negatives(self):
        assignment, anchors, gts = self._assignment(10, 400)
        batch = sample_minibatch(assignment, anchors, gts, 256, (1, 1),
                                 np.random.default_rng(0))
        assert batch.pos_count == 10
        assert batch.neg_count == 246
        assert len(batch) == 256

    def test_one_to_four_ratio_quota(self):
        assignment, anchors, gts = self._assignment(200, 400)
        batch = sample_minibatch(assignment, anchors, gts, 100, (1, 4),
                                 np.random.default_rng(0))
        assert batch.pos_count == 20
        assert batch.neg_count == 80

    def test_same_seed_identical(self):
        assignment, anchors, gts = self._assignment(40, 300, 10)
        a = sample_minibatch(assignment, anchors, gts, 64, (1, 3),
                             np.random.default_rng(7))
        b = sample_minibatch(assignment, anchors, gts, 64, (1, 3),
                             np.random.default_rng(7))
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.target_labels, b.target_labels)
        assert np.array_equal(a.target_deltas, b.target_deltas)

    def test_exact_ratio_with_plentiful_candidates(self):
        assignment, anchors, gts = self._assignment(500, 500)
        for ratio in [(1, 1), (1, 4), (2, 3), (1, 3)]:
            batch_size = 60  # divisible by every pos+neg above
            batch = sample_minibatch(assignment, anchors, gts, batch_size, ratio,
                                     np.random.default_rng(3))
            assert batch.neg_count * ratio[0] == batch.pos_count * ratio[1]
            assert len(batch) == batch_size

    def test_scarce_negatives_backfilled_with_positives(self):
        assignment, anchors, gts = self._assignment(300, 5)
        batch = sample_minibatch(assignment, anchors, gts, 100, (1, 4),
                                 np.random.default_rng(0))
        assert batch.neg_count == 5
        assert batch.pos_count == 95

    def test_empty_batch_signaled(self):
        assignment, anchors, gts = self._assignment(0, 0, 8)
        batch = sample_minibatch(assignment, anchors, gts, 32, (1, 1),
                                 np.random.default_rng(0))
        assert batch.is_empty
        assert len(batch) == 0

    def test_targets_encode_matched_box(self):
        assignment, anchors, gts = self._assignment(3, 10)
        batch = sample_minibatch(assignment, anchors, gts, 8, (1, 1),
                                 np.random.default_rng(11))
        for row, anchor_idx in zip(batch.target_deltas, batch.indices[:batch.pos_count]):
            want = encode_deltas(gts[0], anchors.box(anchor_idx))
            assert np.allclose(row, want.as_array())

    def test_rejects_bad_ratio_and_batch(self):
        assignment, anchors, gts = self._assignment(4, 4)
        with pytest.raises(ValueError):
            sample_minibatch(assignment, anchors, gts, 1, (1, 1),
                             np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_minibatch(assignment, anchors, gts, 16, (0, 1),
                             np.random.default_rng(0))
