import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import random_flow, random_label_map
from flowseg.core import ClassSpace, FlowField, LabelMap
from flowseg.errors import ShapeError
from flowseg.metrics import (
    ConfusionMatrix,
    confusion_accumulate,
    mean_percent,
    merge,
    pl_consistency,
    pl_pred_consis,
    pl_warped,
    summarize,
)
from flowseg.refine import refine_consistency, retained_fraction

SPACE2 = ClassSpace(2)


def lm(rows, k=2):
    return LabelMap(np.array(rows, dtype=np.uint8), ClassSpace(k))


def naive_scores(pred: LabelMap, gt: LabelMap, k: int):
    """Dictionary-arithmetic reference for IoU and Acc."""
    tp = {c: 0 for c in range(k)}
    fp = {c: 0 for c in range(k)}
    fn = {c: 0 for c in range(k)}
    for g, p in zip(gt.data.ravel().tolist(), pred.data.ravel().tolist()):
        if g == 255 or p == 255:
            continue
        if g == p:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    iou = {}
    acc = {}
    for c in range(k):
        union = tp[c] + fp[c] + fn[c]
        if union:
            iou[c] = 100.0 * tp[c] / union
        if tp[c] + fn[c]:
            acc[c] = 100.0 * tp[c] / (tp[c] + fn[c])
    miou = sum(iou.values()) / len(iou) if iou else 0.0
    macc = sum(acc.values()) / len(acc) if acc else 0.0
    return iou, acc, miou, macc


class TestAccumulate:
    def test_diagonal(self):
        pred = lm([[0, 0], [0, 0]])
        gt = lm([[0, 0], [0, 0]])
        m = confusion_accumulate(pred, gt, ConfusionMatrix.empty(SPACE2))
        assert m.counts[0, 0] == 4

    def test_hand_enumerated_confusion(self):
        pred = lm([[0, 1, 1, 0]])
        gt = lm([[0, 1, 0, 0]])
        m = confusion_accumulate(pred, gt, ConfusionMatrix.empty(SPACE2))
        report = summarize(m)
        by_class = {s.class_id: s for s in report.per_class}
        assert by_class[0].iou == pytest.approx(100 * 2 / 3)
        assert by_class[1].iou == pytest.approx(100 * 1 / 2)
        assert report.miou == pytest.approx(58.33, abs=0.01)

    def test_gt_all_ignore(self):
        pred = lm([[0, 1]])
        gt = lm([[255, 255]])
        m = confusion_accumulate(pred, gt, ConfusionMatrix.empty(SPACE2))
        assert m.counts.sum() == 0
        assert m.rejected.sum() == 0

    def test_pred_ignore_goes_to_rejected(self):
        pred = lm([[255, 0]])
        gt = lm([[1, 0]])
        m = confusion_accumulate(pred, gt, ConfusionMatrix.empty(SPACE2))
        assert m.counts[0, 0] == 1
        assert m.rejected[1] == 1

    def test_class_space_mismatch(self):
        pred = lm([[0]], k=2)
        gt = lm([[0]], k=3)
        with pytest.raises(ShapeError):
            confusion_accumulate(pred, gt, ConfusionMatrix.empty(SPACE2))


class TestMerge:
    def test_identity_element(self, rng):
        pred = random_label_map(rng, 4, 4, 2)
        gt = random_label_map(rng, 4, 4, 2)
        m = confusion_accumulate(pred, gt, ConfusionMatrix.empty(SPACE2))
        merged = merge(m, ConfusionMatrix.empty(SPACE2))
        assert np.array_equal(merged.counts, m.counts)
        assert np.array_equal(merged.rejected, m.rejected)

    def test_commutative(self, rng):
        a = confusion_accumulate(
            random_label_map(rng, 3, 3, 2),
            random_label_map(rng, 3, 3, 2),
            ConfusionMatrix.empty(SPACE2),
        )
        b = confusion_accumulate(
            random_label_map(rng, 3, 3, 2),
            random_label_map(rng, 3, 3, 2),
            ConfusionMatrix.empty(SPACE2),
        )
        assert np.array_equal(merge(a, b).counts, merge(b, a).counts)

    def test_row_partition_equals_whole(self, rng):
        pred = random_label_map(rng, 6, 5, 2)
        gt = random_label_map(rng, 6, 5, 2)
        whole = confusion_accumulate(pred, gt, ConfusionMatrix.empty(SPACE2))
        acc = ConfusionMatrix.empty(SPACE2)
        for i in range(6):
            acc = merge(
                acc,
                confusion_accumulate(
                    LabelMap(pred.data[i : i + 1], SPACE2),
                    LabelMap(gt.data[i : i + 1], SPACE2),
                    ConfusionMatrix.empty(SPACE2),
                ),
            )
        assert np.array_equal(acc.counts, whole.counts)
        assert np.array_equal(acc.rejected, whole.rejected)


class TestSummarize:
    def test_perfect_prediction(self, rng):
        m = random_label_map(rng, 5, 5, 3, ignore_prob=0)
        acc = confusion_accumulate(m, m, ConfusionMatrix.empty(ClassSpace(3)))
        report = summarize(acc)
        assert report.miou == pytest.approx(100.0)
        assert report.class_avg_acc == pytest.approx(100.0)

    def test_empty_matrix(self):
        report = summarize(ConfusionMatrix.empty(SPACE2))
        assert report.pixels_evaluated == 0
        assert report.per_class == ()
        assert report.miou == 0.0

    def test_matches_naive_oracle(self, rng):
        k = 4
        space = ClassSpace(k)
        for _ in range(40):
            pred = random_label_map(rng, 6, 6, k)
            gt = random_label_map(rng, 6, 6, k)
            acc = confusion_accumulate(pred, gt, ConfusionMatrix.empty(space))
            report = summarize(acc)
            iou, cacc, miou, macc = naive_scores(pred, gt, k)
            got_iou = {s.class_id: s.iou for s in report.per_class}
            assert set(got_iou) == set(iou)
            for c, v in iou.items():
                assert got_iou[c] == pytest.approx(v)
            assert report.miou == pytest.approx(miou)
            assert report.class_avg_acc == pytest.approx(macc)

    def test_permutation_invariance(self, rng):
        pred = random_label_map(rng, 4, 6, 3)
        gt = random_label_map(rng, 4, 6, 3)
        perm = rng.permutation(24)
        pred_p = LabelMap(pred.data.ravel()[perm].reshape(4, 6), pred.class_space)
        gt_p = LabelMap(gt.data.ravel()[perm].reshape(4, 6), gt.class_space)
        space = ClassSpace(3)
        a = summarize(confusion_accumulate(pred, gt, ConfusionMatrix.empty(space)))
        b = summarize(confusion_accumulate(pred_p, gt_p, ConfusionMatrix.empty(space)))
        assert a == b

    def test_class_universe_restriction(self):
        pred = lm([[0, 1, 2, 2]], k=3)
        gt = lm([[0, 1, 1, 2]], k=3)
        acc = confusion_accumulate(pred, gt, ConfusionMatrix.empty(ClassSpace(3)))
        full = summarize(acc)
        restricted = summarize(acc, class_universe=[0, 1])
        assert {s.class_id for s in restricted.per_class} == {0, 1}
        assert restricted.miou != pytest.approx(full.miou)

    def test_csv_shape(self):
        pred = lm([[0, 1, 1, 0]])
        gt = lm([[0, 1, 0, 0]])
        acc = confusion_accumulate(pred, gt, ConfusionMatrix.empty(SPACE2))
        csv = summarize(acc).to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "class,iou,acc"
        assert lines[-1].startswith("mean,")
        assert len(lines) == 4  # header + 2 classes + mean


class TestMeanPercent:
    def test_table_means(self):
        hrda = [96.4, 88.1, 94.0, 67.6, 75.3, 81.2, 95.0, 96.7, 81.0, 83.7, 95.0]
        no_fusion = [87.6, 83.0, 88.3, 66.1, 72.4, 77.3, 92.6, 94.4, 79.6, 81.3, 93.6]
        assert mean_percent(hrda) == pytest.approx(86.7, abs=0.05)
        assert mean_percent(no_fusion) == pytest.approx(83.3, abs=0.05)

    def test_skips_absent(self):
        assert mean_percent([50.0, None, 100.0]) == pytest.approx(75.0)

    def test_empty(self):
        assert mean_percent([]) == 0.0


class TestTemporalMetrics:
    def test_self_consistency_is_100(self, rng):
        pl = random_label_map(rng, 5, 5, 3, ignore_prob=0)
        report = pl_pred_consis(pl, pl, FlowField.zero(5, 5))
        assert report.miou == pytest.approx(100.0)
        for s in report.per_class:
            assert s.iou == pytest.approx(100.0)

    def test_total_disagreement_is_0(self):
        pl_t = lm([[0, 0]])
        pl_tpk = lm([[1, 1]])
        report = pl_pred_consis(pl_t, pl_tpk, FlowField.zero(2, 1))
        assert report.miou == pytest.approx(0.0)

    def test_warp_invalid_pixels_excluded(self):
        pl_t = lm([[0, 1]])
        pl_tpk = lm([[0, 1]])
        flow = FlowField(np.array([[0.0, 1.0]]), np.zeros((1, 2), np.float32))
        report = pl_pred_consis(pl_t, pl_tpk, flow)
        # pixel 1 samples out of frame; only pixel 0 is scored
        assert report.pixels_evaluated == 1
        assert report.retained_fraction == pytest.approx(0.5)

    def test_pl_warped_perfect(self, rng):
        gt = random_label_map(rng, 4, 4, 3, ignore_prob=0)
        report = pl_warped(gt, FlowField.zero(4, 4), gt)
        assert report.miou == pytest.approx(100.0)
        assert report.class_avg_acc == pytest.approx(100.0)

    def test_pl_consistency_perfect(self, rng):
        gt = random_label_map(rng, 4, 4, 3, ignore_prob=0)
        report = pl_consistency(gt, gt, FlowField.zero(4, 4), gt)
        assert report.miou == pytest.approx(100.0)
        assert report.retained_fraction == pytest.approx(1.0)

    def test_pl_consistency_empty_filter(self):
        pl_t = lm([[0, 0]])
        pl_tpk = lm([[1, 1]])
        gt = lm([[0, 0]])
        report = pl_consistency(pl_t, pl_tpk, FlowField.zero(2, 1), gt)
        assert report.retained_fraction == 0.0
        assert report.pixels_evaluated == 0

    def test_pl_consistency_is_composition(self, rng):
        # definitional equivalence with refine-then-summarize
        for _ in range(10):
            pl_t = random_label_map(rng, 5, 5, 3)
            pl_tpk = random_label_map(rng, 5, 5, 3)
            gt = random_label_map(rng, 5, 5, 3)
            flow = random_flow(rng, 5, 5, -2, 2, integer=True)
            report = pl_consistency(pl_t, pl_tpk, flow, gt)
            filtered = refine_consistency(pl_t, pl_tpk, flow)
            acc = confusion_accumulate(
                filtered, gt, ConfusionMatrix.empty(ClassSpace(3))
            )
            expect = summarize(acc)
            assert report.per_class == expect.per_class
            assert report.miou == expect.miou
            assert report.retained_fraction == pytest.approx(
                retained_fraction(filtered)
            )

    def test_adding_ignore_gt_changes_nothing(self, rng):
        space = ClassSpace(3)
        pred = random_label_map(rng, 4, 4, 3)
        gt = random_label_map(rng, 4, 4, 3, ignore_prob=0)
        base = summarize(
            confusion_accumulate(pred, gt, ConfusionMatrix.empty(space))
        )
        padded_pred = LabelMap(
            np.vstack([pred.data, np.zeros((2, 4), np.uint8)]), space
        )
        padded_gt = LabelMap(
            np.vstack([gt.data, np.full((2, 4), 255, np.uint8)]), space
        )
        padded = summarize(
            confusion_accumulate(padded_pred, padded_gt, ConfusionMatrix.empty(space))
        )
        assert padded == base


@settings(max_examples=25, deadline=None)
@given(
    pred=hnp.arrays(np.uint8, (3, 4), elements=st.sampled_from([0, 1, 2, 255])),
    gt=hnp.arrays(np.uint8, (3, 4), elements=st.sampled_from([0, 1, 2, 255])),
)
def test_merge_associative_property(pred, gt):
    space = ClassSpace(3)
    a = confusion_accumulate(
        LabelMap(pred, space), LabelMap(gt, space), ConfusionMatrix.empty(space)
    )
    b = confusion_accumulate(
        LabelMap(gt, space), LabelMap(pred, space), ConfusionMatrix.empty(space)
    )
    c = merge(a, a)
    left = merge(merge(a, b), c)
    right = merge(a, merge(b, c))
    assert np.array_equal(left.counts, right.counts)
    assert np.array_equal(left.rejected, right.rejected)
