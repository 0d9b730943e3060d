import numpy as np
import pytest

from mirrormamba.metrics import (EvalResult, accuracy, binarize, evaluate, f_beta,
                                 format_table, iou, mae)


def as_f(a):
    return np.asarray(a, dtype=np.float32)


class TestWorkedExamples:
    def test_iou_two_sixths(self):
        # 4 predicted px, 4 gt px, overlap 2: intersection 2, union 6
        pred = as_f([[1, 1, 0, 0],
                     [1, 1, 0, 0],
                     [0, 0, 0, 0],
                     [0, 0, 0, 0]])
        gt = as_f([[0, 1, 0, 0],
                   [0, 1, 0, 0],
                   [0, 1, 1, 0],
                   [0, 0, 0, 0]])
        assert iou(pred, gt) == pytest.approx(2 / 6)

    def test_f_beta_half_precision_full_recall(self):
        # TP=2, FP=2, FN=0: P=0.5, R=1.0 -> 1.3*0.5/(0.15+1)
        pred = as_f([[1, 1, 1, 1],
                     [0, 0, 0, 0]])
        gt = as_f([[1, 1, 0, 0],
                   [0, 0, 0, 0]])
        assert f_beta(pred, gt) == pytest.approx(1.3 * 0.5 / 1.15)
        assert f_beta(pred, gt) == pytest.approx(0.5652, abs=1e-4)

    def test_accuracy_three_wrong_of_sixteen(self):
        pred = as_f([[1, 1, 0, 0],
                     [1, 1, 0, 0],
                     [0, 0, 0, 0],
                     [0, 0, 0, 0]])
        gt = as_f([[1, 0, 0, 0],
                   [1, 1, 0, 0],
                   [0, 0, 1, 1],
                   [0, 0, 0, 0]])
        assert accuracy(pred, gt) == pytest.approx(13 / 16)

    def test_mae_half(self):
        pred = np.full((4, 4), 0.5, dtype=np.float32)
        gt = as_f([[1, 1, 1, 1]] * 2 + [[0, 0, 0, 0]] * 2)
        assert mae(pred, gt) == pytest.approx(0.5)


class TestConventions:
    def test_empty_union_is_perfect(self):
        z = np.zeros((4, 4), dtype=np.float32)
        assert iou(z, z) == 1.0
        assert accuracy(z, z) == 1.0
        assert mae(z, z) == 0.0

    def test_f_beta_zero_cases(self):
        z = np.zeros((4, 4), dtype=np.float32)
        o = np.ones((4, 4), dtype=np.float32)
        assert f_beta(z, o) == 0.0  # no predicted positives
        assert f_beta(o, z) == 0.0  # no gt positives
        assert f_beta(z, z) == 0.0  # tp = 0

    def test_mae_is_unthresholded(self):
        pred = np.full((2, 2), 0.4, dtype=np.float32)
        gt = as_f([[1, 0], [0, 1]])
        assert mae(pred, gt) == pytest.approx((0.6 + 0.4 + 0.4 + 0.6) / 4)

    def test_binarize_strict_inequality(self):
        pred = as_f([[0.5, 0.500001], [0.0, 1.0]])
        np.testing.assert_array_equal(binarize(pred), as_f([[0, 1], [0, 1]]))

    def test_binarize_adaptive(self):
        pred = as_f([[0.1, 0.1], [0.1, 0.9]])  # mean 0.3, adaptive thresh 0.6
        np.testing.assert_array_equal(binarize(pred, adaptive=True),
                                      as_f([[0, 0], [0, 1]]))

    def test_input_validation(self):
        with pytest.raises(ValueError):
            iou(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(ValueError):
            iou(np.zeros((2, 2)), np.full((2, 2), 0.5))  # gt must be binary
        with pytest.raises(ValueError):
            iou(np.zeros((0, 2)), np.zeros((0, 2)))


class TestAgainstBruteForce:
    def test_reduced_brute_force_sweep(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            pred_bin = (rng.random((8, 8)) > 0.5).astype(np.float32)
            gt = (rng.random((8, 8)) > 0.7).astype(np.float32)
            tp = fp = fn = tn = 0
            for y in range(8):
                for x in range(8):
                    p, g = pred_bin[y, x] > 0, gt[y, x] > 0
                    tp += p and g
                    fp += p and not g
                    fn += (not p) and g
                    tn += (not p) and (not g)
            union = tp + fp + fn
            assert iou(pred_bin, gt) == pytest.approx(tp / union if union else 1.0)
            assert accuracy(pred_bin, gt) == pytest.approx((tp + tn) / 64)
            if tp and (tp + fp) and (tp + fn):
                prec, rec = tp / (tp + fp), tp / (tp + fn)
                want = 1.3 * prec * rec / (0.3 * prec + rec)
                assert f_beta(pred_bin, gt) == pytest.approx(want)
            else:
                assert f_beta(pred_bin, gt) == 0.0

    def test_flipping_fp_to_tn_never_hurts(self):
        rng = np.random.default_rng(3)
        pred = (rng.random((8, 8)) > 0.4).astype(np.float32)
        gt = (rng.random((8, 8)) > 0.6).astype(np.float32)
        fps = np.argwhere((pred > 0) & (gt == 0))
        assert len(fps)
        before_iou, before_acc = iou(pred, gt), accuracy(pred, gt)
        y, x = fps[0]
        pred2 = pred.copy()
        pred2[y, x] = 0.0
        assert iou(pred2, gt) >= before_iou
        assert accuracy(pred2, gt) > before_acc


class TestAggregation:
    def _pairs(self):
        preds = [as_f([[0.9, 0.1], [0.2, 0.8]]), as_f([[0.6, 0.6], [0.1, 0.1]])]
        gts = [as_f([[1, 0], [0, 1]]), as_f([[1, 0], [0, 0]])]
        return preds, gts

    def test_unweighted_mean(self):
        preds, gts = self._pairs()
        res = evaluate(preds, gts)
        singles = [evaluate([p], [g]) for p, g in zip(preds, gts)]
        assert res.iou == pytest.approx(np.mean([s.iou for s in singles]))
        assert res.mae == pytest.approx(np.mean([s.mae for s in singles]))
        assert res.to_dict()["num_samples"] == 2

    def test_per_sample_rows(self):
        preds, gts = self._pairs()
        d = evaluate(preds, gts).to_dict()
        assert len(d["per_sample"]) == 2
        assert set(d["per_sample"][0]) >= {"iou", "f_beta", "mae", "accuracy"}

    def test_count_mismatch(self):
        preds, gts = self._pairs()
        with pytest.raises(ValueError):
            evaluate(preds, gts[:1])

    def test_format_table(self):
        preds, gts = self._pairs()
        res = evaluate(preds, gts)
        table = format_table({"baseline": res, "full": res})
        lines = table.splitlines()
        assert "IoU" in lines[0] and "MAE" in lines[0]
        assert any(l.startswith("baseline") for l in lines)
        assert any(l.startswith("full") for l in lines)
