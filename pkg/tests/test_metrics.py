import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanevo.losses import accuracy, log_softmax, loss, loss_and_grad, metrics, roc_auc


def pairwise_auc(scores, labels):
    """O(n^2) oracle: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


class TestLoss:
    @pytest.mark.parametrize("C", [2, 3, 5, 10])
    def test_uniform_logits(self, C):
        assert abs(loss(np.zeros((7, C)), np.arange(7) % C) - math.log(C)) <= 1e-12

    def test_saturated(self):
        z = np.zeros((4, 3))
        y = np.array([0, 2, 1, 1])
        z[np.arange(4), y] = 1000.0
        assert loss(z, y) == pytest.approx(0.0, abs=1e-12)

    def test_mse_zero(self):
        t = np.array([1.0, -2.0, 3.5])
        assert loss(t[:, None], t, "mse") == 0.0

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            loss(np.zeros((2, 3)), np.array([0, 3]))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            loss(np.zeros((2, 2)), np.array([0, 1]), "hinge")

    def test_grad_fd(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(5, 3))
        y = rng.integers(0, 3, 5)
        _, g = loss_and_grad(z, y)
        h = 1e-6
        for idx in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            assert g[idx] == pytest.approx((loss(zp, y) - loss(zm, y)) / (2 * h), abs=1e-8)

    def test_log_softmax_stable(self):
        out = log_softmax(np.array([[1e4, 0.0, -1e4]]))
        assert np.all(np.isfinite(out[:, :2]))


class TestAccuracy:
    def test_ties_go_low(self):
        assert accuracy(np.zeros((3, 3)), np.array([0, 0, 0])) == 1.0
        assert accuracy(np.zeros((2, 3)), np.array([1, 2])) == 0.0


class TestAuc:
    def test_perfect(self):
        z = np.array([[1.0, -1.0], [1.0, -2.0], [-1.0, 1.0], [-3.0, 2.0]])
        m = metrics(z, np.array([0, 0, 1, 1]))
        assert m["accuracy"] == 1.0 and m["auc"] == 1.0

    def test_all_tied(self):
        assert roc_auc(np.ones(6), np.array([0, 1, 0, 1, 0, 1])) == 0.5

    def test_ten_samples_oracle(self):
        rng = np.random.default_rng(3)
        s = rng.integers(0, 4, 10).astype(float)
        y = np.array([0, 1] * 5)
        assert roc_auc(s, y) == pairwise_auc(s, y)

    def test_hundred_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(2, 60))
            y = rng.integers(0, 2, n)
            y[0], y[1] = 0, 1
            s = np.round(rng.normal(size=n), int(rng.integers(0, 3)))  # rounding forces ties
            assert roc_auc(s, y) == pairwise_auc(s, y)

    def test_single_class_nan(self):
        assert math.isnan(roc_auc(np.arange(4.0), np.zeros(4, int)))

    def test_multiclass_has_no_auc(self):
        assert metrics(np.zeros((3, 3)), np.array([0, 1, 2]))["auc"] is None

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5).map(lambda v: round(v, 3)), min_size=4, max_size=30), st.integers(0, 2**31 - 1))
    def test_monotone_invariance(self, vals, seed):
        s = np.array(vals)
        y = np.random.default_rng(seed).integers(0, 2, s.size)
        y[0], y[1] = 0, 1
        assert roc_auc(s, y) == roc_auc(np.exp(s) * 3 + 1, y)

    def test_uses_class_one_probability_order(self):
        # softmax(z)[:, 1] saturates to 1.0 for both rows; the logit gap does not
        z = np.array([[0.0, 800.0], [0.0, 900.0], [0.0, -1.0]])
        y = np.array([0, 1, 0])
        assert metrics(z, y)["auc"] == 1.0
