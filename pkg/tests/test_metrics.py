"""Evaluation metrics: top-k, AP, AUC, d-prime."""

import math

import numpy as np
import pytest

from playback.metrics import (average_precision, binary_auc, compute_metrics,
                              d_prime_from_auc, inverse_normal_cdf,
                              top_k_accuracy)


def normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


class TestInverseNormalCdf:
    def test_known_quantiles(self):
        assert inverse_normal_cdf(0.5) == pytest.approx(0.0, abs=1e-12)
        assert inverse_normal_cdf(0.975) == pytest.approx(1.959963985, abs=1e-8)
        assert inverse_normal_cdf(0.025) == pytest.approx(-1.959963985, abs=1e-8)

    def test_roundtrip_accuracy_below_1e9(self):
        for p in [1e-6, 0.01, 0.3, 0.5, 0.7, 0.978, 0.999, 1 - 1e-6]:
            x = inverse_normal_cdf(p)
            assert normal_cdf(x) == pytest.approx(p, abs=1e-9)

    def test_domain(self):
        with pytest.raises(ValueError):
            inverse_normal_cdf(0.0)


class TestDPrime:
    def test_chance_level_is_zero(self):
        assert d_prime_from_auc(0.5) == 0.0

    def test_reference_operating_point(self):
        assert d_prime_from_auc(0.978) == pytest.approx(2.846, abs=0.01)

    def test_roundtrip_through_analytic_auc(self):
        for d in (0.5, 1.0, 2.0, 3.0):
            auc = normal_cdf(d / math.sqrt(2.0))
            assert d_prime_from_auc(auc) == pytest.approx(d, abs=1e-6)

    def test_perfect_auc_capped(self):
        assert math.isfinite(d_prime_from_auc(1.0))
        assert math.isfinite(d_prime_from_auc(0.0))


class TestTopK:
    def test_basic_and_tie_breaking(self):
        scores = np.array([[0.1, 0.9, 0.0], [0.5, 0.5, 0.0]])
        labels = np.array([1, 0])
        assert top_k_accuracy(scores, labels, 1) == 100.0
        labels = np.array([1, 1])  # tie at 0.5 resolves to class 0
        assert top_k_accuracy(scores, labels, 1) == 50.0

    def test_top5_with_fewer_classes(self):
        scores = np.random.default_rng(0).uniform(size=(10, 3))
        assert top_k_accuracy(scores, np.zeros(10, dtype=int), 5) == 100.0

    def test_topk_nested(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(size=(50, 10))
        labels = rng.integers(0, 10, 50)
        t1 = top_k_accuracy(scores, labels, 1)
        t5 = top_k_accuracy(scores, labels, 5)
        assert 0 <= t1 <= t5 <= 100


class TestAveragePrecision:
    def test_perfect_ranking(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        positives = np.array([1.0, 1.0, 0.0, 0.0])
        assert average_precision(scores, positives) == 1.0

    def test_hand_case(self):
        # ranked: pos, neg, pos -> AP = (1/1 + 2/3) / 2
        scores = np.array([0.9, 0.5, 0.3])
        positives = np.array([1.0, 0.0, 1.0])
        assert average_precision(scores, positives) == pytest.approx((1.0 + 2.0 / 3.0) / 2)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(4, 30))
            scores = rng.uniform(size=n)
            positives = (rng.uniform(size=n) > 0.6).astype(float)
            if positives.sum() in (0, n):
                continue
            order = np.argsort(-scores, kind="stable")
            hits = 0
            total = 0.0
            for rank, idx in enumerate(order, start=1):
                if positives[idx]:
                    hits += 1
                    total += hits / rank
            np.testing.assert_allclose(average_precision(scores, positives),
                                       total / positives.sum())


class TestAuc:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        positives = np.array([1.0, 1.0, 0.0, 0.0])
        assert binary_auc(scores, positives) == 1.0

    def test_chance_with_ties(self):
        scores = np.zeros(10)
        positives = np.array([1.0] * 5 + [0.0] * 5)
        assert binary_auc(scores, positives) == pytest.approx(0.5)

    def test_matches_pairwise_count(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            n = int(rng.integers(4, 25))
            scores = np.round(rng.uniform(size=n), 1)  # force ties
            positives = (rng.uniform(size=n) > 0.5).astype(float)
            if positives.sum() in (0, n):
                continue
            pos = scores[positives > 0]
            neg = scores[positives == 0]
            wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
            expected = wins / (len(pos) * len(neg))
            np.testing.assert_allclose(binary_auc(scores, positives), expected)


class TestComputeMetrics:
    def test_perfect_three_class_toy(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        scores = np.eye(3)[labels] * 0.8 + 0.1
        report = compute_metrics(scores, labels)
        assert report.top1 == 100.0
        assert report.mAP == 1.0
        assert report.auc == 1.0
        # AUC is capped at 1 - 1e-12 before the probit
        assert math.isfinite(report.d_prime) and report.d_prime > 9.0

    def test_uniform_scores_near_chance(self):
        rng = np.random.default_rng(4)
        n = 4000
        labels = rng.integers(0, 2, n)
        scores = rng.uniform(size=(n, 2))
        report = compute_metrics(scores, labels)
        assert report.auc == pytest.approx(0.5, abs=0.03)

    def test_class_without_positives_excluded(self, caplog):
        labels = np.array([0, 0, 1, 1])
        scores = np.random.default_rng(5).uniform(size=(4, 3))
        with caplog.at_level("WARNING"):
            report = compute_metrics(scores, labels)
        assert "excluded" in caplog.text
        assert 0.0 <= report.mAP <= 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            compute_metrics(np.array([[np.nan, 0.0]]), np.array([0]))

    def test_report_invariants(self):
        rng = np.random.default_rng(6)
        scores = rng.uniform(size=(40, 6))
        labels = rng.integers(0, 6, 40)
        report = compute_metrics(scores, labels)
        assert 0 <= report.top1 <= report.top5 <= 100
        assert 0 <= report.mAP <= 1 and 0 <= report.auc <= 1
