import math

import numpy as np
import pytest

from cevt.entropy import ClassGevBank, build_gev_bank, prediction_entropy
from cevt.errors import DomainError, MetricUndefinedError
from cevt.gev import GevParams, gev_cdf, gev_sample
from cevt.openset import (
    compute_metrics,
    harmonic_open_set_score,
    open_set_score,
    predict_open_set,
    predict_open_set_batch,
)


@pytest.fixture
def bank():
    groups = [gev_sample(GevParams(0.4 + 0.1 * c, 0.1, 0.05), 300, seed=c) for c in range(4)]
    return build_gev_bank(groups, 0.4)


class TestPredict:
    def test_one_hot_is_known(self, bank):
        out = predict_open_set([0, 0, 1, 0], bank, sample_id="v")
        assert out.label == 2 and out.entropy == 0.0 and out.sample_id == "v"

    def test_threshold_boundary_is_known(self):
        p = [0.6, 0.4]
        h = prediction_entropy(p)
        g = GevParams(h, 0.1, 0.0)
        delta = float(gev_cdf(h, g))
        b = ClassGevBank([g, g], np.array([h, h]), delta, [False, False], math.log(2))
        assert predict_open_set(p, b).label == 0

    def test_uniform_is_unknown(self, bank):
        C = bank.n_classes
        assert np.all(bank.thresholds < math.log(C) - 0.1)
        out = predict_open_set(np.full(C, 1 / C), bank)
        assert out.label == C
        assert out.cdf_value == pytest.approx(float(gev_cdf(math.log(C), bank.per_class[0])))

    def test_label_iff_cdf_above_delta(self, bank):
        rng = np.random.default_rng(0)
        for p in rng.dirichlet(np.ones(4) * 0.5, 200):
            out = predict_open_set(p, bank)
            assert (out.label == 4) == (out.cdf_value > bank.delta)

    def test_scale_invariance(self, bank):
        rng = np.random.default_rng(1)
        for p in rng.dirichlet(np.ones(4), 50):
            q = 3.7 * p
            assert predict_open_set(q / q.sum(), bank).label == predict_open_set(p, bank).label

    def test_delta_override(self, bank):
        p = np.full(4, 0.25)
        assert predict_open_set(p, bank, delta=0.999999).label == 0

    def test_class_count_mismatch(self, bank):
        with pytest.raises(DomainError):
            predict_open_set([0.5, 0.5], bank)

    def test_batch_agrees(self, bank):
        probs = np.random.default_rng(2).dirichlet(np.ones(4), 300)
        expected = [predict_open_set(p, bank).label for p in probs]
        np.testing.assert_array_equal(predict_open_set_batch(probs, bank), expected)


class TestScores:
    def test_published_hos_and_os(self):
        assert harmonic_open_set_score(56.11, 94.44) == pytest.approx(70.40, abs=0.01)
        assert open_set_score(56.11, 94.44, 6) == pytest.approx(61.59, abs=0.01)

    def test_published_hos_second_benchmark(self):
        assert harmonic_open_set_score(66.79, 84.28) == pytest.approx(74.52, abs=0.01)

    def test_zero(self):
        assert harmonic_open_set_score(0.0, 0.0) == 0.0

    def test_hos_bounds(self):
        rng = np.random.default_rng(0)
        for a, b in rng.uniform(0.1, 100, (200, 2)):
            h = harmonic_open_set_score(a, b)
            assert min(a, b) - 1e-12 <= h <= max(a, b) + 1e-12
            assert h <= (a + b) / 2 + 1e-12


class TestMetrics:
    def test_all_correct(self):
        r = compute_metrics([0, 1, 2, 3], [0, 1, 2, 3], 3)
        assert (r.all, r.os, r.os_star, r.unk, r.hos) == (100.0,) * 5

    def test_hand_computed(self):
        truth = [0, 0, 1, 1, 2, 2, 2, 2]
        pred = [0, 1, 1, 1, 2, 2, 0, 1]
        r = compute_metrics(pred, truth, 2)
        assert r.per_class == [50.0, 100.0, 50.0]
        assert r.os_star == 75.0 and r.unk == 50.0
        assert r.all == pytest.approx(62.5)
        assert r.hos == pytest.approx(60.0)
        assert r.os == pytest.approx(200 / 3)

    def test_os_identity(self):
        rng = np.random.default_rng(3)
        truth = np.concatenate([np.arange(7), rng.integers(0, 7, 200)])
        pred = rng.integers(0, 7, truth.size)
        r = compute_metrics(pred, truth, 6)
        assert r.os * 7 == pytest.approx(6 * r.os_star + r.unk, abs=1e-9)

    def test_absent_class_named(self):
        with pytest.raises(MetricUndefinedError, match="class 1"):
            compute_metrics([0, 2], [0, 2], 2)

    def test_absent_unknown(self):
        with pytest.raises(MetricUndefinedError, match="unknown"):
            compute_metrics([0, 1], [0, 1], 2)

    def test_bad_inputs(self):
        with pytest.raises(DomainError):
            compute_metrics([0], [0, 1], 1)
        with pytest.raises(DomainError):
            compute_metrics([], [], 1)
        with pytest.raises(DomainError):
            compute_metrics([5, 0], [0, 1], 1)

    def test_to_dict_and_table(self):
        r = compute_metrics([0, 1], [0, 1], 1)
        assert set(r.to_dict()) == {"all", "os", "os_star", "unk", "hos", "per_class"}
        assert "100.00" in r.table()
