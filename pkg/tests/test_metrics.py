"""Metric tests: trivial identities, dense/loop oracles, aggregation."""

import numpy as np
import pytest

from fusionbank.errors import ContractError, DimensionError
from fusionbank.metrics import (
    e_measure,
    evaluate_samples,
    f_measure,
    f_measure_curve,
    mae,
    report_csv,
    report_table,
    weighted_f,
)

from oracles import e_measure_oracle, f_curve_oracle, mae_oracle, weighted_f_oracle


def rand_maps(rng, h=12, w=12, blob=True):
    s = rng.uniform(size=(h, w))
    if blob:
        g = np.zeros((h, w))
        g[3:3 + h // 3, 4:4 + w // 3] = 1.0
    else:
        g = (rng.uniform(size=(h, w)) > 0.5).astype(float)
    return s, g


class TestMae:
    def test_perfect_and_inverted(self):
        g = (np.random.default_rng(0).uniform(size=(8, 8)) > 0.5).astype(float)
        assert mae(g, g) == 0.0
        assert mae(1.0 - g, g) == 1.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        s, g = rand_maps(rng)
        assert abs(mae(s, g) - mae_oracle(s, g)) < 1e-12

    def test_mae_plus_agreement_is_one_for_binary(self):
        rng = np.random.default_rng(2)
        s = (rng.uniform(size=(10, 10)) > 0.5).astype(float)
        g = (rng.uniform(size=(10, 10)) > 0.5).astype(float)
        agreement = float(np.mean(s == g))
        assert abs(mae(s, g) + agreement - 1.0) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mae(np.zeros((3, 3)), np.zeros((3, 4)))


class TestFMeasure:
    def test_perfect_binary_prediction_max_is_one(self):
        g = (np.random.default_rng(3).uniform(size=(9, 9)) > 0.6).astype(float)
        _, f_max = f_measure(g, g)
        assert f_max == 1.0

    def test_half_precision_half_recall_value(self):
        # P = R = 0.5 -> F = 1.3 * 0.25 / 0.65 = 0.5
        s = np.zeros((2, 2))
        s[0, 0] = 1.0
        s[0, 1] = 1.0  # predicts two pixels at high thresholds
        g = np.zeros((2, 2))
        g[0, 0] = 1.0
        g[1, 0] = 1.0  # two true pixels, one hit
        curve = f_measure_curve(s, g)
        assert abs(curve[128] - 0.5) < 1e-12

    def test_matches_confusion_loop_oracle(self):
        rng = np.random.default_rng(4)
        s, g = rand_maps(rng, 10, 10)
        np.testing.assert_allclose(f_measure_curve(s, g), f_curve_oracle(s, g),
                                   rtol=0, atol=1e-12)

    def test_max_at_least_mean(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            s, g = rand_maps(rng, 9, 11)
            f_mean, f_max = f_measure(s, g)
            assert f_max >= f_mean
            assert 0.0 <= f_mean <= 1.0 and 0.0 <= f_max <= 1.0


class TestWeightedF:
    def test_perfect_prediction_is_one(self):
        _, g = rand_maps(np.random.default_rng(6), 12, 12)
        assert weighted_f(g, g) == pytest.approx(1.0, abs=1e-9)

    def test_inverted_interior_mask_is_zero(self):
        # mask kept >= 3 px from the border so the smoothing kernel sees
        # full support and the weighted recall collapses exactly
        g = np.zeros((13, 13))
        g[4:9, 4:9] = 1.0
        assert weighted_f(1.0 - g, g) == pytest.approx(0.0, abs=1e-9)

    def test_matches_dense_oracle_on_small_maps(self):
        rng = np.random.default_rng(7)
        for trial in range(3):
            s, g = rand_maps(rng, 11, 13)
            got = weighted_f(s, g)
            want = weighted_f_oracle(s, g > 0.5)
            assert abs(got - want) < 1e-10

    def test_empty_mask_convention(self):
        s = np.random.default_rng(8).uniform(size=(8, 8))
        assert weighted_f(s, np.zeros((8, 8))) == 0.0

    def test_value_in_unit_interval(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            s, g = rand_maps(rng, 10, 10)
            assert 0.0 <= weighted_f(s, g) <= 1.0


class TestEMeasure:
    def test_perfect_binary_prediction_is_one(self):
        for density in (0.3, 0.7):  # both sides of the adaptive threshold cap
            g = (np.random.default_rng(10).uniform(size=(10, 10)) < density).astype(float)
            assert e_measure(g, g) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_prediction_matches_oracle(self):
        _, g = rand_maps(np.random.default_rng(11), 12, 12)
        s = 1.0 - g
        assert abs(e_measure(s, g) - e_measure_oracle(s, g)) < 1e-12

    def test_empty_mask_degenerate_branch(self):
        rng = np.random.default_rng(12)
        s = rng.uniform(size=(9, 9))
        s_bin = s >= min(2 * s.mean(), 1.0)
        assert e_measure(s, np.zeros((9, 9))) == pytest.approx(1.0 - s_bin.mean(), abs=1e-12)

    def test_full_mask_degenerate_branch(self):
        rng = np.random.default_rng(13)
        s = rng.uniform(size=(9, 9))
        s_bin = s >= min(2 * s.mean(), 1.0)
        assert e_measure(s, np.ones((9, 9))) == pytest.approx(s_bin.mean(), abs=1e-12)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(4):
            s, g = rand_maps(rng, 13, 9)
            assert abs(e_measure(s, g) - e_measure_oracle(s, g)) < 1e-10

    def test_value_in_unit_interval(self):
        rng = np.random.default_rng(15)
        for _ in range(5):
            s, g = rand_maps(rng, 8, 8)
            assert 0.0 <= e_measure(s, g) <= 1.0


class TestReport:
    def samples(self, rng, n, labels_pool=("CB", "SV")):
        preds, gts, labels = [], [], []
        for i in range(n):
            s, g = rand_maps(rng, 10, 10)
            preds.append(s)
            gts.append(g)
            labels.append({labels_pool[i % len(labels_pool)]})
        return preds, gts, labels

    def test_single_sample_per_challenge_equals_overall(self):
        rng = np.random.default_rng(16)
        preds, gts, _ = self.samples(rng, 1)
        report = evaluate_samples(preds, gts, [{"LI"}])
        sub = report.per_challenge["LI"]
        assert sub.values() == report.values()

    def test_disjoint_subsets_mae_is_weighted_mean(self):
        rng = np.random.default_rng(17)
        preds, gts, labels = self.samples(rng, 6)
        report = evaluate_samples(preds, gts, labels)
        total = sum(report.per_challenge[c].mae * report.per_challenge[c].count
                    for c in report.per_challenge)
        assert abs(report.mae - total / report.count) < 1e-12

    def test_per_challenge_matches_filter_then_recompute(self):
        rng = np.random.default_rng(18)
        preds, gts, labels = self.samples(rng, 8, ("CB", "SV", "IC"))
        report = evaluate_samples(preds, gts, labels)
        for challenge, sub in report.per_challenge.items():
            idx = [i for i, ls in enumerate(labels) if challenge in ls]
            want = evaluate_samples([preds[i] for i in idx], [gts[i] for i in idx])
            assert sub.values() == pytest.approx(want.values(), abs=1e-14)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(19)
        preds, gts, labels = self.samples(rng, 5)
        report_a = evaluate_samples(preds, gts, labels)
        perm = [3, 1, 4, 0, 2]
        report_b = evaluate_samples([preds[i] for i in perm], [gts[i] for i in perm],
                                    [labels[i] for i in perm])
        assert report_a.values() == pytest.approx(report_b.values(), abs=1e-14)

    def test_multi_label_samples_count_in_each_subset(self):
        rng = np.random.default_rng(20)
        preds, gts, _ = self.samples(rng, 2)
        report = evaluate_samples(preds, gts, [{"CB", "LI"}, {"LI"}])
        assert report.per_challenge["CB"].count == 1
        assert report.per_challenge["LI"].count == 2

    def test_empty_and_mismatched_inputs_rejected(self):
        with pytest.raises(ContractError):
            evaluate_samples([], [])
        with pytest.raises(ContractError):
            evaluate_samples([np.zeros((4, 4))], [])

    def test_report_writers_cover_all_rows(self):
        rng = np.random.default_rng(21)
        preds, gts, labels = self.samples(rng, 4)
        report = evaluate_samples(preds, gts, labels)
        csv = report_csv(report, "toy", "synth")
        table = report_table(report, "toy", "synth")
        assert csv.count("\n") == 1 + 1 + len(report.per_challenge)
        for challenge in report.per_challenge:
            assert challenge in csv and challenge in table
        assert "e_measure" in csv.splitlines()[0]
