import numpy as np
import pytest

from r2dl.evaluation import (
    EvalReport,
    MetricError,
    UndefinedCorrelationError,
    average_ranks,
    confusion_matrix,
    data_efficiency,
    nested_train_subsets,
    rankings_from_logits,
    spearman_rho,
    top_n_accuracy,
)

from oracles import naive_average_ranks, rho_d_squared, rho_from_ranks


class TestTopN:
    def test_all_correct_at_rank_one(self):
        rankings = [(1, 0), (0, 1), (1, 0)]
        assert top_n_accuracy(rankings, [1, 0, 1], 1) == 1.0

    def test_full_depth_is_always_one(self):
        rankings = [(2, 0, 1)] * 4
        assert top_n_accuracy(rankings, [0, 1, 2, 0], 3) == 1.0

    def test_rank_positions(self):
        # true labels at ranks 1, 3, 2 with depth 2 -> 2/3
        rankings = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
        labels = [0, 0, 0]
        assert top_n_accuracy(rankings, labels, 2) == pytest.approx(2 / 3)

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            top_n_accuracy([], [], 1)

    def test_rankings_from_logits_tie_break(self):
        r = rankings_from_logits(np.array([[0.5, 0.5, 0.1]]))
        assert r[0] == (0, 1, 2)


class TestSpearman:
    def test_monotone_increasing(self):
        x = [1.0, 2.0, 5.0, 9.0]
        assert spearman_rho(x, [v ** 3 for v in x]) == 1.0

    def test_monotone_decreasing(self):
        x = [1.0, 2.0, 5.0, 9.0]
        assert spearman_rho(x, [-v for v in x]) == -1.0

    def test_hand_computed_example(self):
        # d^2 = 2 -> rho = 1 - 12/60 = 0.8
        assert spearman_rho([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)
        assert rho_d_squared([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_matches_rank_oracle_with_ties(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(4, 30))
            x = rng.integers(0, 6, n).astype(float)  # heavy ties
            y = rng.integers(0, 6, n).astype(float)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            assert spearman_rho(x, y) == pytest.approx(rho_from_ranks(x, y), abs=1e-12)

    def test_average_ranks_match_naive(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            x = rng.integers(0, 5, 15).astype(float)
            assert np.allclose(average_ranks(x), naive_average_ranks(list(x)))

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal(40)
        y = rng.standard_normal(40)
        base = spearman_rho(x, y)
        assert spearman_rho(np.exp(x), y) == pytest.approx(base, abs=1e-12)
        assert spearman_rho(x, y ** 3) == pytest.approx(base, abs=1e-12)

    def test_constant_vector_rejected(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman_rho([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_short_input_rejected(self):
        with pytest.raises(MetricError):
            spearman_rho([1.0], [2.0])


class TestConfusion:
    def test_perfect_predictions_diagonal(self):
        labels = [0, 1, 2, 1, 0]
        m = confusion_matrix(labels, labels, 3)
        assert np.array_equal(m, np.diag([2, 2, 1]))

    def test_all_predicted_positive(self):
        m = confusion_matrix([1, 1, 1, 1], [0, 0, 1, 1], 2)
        assert np.array_equal(m, [[0, 2], [0, 2]])

    def test_row_sums_are_class_counts(self):
        rng = np.random.default_rng(14)
        actual = rng.integers(0, 4, 200)
        predicted = rng.integers(0, 4, 200)
        m = confusion_matrix(predicted, actual, 4)
        for c in range(4):
            assert m[c].sum() == (actual == c).sum()
        # the antibody-affinity style class split: row sums match the split
        skew = confusion_matrix([0] * 4000, [0] * 1516 + [1] * 2484, 2)
        assert skew[0].sum() == 1516 and skew[1].sum() == 2484

    def test_trace_ratio_is_top1(self):
        rng = np.random.default_rng(15)
        actual = rng.integers(0, 3, 100)
        predicted = rng.integers(0, 3, 100)
        m = confusion_matrix(predicted, actual, 3)
        rankings = [tuple([p] + [c for c in range(3) if c != p]) for p in predicted]
        top1 = top_n_accuracy(rankings, actual, 1)
        assert np.trace(m) / m.sum() == pytest.approx(top1)

    def test_out_of_range_rejected(self):
        with pytest.raises(MetricError):
            confusion_matrix([0, 5], [0, 1], 2)


class TestDataEfficiency:
    def test_pretrained_baseline_ratio(self):
        # 0.93 accuracy over a 1.7e6 pretraining corpus plus 8153 labeled items
        ratio = data_efficiency(0.93, 1_700_000 + 8153)
        assert ratio == pytest.approx(5.444e-7, rel=1e-3)

    def test_reprogramming_ratio(self):
        ratio = data_efficiency(0.8723, 8153)
        assert ratio == pytest.approx(1.0699e-4, rel=1e-3)

    def test_relative_gain_near_200x(self):
        gain = data_efficiency(0.8723, 8153) / data_efficiency(0.93, 1_708_153)
        assert 150 < gain < 250

    def test_zero_count_rejected(self):
        with pytest.raises(MetricError):
            data_efficiency(0.5, 0)


class TestNestedSubsets:
    def test_sizes_floor(self):
        train = list(range(6489))
        subsets = nested_train_subsets(train, [1.0, 0.8, 0.6, 0.4], seed=3)
        assert [len(subsets[f]) for f in (1.0, 0.8, 0.6, 0.4)] == \
            [6489, 5191, 3893, 2595]

    def test_nesting(self):
        train = list(range(500))
        subsets = nested_train_subsets(train, [0.4, 0.6, 0.8, 1.0], seed=3)
        assert set(subsets[0.4]) <= set(subsets[0.6]) <= set(subsets[0.8]) \
            <= set(subsets[1.0])

    def test_empty_fraction_rejected(self):
        with pytest.raises(MetricError):
            nested_train_subsets(list(range(3)), [0.1], seed=0)

    def test_out_of_range_fraction(self):
        with pytest.raises(MetricError):
            nested_train_subsets(list(range(10)), [1.5], seed=0)


class TestEvalReport:
    def test_trace_consistency_enforced(self):
        with pytest.raises(MetricError):
            EvalReport(task="t", metric_kind="top1_accuracy", value=0.9, n_test=4,
                       confusion=[[1, 1], [1, 1]])

    def test_valid_report(self):
        r = EvalReport(task="t", metric_kind="top1_accuracy", value=0.5, n_test=4,
                       confusion=[[1, 1], [1, 1]])
        assert r.to_json_dict()["value"] == 0.5

    def test_accuracy_range_checked(self):
        with pytest.raises(MetricError):
            EvalReport(task="t", metric_kind="top1_accuracy", value=1.2, n_test=1)
