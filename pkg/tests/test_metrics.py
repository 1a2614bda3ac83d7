import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biaslens.errors import ConfigError
from biaslens.metrics import (classification_metrics, confusion_matrix,
                              render_summary_row)


def counting_oracle(preds, labs, k):
    """Per-class tallies via explicit loops, independent of numpy indexing."""
    m = [[0] * k for _ in range(k)]
    for p, t in zip(preds, labs):
        m[t][p] += 1
    precision, recall = [], []
    for i in range(k):
        col = sum(m[t][i] for t in range(k))
        row = sum(m[i])
        precision.append(m[i][i] / col if col else 0.0)
        recall.append(m[i][i] / row if row else 0.0)
    f1 = [2 * p * r / (p + r) if p + r else 0.0
          for p, r in zip(precision, recall)]
    acc = sum(m[i][i] for i in range(k)) / len(labs)
    return (np.array(m), acc, sum(precision) / k, sum(recall) / k,
            sum(f1) / k)


class TestConfusionMatrix:
    def test_three_item_fixture(self):
        # true (0, 1, 1), predicted (0, 0, 1): row 0 = [1, 0], row 1 = [1, 1]
        m = confusion_matrix([0, 0, 1], [0, 1, 1], num_classes=2)
        np.testing.assert_array_equal(m, [[1, 0], [1, 1]])

    def test_perfect_predictions_are_diagonal(self):
        labs = [0, 1, 2, 2, 1]
        m = confusion_matrix(labs, labs, num_classes=3)
        np.testing.assert_array_equal(m, np.diag([1, 2, 2]))

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            confusion_matrix([0, 3], [0, 1], num_classes=2)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            confusion_matrix([], [], num_classes=2)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            confusion_matrix([0, 1], [0], num_classes=2)


class TestClassificationMetrics:
    def test_three_item_hand_computed_fixture(self):
        # confusion [[1, 0], [1, 1]]:
        #   accuracy 2/3
        #   precision (1/2, 1/1), recall (1/1, 1/2) -> macro 0.75 each
        #   f1 per class 2/3 -> macro 2/3
        m = classification_metrics(np.array([[1, 0], [1, 1]]))
        assert m.accuracy == pytest.approx(2 / 3)
        assert m.macro_precision == pytest.approx(0.75)
        assert m.macro_recall == pytest.approx(0.75)
        assert m.macro_f1 == pytest.approx(2 / 3)
        assert m.zero_division_classes == ()

    def test_zero_division_flagged_not_nan(self):
        # class 1 never occurs and is never predicted: 0/0 -> 0, flagged
        m = classification_metrics(np.array([[3, 0], [0, 0]]))
        assert m.per_class_precision[1] == 0.0
        assert m.per_class_recall[1] == 0.0
        assert m.per_class_f1[1] == 0.0
        assert m.zero_division_classes == (1,)
        assert np.all(np.isfinite([m.macro_precision, m.macro_recall,
                                   m.macro_f1]))

    def test_relabel_invariance(self):
        m = np.array([[5, 2, 0], [1, 7, 1], [0, 3, 4]])
        a = classification_metrics(m)
        perm = [2, 0, 1]
        b = classification_metrics(m[np.ix_(perm, perm)])
        assert a.accuracy == pytest.approx(b.accuracy)
        assert a.macro_precision == pytest.approx(b.macro_precision)
        assert a.macro_recall == pytest.approx(b.macro_recall)
        assert a.macro_f1 == pytest.approx(b.macro_f1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 6), st.integers(1, 60), st.integers(0, 10**6))
    def test_matches_counting_oracle(self, k, n, seed):
        rng = np.random.default_rng(seed)
        preds = rng.integers(0, k, size=n)
        labs = rng.integers(0, k, size=n)
        m = confusion_matrix(preds, labs, k)
        got = classification_metrics(m)
        want_m, acc, prec, rec, f1 = counting_oracle(preds, labs, k)
        np.testing.assert_array_equal(m, want_m)
        assert got.accuracy == pytest.approx(acc, abs=1e-12)
        assert got.macro_precision == pytest.approx(prec, abs=1e-12)
        assert got.macro_recall == pytest.approx(rec, abs=1e-12)
        assert got.macro_f1 == pytest.approx(f1, abs=1e-12)

    def test_non_square_rejected(self):
        with pytest.raises(ConfigError):
            classification_metrics(np.zeros((2, 3), dtype=np.int64))

    def test_all_zero_rejected(self):
        with pytest.raises(ConfigError):
            classification_metrics(np.zeros((2, 2), dtype=np.int64))

    def test_negative_counts_rejected(self):
        with pytest.raises(ConfigError):
            classification_metrics(np.array([[1, -1], [0, 1]]))

    def test_json_dict_is_serializable(self):
        import json
        m = classification_metrics(np.array([[1, 0], [1, 1]]))
        d = json.loads(json.dumps(m.to_json_dict()))
        assert d["accuracy"] == pytest.approx(2 / 3)
        assert d["confusion"] == [[1, 0], [1, 1]]


class TestSummaryRow:
    def test_fixture_layout(self):
        m = classification_metrics(np.array([[1, 0], [1, 1]]))
        row = render_summary_row(m)
        assert row == ("Accuracy: 66.7% | Precision: 75.0% | "
                       "Recall: 75.0% | F1: 0.6667")
