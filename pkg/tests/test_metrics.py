import numpy as np
import pytest

from xscene.errors import MetricError
from xscene.metrics import (ConfusionMatrix, average_accuracy, cohen_kappa,
                            overall_accuracy)


def cm_from(counts):
    counts = np.asarray(counts)
    return ConfusionMatrix(counts.shape[0], counts)


class TestAccumulate:
    def test_single_increment(self):
        cm = ConfusionMatrix(3)
        cm.accumulate(1, 2)
        assert cm.counts[1, 2] == 1

    def test_total_grows_by_one(self):
        cm = ConfusionMatrix(2)
        before = cm.total
        cm.accumulate(0, 0)
        assert cm.total == before + 1

    def test_other_cells_untouched(self):
        cm = cm_from([[1, 2], [3, 4]])
        cm.accumulate(0, 1)
        assert cm.counts.tolist() == [[1, 3], [3, 4]]

    def test_out_of_range(self):
        cm = ConfusionMatrix(2)
        with pytest.raises(IndexError):
            cm.accumulate(2, 0)


class TestOverallAccuracy:
    def test_identity(self):
        assert overall_accuracy(cm_from([[5, 0], [0, 5]])) == 1.0

    def test_hand_count(self):
        assert overall_accuracy(cm_from([[5, 5], [0, 10]])) == pytest.approx(0.75)

    def test_all_off_diagonal(self):
        assert overall_accuracy(cm_from([[0, 3], [3, 0]])) == 0.0

    def test_empty_matrix(self):
        with pytest.raises(ZeroDivisionError):
            overall_accuracy(ConfusionMatrix(2))


class TestAverageAccuracy:
    def test_hand_count(self):
        assert average_accuracy(cm_from([[5, 5], [0, 10]])) == pytest.approx(0.75)

    def test_identity(self):
        assert average_accuracy(cm_from([[2, 0], [0, 9]])) == 1.0

    def test_equals_oa_under_symmetry(self):
        cm = cm_from([[8, 2], [2, 8]])
        assert average_accuracy(cm) == pytest.approx(overall_accuracy(cm))

    def test_empty_class_named(self):
        with pytest.raises(MetricError, match="class 1"):
            average_accuracy(cm_from([[4, 0], [0, 0]]))


class TestCohenKappa:
    def test_perfect_diagonal(self):
        assert cohen_kappa(cm_from([[7, 0], [0, 3]])) == pytest.approx(1.0)

    def test_chance_level(self):
        assert cohen_kappa(cm_from([[25, 25], [25, 25]])) == pytest.approx(0.0)

    def test_hand_arithmetic(self):
        assert cohen_kappa(cm_from([[5, 5], [0, 10]])) == pytest.approx(0.5)

    def test_degenerate_single_cell(self):
        assert cohen_kappa(cm_from([[10, 0], [0, 0]])) == 0.0

    def test_chance_term_matches_brute_force(self):
        rng = np.random.default_rng(5)
        counts = rng.integers(0, 20, size=(4, 4))
        counts[0, 0] += 1
        cm = cm_from(counts)
        total = counts.sum()
        p_e = 0.0
        for k in range(4):
            p_e += counts[k, :].sum() * counts[:, k].sum()
        p_e /= total * total
        p_o = np.trace(counts) / total
        expected = (p_o - p_e) / (1 - p_e)
        assert cohen_kappa(cm) == pytest.approx(expected, abs=1e-12)


class TestPermutationInvariance:
    def test_metrics_invariant_to_consistent_relabeling(self):
        rng = np.random.default_rng(9)
        counts = rng.integers(1, 30, size=(5, 5))
        cm = cm_from(counts)
        perm = rng.permutation(5)
        permuted = cm_from(counts[np.ix_(perm, perm)])
        assert overall_accuracy(permuted) == pytest.approx(overall_accuracy(cm))
        assert average_accuracy(permuted) == pytest.approx(average_accuracy(cm))
        assert cohen_kappa(permuted) == pytest.approx(cohen_kappa(cm))
