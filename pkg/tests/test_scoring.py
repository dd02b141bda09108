import numpy as np
import pytest

from ovclass.bank import ClassifierBank
from ovclass.errors import ValidationError
from ovclass.scoring import ScoringHead, evaluate_retrieval, score_queries, sigmoid


def _bank_from_rows(rows, ids):
    bank = ClassifierBank(dimension=rows.shape[1])
    for cid, row in zip(ids, rows):
        bank.add(cid, row.astype(np.float32), "text")
    return bank


class TestScoreQueries:
    def test_zero_cosine_scores_sigmoid_of_bias(self):
        bank = _bank_from_rows(np.array([[0.0, 1.0]]), ["c"])
        scores, _ = score_queries(np.array([[1.0, 0.0]]), bank, ScoringHead())
        assert scores[0, 0] == pytest.approx(0.119203, abs=1e-6)

    def test_parallel_vector_saturates(self):
        bank = _bank_from_rows(np.array([[2.0, 0.0]]), ["c"])
        scores, _ = score_queries(np.array([[5.0, 0.0]]), bank,
                                  ScoringHead(logit_scale=50.0, bias=-2.0))
        assert scores[0, 0] == pytest.approx(1.0, abs=1e-6)
        assert scores[0, 0] == pytest.approx(sigmoid(48.0), abs=1e-12)

    def test_rows_are_independent_no_cross_class_coupling(self, rng):
        rows = rng.normal(size=(4, 8))
        bank_all = _bank_from_rows(rows, ["a", "b", "c", "d"])
        bank_one = _bank_from_rows(rows[:1], ["a"])
        q = rng.normal(size=(3, 8))
        s_all, _ = score_queries(q, bank_all)
        s_one, _ = score_queries(q, bank_one)
        np.testing.assert_allclose(s_all[:, 0], s_one[:, 0], rtol=1e-12)

    def test_argmax_invariant_to_positive_classifier_scaling(self, rng):
        for _ in range(100):
            rows = rng.normal(size=(6, 8))
            ids = [f"c{i}" for i in range(6)]
            q = rng.normal(size=(4, 8))
            base, _ = score_queries(q, _bank_from_rows(rows, ids))
            scaled_rows = rows * rng.uniform(0.1, 10.0, size=(6, 1))
            scaled, _ = score_queries(q, _bank_from_rows(scaled_rows, ids))
            np.testing.assert_array_equal(base.argmax(axis=1), scaled.argmax(axis=1))

    def test_projection_maps_feature_space(self, rng):
        proj = rng.normal(size=(12, 8))
        bank = _bank_from_rows(rng.normal(size=(3, 8)), ["a", "b", "c"])
        q = rng.normal(size=(2, 12))
        scores, _ = score_queries(q, bank, ScoringHead(projection=proj))
        assert scores.shape == (2, 3)

    def test_dimension_mismatch_rejected(self, rng):
        bank = _bank_from_rows(rng.normal(size=(2, 8)), ["a", "b"])
        with pytest.raises(ValidationError):
            score_queries(rng.normal(size=(2, 9)), bank)

    def test_scores_in_unit_interval(self, rng):
        bank = _bank_from_rows(rng.normal(size=(5, 8)), list("abcde"))
        scores, _ = score_queries(rng.normal(size=(20, 8)), bank)
        assert np.all((scores >= 0.0) & (scores <= 1.0))


class TestEvaluateRetrieval:
    def test_identity_matrix_perfect_top1(self):
        ids = ["a", "b", "c"]
        acc = evaluate_retrieval(np.eye(3), ids, ids)
        assert acc["top1"] == 1.0

    def test_all_equal_scores_favor_lexicographically_first(self):
        ids = ["a", "b", "c", "d"]
        scores = np.full((4, 4), 0.5)
        acc = evaluate_retrieval(scores, ["a", "b", "c", "d"], ids)
        # only the query whose true class is 'a' wins its tie
        assert acc["top1"] == 0.25

    def test_top5_counts_rank_window(self):
        ids = [f"c{i}" for i in range(8)]
        scores = np.zeros((1, 8))
        scores[0, :] = np.arange(8)[::-1]  # c0 highest
        assert evaluate_retrieval(scores, ["c4"], ids)["top5"] == 1.0
        assert evaluate_retrieval(scores, ["c5"], ids)["top5"] == 0.0

    def test_empty_queries_rejected(self):
        with pytest.raises(ValidationError):
            evaluate_retrieval(np.zeros((0, 3)), [], ["a", "b", "c"])

    def test_unknown_label_rejected(self):
        with pytest.raises(ValidationError):
            evaluate_retrieval(np.eye(2), ["z"], ["a", "b"])

    def test_unsorted_columns_rejected(self):
        with pytest.raises(ValidationError):
            evaluate_retrieval(np.eye(2), ["a", "b"], ["b", "a"])
