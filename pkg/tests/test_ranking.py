import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from massrank import InvalidInputError, MissingEntryError, ScoreMatrix, rank, two_stage_rerank


def matrix_from(entries) -> ScoreMatrix:
    return ScoreMatrix.from_entries(entries)


def random_matrix(rng, n_q=6, n_c=12) -> ScoreMatrix:
    queries = tuple(f"q{i:02d}" for i in range(n_q))
    candidates = tuple(f"c{j:02d}" for j in range(n_c))
    return ScoreMatrix(queries, candidates, rng.uniform(-2.0, 2.0, (n_q, n_c)))


class TestScoreMatrix:
    def test_dense_required(self):
        with pytest.raises(MissingEntryError):
            ScoreMatrix.from_entries({("q", "a"): 1.0, ("r", "b"): 2.0})

    def test_nan_rejected(self):
        with pytest.raises(InvalidInputError):
            ScoreMatrix(("q",), ("a",), np.array([[float("nan")]]))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(InvalidInputError):
            ScoreMatrix(("q", "q"), ("a", "b"), np.zeros((2, 2)))

    def test_lookup(self):
        m = matrix_from({("q", "a"): 0.25, ("q", "b"): -1.0})
        assert m.score("q", "b") == -1.0
        with pytest.raises(MissingEntryError):
            m.score("q", "zzz")
        with pytest.raises(MissingEntryError):
            m.score("x", "a")


class TestRank:
    def test_direct_ordering(self):
        m = matrix_from({("q", "a"): 0.9, ("q", "b"): 0.1})
        assert rank(m, "q", 1).ids() == ["a"]

    def test_id_tie_break(self):
        m = matrix_from({("q", "a"): 0.5, ("q", "b"): 0.5})
        assert rank(m, "q", 2).ids() == ["a", "b"]

    def test_k_clamped_to_pool(self):
        m = matrix_from({("q", "a"): 1.0, ("q", "b"): 2.0, ("q", "c"): 3.0})
        assert rank(m, "q", 10).ids() == ["c", "b", "a"]

    def test_unknown_query(self):
        m = matrix_from({("q", "a"): 1.0})
        with pytest.raises(MissingEntryError):
            rank(m, "zzz", 1)

    def test_candidate_pool_restriction(self):
        m = matrix_from({("q", "a"): 3.0, ("q", "b"): 2.0, ("q", "c"): 1.0})
        assert rank(m, "q", 2, candidates=["b", "c"]).ids() == ["b", "c"]

    @given(st.integers(0, 2**32 - 1))
    def test_argsort_invariance(self, seed):
        rng = np.random.default_rng(seed)
        m = random_matrix(rng)
        base = [rank(m, q, 5).ids() for q in m.queries]
        for transform in (lambda x: 2.0 * x + 1.0, np.tanh):
            t = ScoreMatrix(m.queries, m.candidates, transform(m.values))
            assert [rank(t, q, 5).ids() for q in t.queries] == base


class TestTwoStage:
    def test_degenerate_shortlist_equals_plain_rank(self):
        rng = np.random.default_rng(0)
        first, second = random_matrix(rng), random_matrix(rng)
        for q in first.queries:
            got = two_stage_rerank(first, second, q, shortlist=len(first.candidates), k=4)
            assert got.ids() == rank(second, q, 4).ids()

    def test_shortlist_ceiling_excludes_gold(self):
        # 21 candidates; the first stage puts "gold" last; shortlist 20
        # means the second stage can never surface it.
        candidates = tuple(f"c{j:02d}" for j in range(20)) + ("gold",)
        first = ScoreMatrix(("q",), candidates, np.array([[*range(21, 1, -1), 0.0]], float))
        second_scores = np.zeros((1, 21))
        second_scores[0, -1] = 100.0
        second = ScoreMatrix(("q",), candidates, second_scores)
        got = two_stage_rerank(first, second, "q", shortlist=20, k=20)
        assert "gold" not in got.ids()

    def test_direct_example(self):
        first = matrix_from({("q", "a"): 3.0, ("q", "b"): 2.0, ("q", "c"): 1.0})
        second = matrix_from({("q", "a"): 1.0, ("q", "b"): 3.0, ("q", "c"): 2.0})
        got = two_stage_rerank(first, second, "q", shortlist=2, k=2)
        assert got.ids() == ["b", "a"]

    def test_output_is_subset_of_stage_one(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            first, second = random_matrix(rng), random_matrix(rng)
            for q in first.queries:
                shortlist = int(rng.integers(2, 8))
                k = int(rng.integers(1, shortlist + 1))
                allowed = set(rank(first, q, shortlist).ids())
                got = two_stage_rerank(first, second, q, shortlist=shortlist, k=k)
                assert set(got.ids()) <= allowed

    def test_second_stage_gap_is_an_error(self):
        first = matrix_from({("q", "a"): 2.0, ("q", "b"): 1.0})
        second = matrix_from({("q", "a"): 1.0})
        with pytest.raises(MissingEntryError, match="b"):
            two_stage_rerank(first, second, "q", shortlist=2, k=1)

    def test_shortlist_below_k_rejected(self):
        m = matrix_from({("q", "a"): 1.0})
        with pytest.raises(InvalidInputError):
            two_stage_rerank(m, m, "q", shortlist=1, k=2)

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(8)
        m = random_matrix(rng)
        first = random_matrix(np.random.default_rng(9))
        runs = [
            [two_stage_rerank(first, m, q, shortlist=6, k=3).ordered for q in m.queries]
            for _ in range(3)
        ]
        assert runs[0] == runs[1] == runs[2]
