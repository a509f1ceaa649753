import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankae.ranker import (
    RankConfig,
    compute_k,
    cosine_matrix,
    distance_matrix,
    local_centrality,
    rank,
    relevance_matrix,
    select_topic_utterances,
)


def naive_greedy(M, k, eta):
    """Independent greedy: rescans every row from scratch at every step."""
    n = len(M)
    if n == 1:
        return [0]
    chosen = []
    while len(chosen) < k:
        best_i, best_s = None, None
        for i in range(n):
            if i in chosen:
                continue
            rel = sum(M[i][j] for j in range(n) if j != i) * eta / (n - 1)
            div = max((M[i][j] for j in chosen), default=0.0)
            s = rel - (1 - eta) * div
            if best_s is None or s > best_s:
                best_i, best_s = i, s
        chosen.append(best_i)
    return chosen


class TestComputeK:
    @pytest.mark.parametrize("n,expected", [(9, 3), (2, 1), (30, 3), (1, 1), (4, 1), (5, 2), (6, 2), (7, 2), (8, 3)])
    def test_values(self, n, expected):
        assert compute_k(n, 1, 3) == expected

    def test_never_exceeds_n(self):
        assert compute_k(2, 1, 3) <= 2
        assert compute_k(1, 1, 5) == 1

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            compute_k(0)


class TestRelevance:
    def test_zero_weight(self):
        H = np.random.default_rng(0).normal(size=(4, 3))
        assert np.all(relevance_matrix(H, np.zeros((3, 3))) == 0.5)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        M = relevance_matrix(rng.normal(size=(5, 4)), rng.normal(size=(4, 4)))
        assert np.array_equal(M, M.T)

    def test_hand_computed(self):
        H = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        W = np.array([[1.0, 2.0], [0.0, -1.0]])
        sig = lambda x: 1 / (1 + math.exp(-x))
        # raw[i][j] = sigmoid(h_j . W h_i)
        raw = [[sig(sum(H[j][a] * sum(W[a][b] * H[i][b] for b in range(2)) for a in range(2))) for j in range(3)] for i in range(3)]
        # e.g. W h_0 = (1, 0): h_1 . (1, 0) = 0 ; W h_1 = (2, -1): h_0 . (2, -1) = 2
        assert raw[0][1] == pytest.approx(0.5) and raw[1][0] == pytest.approx(sig(2))
        np.testing.assert_allclose(relevance_matrix(H, W, symmetrize=False), raw, atol=1e-15)
        sym = (np.array(raw) + np.array(raw).T) / 2
        np.testing.assert_allclose(relevance_matrix(H, W), sym, atol=1e-15)

    def test_rejects_non_finite(self):
        H = np.array([[np.nan, 0.0]])
        with pytest.raises(ValueError):
            relevance_matrix(H, np.eye(2))

    def test_open_interval(self):
        rng = np.random.default_rng(2)
        M = relevance_matrix(rng.normal(size=(6, 4)), rng.normal(size=(4, 4)))
        assert np.all((M > 0) & (M < 1))


class TestDistance:
    def test_diagonal(self):
        assert np.all(np.diag(distance_matrix(7, 2)) == 1.0)

    def test_spot_value(self):
        lam = distance_matrix(10, 2)
        assert lam[0, 5] == pytest.approx(math.exp(-0.5), abs=1e-15)
        assert lam[0, 5] == pytest.approx(0.60653, abs=1e-5)

    def test_symmetric_decreasing(self):
        lam = distance_matrix(9, 3)
        assert np.array_equal(lam, lam.T)
        row = lam[0]
        assert np.all(np.diff(row) < 0)
        assert np.all((lam > 0) & (lam <= 1))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 40), st.integers(1, 5), st.integers(1, 5))
    def test_fewer_topics_never_lowers_coefficients(self, n, k1, k2):
        lo, hi = sorted((k1, k2))
        assert np.all(distance_matrix(n, lo) >= distance_matrix(n, hi) - 1e-15)


class TestCentrality:
    def test_single(self):
        assert local_centrality(np.array([[0.7]])).tolist() == [0.0]

    def test_uniform(self):
        assert np.allclose(local_centrality(np.full((4, 4), 0.5)), 1.5)

    def test_brute_force(self):
        M = np.random.default_rng(3).uniform(size=(4, 4))
        expected = [sum(M[i][j] for j in range(4) if j != i) for i in range(4)]
        np.testing.assert_allclose(local_centrality(M), expected, atol=1e-15)


class TestSelect:
    def test_eta_one_is_top_k_centrality(self):
        M = np.random.default_rng(4).uniform(size=(7, 7))
        M = (M + M.T) / 2
        got = select_topic_utterances(M, 3, eta=1.0)
        assert got == list(np.argsort(-local_centrality(M), kind="stable")[:3])

    def test_k_equals_n_permutation(self):
        M = np.random.default_rng(5).uniform(size=(5, 5))
        assert sorted(select_topic_utterances(M, 5, 0.5)) == list(range(5))

    def test_six_node_fixture(self):
        M = np.random.default_rng(6).uniform(size=(6, 6))
        M = (M + M.T) / 2
        assert select_topic_utterances(M, 3, 0.5) == naive_greedy(M.tolist(), 3, 0.5)

    def test_ties_to_lowest_index(self):
        assert select_topic_utterances(np.full((4, 4), 0.5), 2, 0.5) == [0, 1]

    def test_diversity_spreads_choices(self):
        # two tight clusters {0,1,2} and {3,4}; centrality alone picks inside the big one
        M = np.full((5, 5), 0.05)
        M[:3, :3] = 0.9
        M[3:, 3:] = 0.8
        assert select_topic_utterances(M, 2, 1.0) == [0, 1]
        assert select_topic_utterances(M, 2, 0.5) == [0, 3]
        assert select_topic_utterances(M, 2, 0.5, diversity=False) == [0, 1]

    def test_bad_k(self):
        with pytest.raises(ValueError):
            select_topic_utterances(np.eye(3), 4, 0.5)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 4), st.sampled_from([0.0, 0.3, 0.5, 1.0]), st.integers(0, 2**31), st.floats(0.1, 10))
    def test_properties(self, n, k, eta, seed, scale):
        k = min(k, n)
        M = np.random.default_rng(seed).uniform(size=(n, n))
        sel = select_topic_utterances(M, k, eta)
        assert len(sel) == len(set(sel)) == k
        assert select_topic_utterances(M * scale, k, eta) == sel or np.any(
            np.isclose(M[:, None, :], M[None, :, :]).all(-1) & ~np.eye(n, dtype=bool)
        )


def test_rank_result_shape():
    rng = np.random.default_rng(7)
    M = relevance_matrix(rng.normal(size=(9, 4)), rng.normal(size=(4, 4)))
    res = rank(M, RankConfig())
    assert res.k == 3 and len(res.selected) == 3
    d = res.as_dict("chat")
    assert set(d) == {"chat_id", "k", "selected", "scores"} and len(d["scores"]) == 9


def test_rank_config_validation():
    with pytest.raises(ValueError):
        RankConfig(eta=1.5)
    with pytest.raises(ValueError):
        RankConfig(c=0)


def test_cosine_matrix():
    X = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
    C = cosine_matrix(X)
    assert C[0, 1] == pytest.approx(1.0) and C[0, 2] == 0.0 and C[3, 0] == 0.0


def test_one_index_per_topic_block():
    """With contiguous topic blocks and k = #blocks, picks rarely share a block."""
    from rankae.corpus import SynthConfig, generate_synthetic_corpus

    hits = total = 0
    chats, _ = generate_synthetic_corpus(SynthConfig(n_chats=200, topics_per_chat=(3, 3), utts_per_topic=(3, 5)), seed=21)
    for seed, chat in enumerate(chats):
        topics = np.array([u.topic for u in chat.utterances])
        n = len(topics)
        # relevance = same topic plus noise; the ranker sees only the matrix
        rng = np.random.default_rng(seed)
        M = 0.3 + 0.4 * (topics[:, None] == topics[None, :]) + rng.uniform(0, 0.2, size=(n, n))
        M = (M + M.T) / 2
        res = rank(M, RankConfig(k_cap=3))
        total += 1
        hits += len({topics[i] for i in res.selected}) == len(res.selected)
    assert hits / total >= 0.9
