import math

import numpy as np
import numpy.testing as npt
import pytest

from infomaxformer.attention import (
    ATTENTION_COUNTER,
    MeaConfig,
    attention_stats,
    dense_attention,
    entropy,
    mea_attention,
    variance_proxy,
)
from infomaxformer.errors import ConfigError, InvalidValueError, MaskError, ShapeError


def dense_loop_oracle(Q, K, V, visible=None):
    """Per-element evaluation of the expectation form of attention."""
    L_Q, d = Q.shape
    L_K = K.shape[0]
    out = np.zeros((L_Q, V.shape[1]))
    for i in range(L_Q):
        cols = range(L_K) if visible is None else [j for j in range(L_K) if visible[i, j]]
        scores = np.array([Q[i] @ K[j] / math.sqrt(d) for j in cols])
        scores -= scores.max()
        weights = np.exp(scores)
        weights /= weights.sum()
        for w, j in zip(weights, cols):
            out[i] += w * V[j]
    return out


class TestDenseAttention:
    def test_single_key(self):
        rng = np.random.default_rng(0)
        Q = rng.normal(size=(5, 3))
        K = rng.normal(size=(1, 3))
        V = rng.normal(size=(1, 2))
        out = dense_attention(Q, K, V)
        npt.assert_allclose(out.data, np.repeat(V, 5, axis=0), atol=1e-15)

    def test_identical_keys_average_values(self):
        Q = np.random.default_rng(1).normal(size=(3, 2))
        K = np.array([[0.4, -1.2], [0.4, -1.2]])
        V = np.array([[1.0, 0.0], [3.0, 0.0]])
        out = dense_attention(Q, K, V)
        npt.assert_allclose(out.data, np.tile([2.0, 0.0], (3, 1)), atol=1e-12)

    def test_matches_expectation_oracle(self):
        rng = np.random.default_rng(2)
        Q = rng.normal(size=(4, 2))
        K = rng.normal(size=(4, 2))
        V = rng.normal(size=(4, 3))
        out = dense_attention(Q, K, V)
        npt.assert_allclose(out.data, dense_loop_oracle(Q, K, V), atol=1e-10)

    def test_causal_rows_ignore_future(self):
        rng = np.random.default_rng(3)
        Q = rng.normal(size=(6, 4))
        K = rng.normal(size=(6, 4))
        V = rng.normal(size=(6, 2))
        base = dense_attention(Q, K, V, mask="causal").data
        K2, V2 = K.copy(), V.copy()
        K2[4:] += 100.0
        V2[4:] -= 100.0
        pert = dense_attention(Q, K2, V2, mask="causal").data
        npt.assert_allclose(pert[:4], base[:4], atol=1e-12)
        vis = np.tril(np.ones((6, 6), dtype=bool))
        npt.assert_allclose(base, dense_loop_oracle(Q, K, V, vis), atol=1e-10)

    def test_empty_mask_row_raises(self):
        vis = np.ones((3, 3), dtype=bool)
        vis[1] = False
        with pytest.raises(MaskError):
            dense_attention(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 1)), mask=vis)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            dense_attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 1)))


class TestEntropy:
    def test_uniform_is_maximal(self):
        npt.assert_allclose(entropy([0.25] * 4), math.log(4), atol=1e-12)
        rng = np.random.default_rng(4)
        for _ in range(25):
            p = rng.dirichlet(np.ones(6))
            assert entropy(p) <= math.log(6) + 1e-12

    def test_one_hot_is_zero(self):
        assert entropy([0.0, 1.0, 0.0]) == 0.0

    def test_closed_form(self):
        expected = 0.5 * math.log(2) + 0.5 * math.log(4)
        npt.assert_allclose(entropy([0.5, 0.25, 0.25]), expected, atol=1e-12)

    def test_negative_entry_rejected(self):
        with pytest.raises(InvalidValueError):
            entropy([1.1, -0.1])

    def test_sum_deviation_rejected(self):
        with pytest.raises(InvalidValueError):
            entropy([0.6, 0.6])


class TestVarianceProxy:
    def test_zero_scores_tie_break(self):
        L = 10
        Q = np.zeros((L, 4))
        K = np.random.default_rng(5).normal(size=(L, 4))
        cfg = MeaConfig(c=1.0, seed=0)
        sel = variance_proxy(Q, K, cfg)
        npt.assert_array_equal(sel.variance_per_query, 0.0)
        u = cfg.resolve_u(L)
        npt.assert_array_equal(sel.selected, np.arange(u))

    def test_one_hot_vs_flat_closed_forms(self):
        # scores big enough that the softmax row underflows to exact one-hot
        L = 8
        d = L
        K = np.eye(L) * math.sqrt(d)
        Q = np.zeros((2, L))
        Q[0, 3] = 2000.0  # one-hot probability row
        cfg = MeaConfig(c=1.0, U=L, seed=1)
        sel = variance_proxy(Q, K, cfg)
        npt.assert_allclose(sel.variance_per_query[0], (L - 1) / L ** 2, atol=1e-15)
        assert sel.variance_per_query[1] == 0.0
        assert 1 in sel.selected  # flat row ranks first

    def test_temperature_family_matches_exact_entropy(self):
        temps = [0.25, 0.5, 1.0, 2.0, 4.0]
        L = 32
        rng = np.random.default_rng(6)
        agree_full = 0
        n = 50
        for trial in range(n):
            s = rng.normal(size=L)
            K = np.eye(L) * math.sqrt(L)
            Q = np.stack([s / t for t in temps])
            sel = variance_proxy(Q, K, MeaConfig(c=1.0, U=L, seed=trial))
            by_var = np.argsort(-sel.variance_per_query, kind="stable")
            exact = []
            for t in temps:
                e = np.exp(s / t - (s / t).max())
                exact.append(entropy(e / e.sum()))
            by_entropy = np.argsort(exact, kind="stable")
            if np.array_equal(by_var, by_entropy):
                agree_full += 1
        assert agree_full == n  # exact case must be perfectly monotone

    def test_determinism_and_shared_sample(self):
        rng = np.random.default_rng(7)
        Q = rng.normal(size=(9, 5))
        K = rng.normal(size=(20, 5))
        cfg = MeaConfig(c=2.0, seed=42)
        a = variance_proxy(Q, K, cfg)
        b = variance_proxy(Q, K, cfg)
        npt.assert_array_equal(a.sampled_key_indices, b.sampled_key_indices)
        npt.assert_array_equal(a.selected, b.selected)
        assert len(a.sampled_key_indices) == cfg.resolve_U(20)
        assert len(np.unique(a.sampled_key_indices)) == len(a.sampled_key_indices)

    def test_score_shift_leaves_selection_unchanged(self):
        # keys share a constant first coordinate, so bumping a query's first
        # coordinate adds the same constant to each of its scores
        rng = np.random.default_rng(8)
        L = 12
        K = rng.normal(size=(L, 4))
        K[:, 0] = 1.0
        Q = rng.normal(size=(6, 4))
        cfg = MeaConfig(c=2.0, seed=3)
        base = variance_proxy(Q, K, cfg)
        Q2 = Q.copy()
        Q2[2, 0] += 7.5
        shifted = variance_proxy(Q2, K, cfg)
        npt.assert_allclose(
            shifted.variance_per_query[2], base.variance_per_query[2], atol=1e-12
        )
        npt.assert_array_equal(shifted.selected, base.selected)

    def test_explicit_U_beyond_keys(self):
        with pytest.raises(ConfigError):
            variance_proxy(np.zeros((3, 2)), np.zeros((4, 2)), MeaConfig(U=5))


class TestMeaAttention:
    def test_full_budget_equals_dense(self):
        rng = np.random.default_rng(9)
        for trial in range(10):
            L = int(rng.integers(2, 64))
            d = int(rng.integers(1, 16))
            Q = rng.normal(size=(L, d))
            K = rng.normal(size=(L, d))
            V = rng.normal(size=(L, d))
            cfg = MeaConfig(c=3.0, u=L, U=L, seed=trial)
            sparse = mea_attention(Q, K, V, cfg).data
            dense = dense_attention(Q, K, V).data
            assert np.abs(sparse - dense).max() < 1e-6

    def test_forced_empty_selection_is_value_mean(self):
        rng = np.random.default_rng(10)
        Q = rng.normal(size=(7, 3))
        K = rng.normal(size=(5, 3))
        V = rng.normal(size=(5, 4))
        out = mea_attention(Q, K, V, MeaConfig(u=0, U=5, seed=0))
        expected = np.tile(V.mean(axis=0), (7, 1))
        npt.assert_allclose(out.data, expected, atol=1e-12)

    def test_causal_fallback_is_prefix_mean(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(9, 3))
        V = rng.normal(size=(9, 2))
        out = mea_attention(X, X, V, MeaConfig(u=0, U=4, seed=2), mask="causal")
        expected = np.cumsum(V, axis=0) / np.arange(1, 10)[:, None]
        npt.assert_allclose(out.data, expected, atol=1e-12)

    def test_mixed_case_branchwise(self):
        rng = np.random.default_rng(12)
        Q = rng.normal(size=(8, 4))
        K = rng.normal(size=(8, 4))
        V = rng.normal(size=(8, 3))
        cfg = MeaConfig(c=3.0, u=3, U=8, seed=5)
        sel = variance_proxy(Q, K, cfg)
        assert len(sel.selected) == 3
        out = mea_attention(Q, K, V, cfg).data
        dense = dense_attention(Q, K, V).data
        mean_row = V.mean(axis=0)
        for i in range(8):
            if i in sel.selected:
                npt.assert_allclose(out[i], dense[i], atol=1e-10)
            else:
                npt.assert_allclose(out[i], mean_row, atol=1e-12)

    def test_causal_invariance_to_future(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(14, 4))
        V = rng.normal(size=(14, 2))
        cfg = MeaConfig(c=1.5, seed=8)
        base = mea_attention(X, X, V, cfg, mask="causal").data
        for j in range(1, 14):
            X2, V2 = X.copy(), V.copy()
            X2[j:] += rng.normal(size=X2[j:].shape)
            V2[j:] -= 3.0
            pert = mea_attention(X2, X2, V2, cfg, mask="causal").data
            npt.assert_allclose(pert[:j], base[:j], atol=1e-12)

    def test_work_bound_counter(self):
        rng = np.random.default_rng(14)
        L_Q, L_K = 24, 40
        Q = rng.normal(size=(L_Q, 6))
        K = rng.normal(size=(L_K, 6))
        V = rng.normal(size=(L_K, 5))
        cfg = MeaConfig(c=2.0, seed=4)
        u = cfg.resolve_u(L_Q)
        U = cfg.resolve_U(L_K)
        ATTENTION_COUNTER.reset()
        mea_attention(Q, K, V, cfg)
        assert ATTENTION_COUNTER.full_rows == u
        assert ATTENTION_COUNTER.sampled_products == U * L_Q
        assert ATTENTION_COUNTER.dot_products == u * L_K + U * L_Q

    def test_fixed_seed_is_reproducible(self):
        rng = np.random.default_rng(15)
        Q = rng.normal(size=(16, 4))
        K = rng.normal(size=(20, 4))
        V = rng.normal(size=(20, 4))
        cfg = MeaConfig(c=2.5, seed=77)
        a = mea_attention(Q, K, V, cfg).data
        b = mea_attention(Q, K, V, cfg).data
        npt.assert_array_equal(a, b)


class TestAttentionStats:
    def test_uniform_rows(self):
        L = 16
        st = attention_stats(np.zeros((4, L)))
        expected_bin = int((1.0 / L) * 64)
        assert st.counts[expected_bin] == 4 * L
        assert st.counts.sum() == 4 * L
        npt.assert_allclose(st.row_entropy, math.log(L), atol=1e-12)

    def test_one_hot_rows(self):
        scores = np.zeros((3, 8))
        scores[np.arange(3), [0, 4, 7]] = 2000.0
        st = attention_stats(scores)
        assert st.counts[0] == 3 * 7  # zeros land in the first bin
        assert st.counts[-1] == 3  # exact ones land in the last bin
        npt.assert_allclose(st.row_entropy, 0.0, atol=1e-15)

    def test_count_conservation(self):
        rng = np.random.default_rng(16)
        scores = rng.normal(size=(12, 30))
        st = attention_stats(scores)
        assert st.counts.sum() == 12 * 30

    def test_csv_headers(self):
        st = attention_stats(np.zeros((2, 4)))
        assert st.histogram_csv().splitlines()[0] == "bin_lo,bin_hi,count"
        assert st.entropy_csv().splitlines()[0] == "row,entropy"

    def test_non_finite_rejected(self):
        from infomaxformer.tensor import finite_checks

        with finite_checks(False):
            with pytest.raises(InvalidValueError):
                attention_stats(np.array([[np.inf, 0.0]]))
