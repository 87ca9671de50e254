import math

import numpy as np
import pytest

from cossqformer import numkit as nk
from cossqformer.attention import (
    AttentionConfig,
    DomainError,
    Variant,
    attend,
    cos_square_attention_linear,
    cos_square_gap_weight,
    cos_square_weight,
    cos_weight,
    feature_map,
    mean_head_attention_map,
    position_weights,
    reweighted_attention_direct,
    softmax_attention,
)
from cossqformer.numkit import ContractError, ShapeError, Tensor, gradcheck

from oracles import reweighted_attention_loop, softmax_attention_loop


def _rand(rng, *shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape)


def _no_kinks(x, gap=1e-3):
    x = np.array(x)
    x[np.abs(x) < gap] = gap
    return x


class TestSoftmaxAttention:
    def test_single_key_returns_v(self):
        v = Tensor([[0.3, -2.0, 5.0]])
        out = softmax_attention(Tensor([[1.0, 2.0]]), Tensor([[-1.0, 0.5]]), v).output
        np.testing.assert_array_equal(out.data, v.data)

    def test_identical_keys_give_mean_of_v(self):
        rng = np.random.default_rng(0)
        k = np.tile(_rand(rng, 1, 3), (5, 1))
        v = _rand(rng, 5, 2)
        out = softmax_attention(Tensor(_rand(rng, 4, 3)), Tensor(k), Tensor(v)).output.data
        np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (4, 1)), atol=1e-14)

    @pytest.mark.parametrize("causal", [False, True])
    def test_double_loop_oracle(self, causal):
        rng = np.random.default_rng(1)
        q, k, v = _rand(rng, 4, 3), _rand(rng, 4, 3), _rand(rng, 4, 2)
        out = softmax_attention(Tensor(q), Tensor(k), Tensor(v), causal).output.data
        ref = softmax_attention_loop(q.tolist(), k.tolist(), v.tolist(), causal)
        np.testing.assert_allclose(out, ref, atol=1e-12, rtol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            softmax_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 1))))
        with pytest.raises(ShapeError):
            softmax_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))), Tensor(np.ones((3, 1))))


class TestWeights:
    def test_same_position_is_one(self):
        assert cos_square_weight(3, 3, 5) == 1.0

    def test_gap_equal_to_horizon_is_zero(self):
        assert cos_square_gap_weight(4, 4) == pytest.approx(0.0, abs=1e-30)
        assert cos_square_gap_weight(-4, 4) == pytest.approx(0.0, abs=1e-30)

    def test_exact_half(self):
        assert cos_square_weight(1, 3, 4) == pytest.approx(0.5, abs=1e-15)

    def test_half_angle_form(self):
        for M in (1, 2, 7, 16):
            for i in range(1, M + 1):
                for j in range(1, M + 1):
                    alt = 0.5 * (1 + math.cos(math.pi * (i - j) / M))
                    assert abs(cos_square_weight(i, j, M) - alt) < 1e-15

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            cos_square_weight(1, 5, 4)
        with pytest.raises(DomainError):
            cos_square_weight(0, 1, 4)
        with pytest.raises(DomainError):
            cos_square_gap_weight(5, 4)

    def test_locality_ordering_small(self):
        for M in range(2, 20):
            for i in range(1, M + 1):
                for j in range(1, M + 1):
                    if i == j:
                        assert cos_square_weight(i, j, M) == cos_weight(i, j, M) == 1.0
                    else:
                        assert cos_square_weight(i, j, M) < cos_weight(i, j, M)

    def test_position_weights_matrix(self):
        w = position_weights(Variant.COS_SQUARE, 3, 4, 5, causal=True)
        assert w.shape == (3, 4)
        assert w[0, 1] == 0.0 and w[2, 3] == 0.0
        assert w[2, 0] == pytest.approx(cos_square_weight(3, 1, 5), abs=1e-15)
        assert not w.flags.writeable


class TestConfig:
    def test_horizon_defaults_to_sequence_length(self):
        assert AttentionConfig().horizon(6, 6) == 6
        assert AttentionConfig(horizon_M=9).horizon(6, 4) == 9

    def test_horizon_shorter_than_sequence(self):
        with pytest.raises(ValueError):
            AttentionConfig(horizon_M=3).horizon(4, 4)

    def test_epsilon_positive(self):
        with pytest.raises(ValueError):
            AttentionConfig(epsilon=0.0)


VARIANTS = ["linear", "cos", "cossquare"]


class TestDirect:
    def test_linear_variant_single_positive_key(self):
        v = Tensor([[1.5, -3.0]])
        cfg = AttentionConfig(Variant.LINEAR, epsilon=1e-300)
        out = reweighted_attention_direct(Tensor([[0.5, 2.0]]), Tensor([[1.0, 1.0]]), v, cfg).output.data
        np.testing.assert_allclose(out, v.data, rtol=1e-15)

    def test_all_zero_query_row_gives_zero_output(self):
        rng = np.random.default_rng(2)
        q = _rand(rng, 4, 3)
        q[2] = -np.abs(q[2])
        res = reweighted_attention_direct(Tensor(q), Tensor(_rand(rng, 4, 3)), Tensor(_rand(rng, 4, 2)), AttentionConfig())
        assert np.all(res.output.data[2] == 0.0)
        assert np.isfinite(res.output.data).all()

    def test_triple_loop_oracle_n6_d4_m8(self):
        rng = np.random.default_rng(3)
        q, k, v = _rand(rng, 6, 4), _rand(rng, 6, 4), _rand(rng, 6, 3)
        cfg = AttentionConfig(Variant.COS_SQUARE, horizon_M=8)
        out = reweighted_attention_direct(Tensor(q), Tensor(k), Tensor(v), cfg).output.data
        ref = reweighted_attention_loop(q.tolist(), k.tolist(), v.tolist(), "cossquare", 8, False, 1e-6)
        np.testing.assert_allclose(out, ref, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("causal", [False, True])
    def test_loop_oracle_all_variants(self, variant, causal):
        rng = np.random.default_rng(4)
        q, k, v = _rand(rng, 5, 3), _rand(rng, 7, 3), _rand(rng, 7, 2)
        cfg = AttentionConfig(variant, causal=causal)
        out = reweighted_attention_direct(Tensor(q), Tensor(k), Tensor(v), cfg).output.data
        ref = reweighted_attention_loop(q.tolist(), k.tolist(), v.tolist(), variant, 7, causal, 1e-6)
        np.testing.assert_allclose(out, ref, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_weights_row_stochastic_and_nonnegative(self, variant):
        rng = np.random.default_rng(5)
        q, k = _rand(rng, 9, 4, lo=0.1), _rand(rng, 9, 4, lo=0.1)
        w = reweighted_attention_direct(Tensor(q), Tensor(k), Tensor(_rand(rng, 9, 2)), AttentionConfig(variant)).weights.data
        assert np.all(w >= 0)
        assert np.abs(w.sum(axis=1) - 1).max() < 1e-9

    def test_scores_nonnegative(self):
        rng = np.random.default_rng(6)
        qf, kf = feature_map(Tensor(_rand(rng, 6, 3))).data, feature_map(Tensor(_rand(rng, 6, 3))).data
        for variant in ("linear", "cossquare"):
            w = position_weights(variant, 6, 6, 6, False)
            assert np.all((qf @ kf.T) * w >= 0)

    def test_permutation_sensitivity(self):
        rng = np.random.default_rng(7)
        q = np.tile(_rand(rng, 1, 3, lo=0.1), (6, 1))
        k, v = _rand(rng, 6, 3), _rand(rng, 6, 2)
        perm = rng.permutation(6)
        while np.array_equal(perm, np.arange(6)):
            perm = rng.permutation(6)

        def run(variant, kk, vv):
            return reweighted_attention_direct(Tensor(q), Tensor(kk), Tensor(vv), AttentionConfig(variant)).output.data

        np.testing.assert_allclose(run("linear", k, v), run("linear", k[perm], v[perm]), atol=1e-14)
        assert np.abs(run("cossquare", k, v) - run("cossquare", k[perm], v[perm])).max() > 1e-6

    def test_softmax_dispatch(self):
        rng = np.random.default_rng(8)
        q, k, v = (Tensor(_rand(rng, 3, 2)) for _ in range(3))
        a = reweighted_attention_direct(q, k, v, AttentionConfig(Variant.SOFTMAX)).output.data
        np.testing.assert_array_equal(a, softmax_attention(q, k, v).output.data)


def _rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


class TestLinear:
    @pytest.mark.parametrize("causal", [False, True])
    def test_matches_direct(self, causal):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n, m, d, dv = rng.integers(1, 30, size=2).tolist() + rng.integers(1, 8, size=2).tolist()
            if causal:
                m = n
            q, k, v = Tensor(_rand(rng, n, d)), Tensor(_rand(rng, m, d)), Tensor(_rand(rng, m, dv))
            cfg = AttentionConfig(Variant.COS_SQUARE, causal=causal)
            lin = cos_square_attention_linear(q, k, v, cfg).output.data
            ref = reweighted_attention_direct(q, k, v, cfg).output.data
            assert _rel(lin, ref) < 1e-10

    def test_single_positive_pair(self):
        v = Tensor([[2.0, -1.0, 0.5]])
        out = cos_square_attention_linear(Tensor([[1.0]]), Tensor([[3.0]]), v, AttentionConfig(epsilon=1e-300)).output
        np.testing.assert_allclose(out.data, v.data, rtol=1e-15)

    def test_no_weights_field(self):
        out = cos_square_attention_linear(Tensor([[1.0]]), Tensor([[1.0]]), Tensor([[1.0]]), AttentionConfig())
        assert out.weights is None

    def test_half_factor_cancels(self):
        # the literal three-term sum with its 1/2 factor and epsilon equals the
        # unhalved sum with 2*epsilon, which is what the streaming form computes
        rng = np.random.default_rng(10)
        n, d, M, eps = 5, 3, 7, 1e-3
        q, k, v = np.maximum(_rand(rng, n, d), 0), np.maximum(_rand(rng, n, d), 0), _rand(rng, n, 2)
        th = np.pi * np.arange(1, n + 1) / M
        s = q @ k.T
        three = s * (1 + np.outer(np.cos(th), np.cos(th)) + np.outer(np.sin(th), np.sin(th)))
        halved = (0.5 * three) @ v / ((0.5 * three).sum(axis=1, keepdims=True) + eps)
        full = three @ v / (three.sum(axis=1, keepdims=True) + 2 * eps)
        np.testing.assert_allclose(halved, full, rtol=1e-13)
        cfg = AttentionConfig(horizon_M=M, epsilon=eps)
        out = cos_square_attention_linear(Tensor(q), Tensor(k), Tensor(v), cfg).output.data
        np.testing.assert_allclose(out, full, rtol=1e-12)
        np.testing.assert_allclose(reweighted_attention_direct(Tensor(q), Tensor(k), Tensor(v), cfg).output.data, full, rtol=1e-12)

    def test_grouped_input(self):
        rng = np.random.default_rng(11)
        q, k, v = _rand(rng, 3, 6, 4), _rand(rng, 3, 6, 4), _rand(rng, 3, 6, 2)
        cfg = AttentionConfig(causal=True)
        out = cos_square_attention_linear(Tensor(q), Tensor(k), Tensor(v), cfg).output.data
        for g in range(3):
            ref = cos_square_attention_linear(Tensor(q[g]), Tensor(k[g]), Tensor(v[g]), cfg).output.data
            np.testing.assert_allclose(out[g], ref, rtol=1e-14, atol=1e-16)

    def test_other_variants_rejected(self):
        t = Tensor([[1.0]])
        with pytest.raises(ContractError):
            cos_square_attention_linear(t, t, t, AttentionConfig(Variant.COS))

    def test_attend_dispatch(self):
        t = Tensor([[1.0, 2.0]])
        assert attend(t, t, t, AttentionConfig(), "linear").weights is None
        assert attend(t, t, t, AttentionConfig(), "direct").weights is not None
        assert attend(t, t, t, AttentionConfig(Variant.COS), "linear").weights is not None
        with pytest.raises(ValueError):
            attend(t, t, t, AttentionConfig(), "fast")


GRAD_CASES = [(v, "direct", c) for v in VARIANTS + ["softmax"] for c in (False, True)] + [
    ("cossquare", "linear", c) for c in (False, True)
]


@pytest.mark.parametrize("variant,form,causal", GRAD_CASES)
def test_attention_gradients(variant, form, causal):
    rng = np.random.default_rng(12)
    q, k, v = _no_kinks(_rand(rng, 5, 3)), _no_kinks(_rand(rng, 5, 3)), _rand(rng, 5, 2)
    w = Tensor(_rand(rng, 5, 2))
    cfg = AttentionConfig(variant, causal=causal)

    def readout(q, k, v):
        return nk.sum(nk.mul(attend(q, k, v, cfg, form).output, w))

    errs = gradcheck(readout, [Tensor(q), Tensor(k), Tensor(v)])
    assert max(errs) < 1e-4, errs


class TestMeanHeadMap:
    def test_one_head_identity(self):
        m = np.array([[1.0, 0.0], [0.3, 0.7]])
        np.testing.assert_array_equal(mean_head_attention_map([Tensor(m)]).data, m)

    def test_identical_heads(self):
        m = Tensor([[0.5, 0.5], [0.1, 0.9]])
        np.testing.assert_array_equal(mean_head_attention_map([m, m]).data, m.data)

    def test_two_distinct(self):
        a = np.array([[0.2, 0.8], [0.6, 0.4]])
        b = np.array([[1.0, 0.0], [0.5, 0.5]])
        out = mean_head_attention_map([Tensor(a), Tensor(b)]).data
        np.testing.assert_allclose(out, [[0.6, 0.4], [0.55, 0.45]], atol=1e-15)
        assert np.abs(out.sum(axis=1) - 1).max() < 1e-9

    def test_empty_and_mismatched(self):
        with pytest.raises(ContractError):
            mean_head_attention_map([])
        with pytest.raises(ShapeError):
            mean_head_attention_map([Tensor(np.eye(2)), Tensor(np.eye(3))])
