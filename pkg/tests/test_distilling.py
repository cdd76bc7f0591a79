import numpy as np
import numpy.testing as npt
import pytest

from infomaxformer.attention import ATTENTION_COUNTER, MeaConfig, mea_attention
from infomaxformer.distilling import (
    DistillConfig,
    DistillPipeline,
    KVDistiller,
    complexity_plan,
    compute_l,
    distilled_length,
    split_heads,
)
from infomaxformer.errors import ConfigError
from infomaxformer.tensor import Tensor


class TestComputeL:
    @pytest.mark.parametrize("L,expected", [(729, 3), (64, 2), (784, 3), (1, 1), (4096, 4)])
    def test_sixth_root_rounding(self, L, expected):
        assert compute_l(L) == expected

    def test_distilled_length_chain(self):
        # per-stage pad-then-pool rule: 784 -> 262 -> 88 -> 30
        assert distilled_length(784, 3) == 30
        stages = [784]
        for _ in range(3):
            stages.append(-(-stages[-1] // 3))
        assert stages == [784, 262, 88, 30]
        assert distilled_length(729, 3) == 27


class TestDistillShapes:
    def test_reference_geometry(self):
        rng = np.random.default_rng(0)
        kv = KVDistiller(512, DistillConfig(l=3, h=2), rng)
        out = kv.distill(Tensor(rng.normal(size=(729, 512))))
        assert out.keys.shape == (8, 27, 64)
        assert out.values.shape == (8, 27, 64)
        assert out.heads == 8 and out.length == 27 and out.d_head == 64

    def test_padded_geometry(self):
        rng = np.random.default_rng(1)
        kv = KVDistiller(512, DistillConfig(l=3, h=2), rng)
        out = kv.distill(Tensor(rng.normal(size=(784, 512))))
        assert out.keys.shape == (8, 30, 64)

    def test_zero_weights_zero_output(self):
        rng = np.random.default_rng(2)
        pipe = DistillPipeline(16, 2, rng, bias=False)
        for w in pipe.weights:
            w.data[...] = 0.0
        out = pipe(Tensor(rng.normal(size=(24, 16))), l=2)
        assert out.shape == (8, 3, 2)
        npt.assert_array_equal(out.data, 0.0)

    def test_nonnegative_outputs(self):
        rng = np.random.default_rng(3)
        kv = KVDistiller(32, DistillConfig(h=2), rng)
        out = kv.distill(Tensor(rng.normal(size=(100, 32))))
        assert (out.keys.data >= 0).all()
        assert (out.values.data >= 0).all()

    def test_shape_law_over_configs(self):
        rng = np.random.default_rng(4)
        for l in (1, 2, 3):
            for h in (1, 2):
                d_model = 8 * h ** 3
                pipe = DistillPipeline(d_model, h, rng)
                for L in (5, 12, 17, 32):
                    out = pipe(Tensor(rng.normal(size=(L, d_model))), l=l)
                    t = L
                    f = d_model
                    for _ in range(3):
                        t = -(-t // l)
                        f //= h
                    assert out.shape == (h ** 3, t, f)

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(5)
        pipe = DistillPipeline(16, 2, rng, bias=False)
        x = rng.normal(size=(20, 16))
        base = pipe(Tensor(x), l=2).data
        scaled = pipe(Tensor(4.0 * x), l=2).data
        npt.assert_allclose(scaled, 4.0 * base, atol=1e-12)

    def test_indivisible_width_names_divisor(self):
        with pytest.raises(ConfigError, match="h\\^3=8"):
            DistillPipeline(20, 2, np.random.default_rng(6))

    def test_split_heads_contiguous(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 12))
        parts = split_heads(Tensor(x), 4)
        assert len(parts) == 4
        npt.assert_array_equal(parts[1].data, x[:, 3:6])


class TestComplexityPlan:
    def test_reference_budget(self):
        plan = complexity_plan(1024, 1024, DistillConfig(), MeaConfig(c=3.0))
        npt.assert_allclose(plan.selected_dot_products, 3 * 32 * 32, atol=1e-9)

    def test_budget_is_linear_in_length(self):
        a = complexity_plan(1024, 1024, DistillConfig(), MeaConfig(c=3.0))
        b = complexity_plan(2048, 2048, DistillConfig(), MeaConfig(c=3.0))
        npt.assert_allclose(
            b.selected_dot_products / a.selected_dot_products, 2.0, atol=1e-9
        )

    def test_instrumented_run_matches_plan(self):
        d_model, h, L = 64, 2, 512
        cfg = DistillConfig(h=h)
        mea = MeaConfig(c=3.0)
        plan = complexity_plan(L, L, cfg, mea)
        rng = np.random.default_rng(8)
        kv = KVDistiller(d_model, cfg, rng)
        x = Tensor(rng.normal(size=(L, d_model)))
        ATTENTION_COUNTER.reset()
        dkv = kv.distill(x)
        heads = h ** 3
        for i, q in enumerate(split_heads(x, heads)):
            mea_attention(q, dkv.keys[i], dkv.values[i], MeaConfig(c=3.0, seed=i))
        measured_per_head = ATTENTION_COUNTER.dot_products / heads
        assert abs(measured_per_head - plan.total) <= 0.15 * plan.total
