import numpy as np
import numpy.testing as npt
import pytest

from infomaxformer.embedding import (
    CalendarStamp,
    EmbeddingFusion,
    InputEmbedding,
    ScalarProjection,
    TimeEmbedTables,
    positional_encoding,
    time_embedding,
)
from infomaxformer.errors import ConfigError, DataError, VocabError
from infomaxformer.tensor import Tensor


def conv1d_loop_oracle(x, w, bias=None):
    """Scalar-loop 1-D convolution with same-length edge padding."""
    L, cin = x.shape
    cout, _, k = w.shape
    half = (k - 1) // 2
    xp = np.pad(x, ((half, half), (0, 0)), mode="edge")
    out = np.zeros((L, cout))
    for t in range(L):
        for co in range(cout):
            acc = 0.0
            for ci in range(cin):
                for j in range(k):
                    acc += w[co, ci, j] * xp[t + j, ci]
            out[t, co] = acc + (bias[co] if bias is not None else 0.0)
    return out


class TestScalarProjection:
    def test_zero_input_bias_free(self):
        rng = np.random.default_rng(0)
        proj = ScalarProjection(3, 8, rng, bias=False)
        out = proj(Tensor(np.zeros((10, 3))))
        npt.assert_array_equal(out.data, 0.0)

    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        proj = ScalarProjection(1, 1, rng, bias=False)
        proj.w.data = np.array([[[0.0, 1.0, 0.0]]])
        x = rng.normal(size=(12, 1))
        npt.assert_allclose(proj(Tensor(x)).data, x, atol=1e-15)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        proj = ScalarProjection(7, 5, rng)
        x = rng.normal(size=(16, 7))
        expected = conv1d_loop_oracle(x, proj.w.data, proj.b.data)
        npt.assert_allclose(proj(Tensor(x)).data, expected, atol=1e-12)


class TestPositionalEncoding:
    def test_first_row_closed_form(self):
        pe = positional_encoding(3, 4)
        # position index starts at 1; column pairs use exponents 0 and 1/2
        expected_row0 = [np.sin(1.0), np.cos(1.0), np.sin(0.01), np.cos(0.01)]
        npt.assert_allclose(pe[0], expected_row0, atol=1e-15)
        npt.assert_allclose(pe[1, 0], np.sin(2.0), atol=1e-15)

    def test_formula_at_position_zero(self):
        # the formula itself at i=0 gives sin(0)=0 and cos(0)=1 for every j
        d = 8
        j = np.arange(d // 2)
        angle = 0.0 / np.power(10000.0, 2.0 * j / d)
        npt.assert_array_equal(np.sin(angle), 0.0)
        npt.assert_array_equal(np.cos(angle), 1.0)

    def test_range_bounded(self):
        pe = positional_encoding(512, 128)
        assert pe.shape == (512, 128)
        assert pe.min() >= -1.0 and pe.max() <= 1.0

    def test_bit_identical_regeneration(self):
        a = positional_encoding(64, 32)
        b = positional_encoding(64, 32)
        assert a.tobytes() == b.tobytes()

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            positional_encoding(4, 7)


class TestTimeEmbedding:
    def _stamps(self):
        return [
            CalendarStamp(month=7, day=1, hour=0, minute=0),
            CalendarStamp(month=7, day=1, hour=1, minute=30),
        ]

    def test_zero_tables(self):
        rng = np.random.default_rng(3)
        tables = TimeEmbedTables.init(6, rng)
        for t in (tables.month, tables.day, tables.hour, tables.minute):
            t.data[...] = 0.0
        out = time_embedding(self._stamps(), tables)
        npt.assert_array_equal(out.data, 0.0)

    def test_single_nonzero_rows_sum(self):
        rng = np.random.default_rng(4)
        tables = TimeEmbedTables.init(4, rng)
        for t in (tables.month, tables.day, tables.hour, tables.minute):
            t.data[...] = 0.0
        tables.month.data[7] = 1.0
        tables.day.data[1] = 10.0
        tables.hour.data[1] = 100.0
        tables.minute.data[30] = 1000.0
        out = time_embedding(self._stamps(), tables)
        npt.assert_array_equal(out.data[0], 11.0)  # month 7 + day 1, hour 0 and minute 0 are zero rows
        npt.assert_array_equal(out.data[1], 1111.0)

    def test_minute_out_of_vocab(self):
        with pytest.raises(VocabError, match="minute"):
            CalendarStamp(month=1, day=1, hour=0, minute=61)

    @pytest.mark.parametrize(
        "kwargs,field",
        [
            ({"month": 13, "day": 1, "hour": 0, "minute": 0}, "month"),
            ({"month": 1, "day": 32, "hour": 0, "minute": 0}, "day"),
            ({"month": 1, "day": 1, "hour": 24, "minute": 0}, "hour"),
            ({"month": 0, "day": 1, "hour": 0, "minute": 0}, "month"),
        ],
    )
    def test_bounds_name_field(self, kwargs, field):
        with pytest.raises(VocabError, match=field):
            CalendarStamp(**kwargs)

    def test_tables_grad_flow(self):
        rng = np.random.default_rng(5)
        tables = TimeEmbedTables.init(4, rng)
        out = time_embedding(self._stamps(), tables).sum()
        out.backward()
        assert tables.month.grad is not None
        npt.assert_allclose(tables.month.grad[7], 2.0 * np.ones(4))


class TestFusion:
    def _inputs(self, rng, L=6, d=5):
        return (
            Tensor(rng.normal(size=(L, d))),
            Tensor(rng.normal(size=(L, d))),
            Tensor(rng.normal(size=(L, d))),
        )

    def test_mean_weights(self):
        rng = np.random.default_rng(6)
        fuse = EmbeddingFusion(rng)
        fuse.w.data[...] = 1.0 / 3.0
        fuse.b.data[...] = 0.0
        sp, pe, te = self._inputs(rng)
        out = fuse(sp, pe, te)
        npt.assert_allclose(out.data, (sp.data + pe.data + te.data) / 3.0, atol=1e-15)

    def test_selector_weights(self):
        rng = np.random.default_rng(7)
        fuse = EmbeddingFusion(rng)
        fuse.w.data[0, :, 0, 0] = [1.0, 0.0, 0.0]
        fuse.b.data[...] = 0.0
        sp, pe, te = self._inputs(rng)
        npt.assert_array_equal(fuse(sp, pe, te).data, sp.data)

    def test_matches_pointwise_formula(self):
        rng = np.random.default_rng(8)
        fuse = EmbeddingFusion(rng)
        sp, pe, te = self._inputs(rng)
        w = fuse.w.data[0, :, 0, 0]
        expected = w[0] * sp.data + w[1] * pe.data + w[2] * te.data + fuse.b.data[0]
        npt.assert_allclose(fuse(sp, pe, te).data, expected, atol=1e-12)

    def test_pointwise_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        fuse = EmbeddingFusion(rng)
        sp, pe, te = self._inputs(rng, L=8)
        perm = rng.permutation(8)
        direct = fuse(sp, pe, te).data[perm]
        permuted = fuse(
            Tensor(sp.data[perm]), Tensor(pe.data[perm]), Tensor(te.data[perm])
        ).data
        npt.assert_allclose(permuted, direct, atol=1e-15)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(10)
        fuse = EmbeddingFusion(rng)
        with pytest.raises(ConfigError):
            fuse(Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 3))), Tensor(np.zeros((5, 3))))

    def test_bias_free_configuration(self):
        rng = np.random.default_rng(11)
        fuse = EmbeddingFusion(rng, bias=False)
        assert fuse.b is None


class TestPipeline:
    @pytest.mark.parametrize("d_x", [1, 3, 7])
    def test_output_shape_independent_of_dx(self, d_x):
        rng = np.random.default_rng(12)
        emb = InputEmbedding(d_x, 16, rng)
        stamps = [CalendarStamp(month=1, day=d + 1, hour=d, minute=0) for d in range(5)]
        out = emb(np.zeros((5, d_x)), stamps)
        assert out.shape == (5, 16)

    def test_stamp_count_mismatch(self):
        rng = np.random.default_rng(13)
        emb = InputEmbedding(2, 8, rng)
        stamps = [CalendarStamp(month=1, day=1, hour=0, minute=0)]
        with pytest.raises(DataError):
            emb(np.zeros((3, 2)), stamps)
