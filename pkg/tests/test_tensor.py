import math

import numpy as np
import pytest

from gradcheck import check_grads, fd_grad, rel_err
from semlink.errors import ConfigError, ContractError, NonFiniteError, ShapeError
from semlink.rng import RngStream
from semlink.snapshot import load_tensors, save_tensors, tensor_from_bytes, tensor_to_bytes
from semlink.ctensor import ComplexTensor
from semlink.tensor import (
    AttentionParams,
    Tensor,
    add,
    backward,
    concat,
    div,
    draw_gaussian,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    mul,
    permute_axes,
    power,
    reshape,
    scatter_rows,
    sinusoid_table,
    slice_cols,
    softmax,
    softmax_attention,
    sub,
    tmean,
    transpose,
    tsum,
    zero_grad,
)


class TestConstruction:
    def test_shape_and_size(self):
        t = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.shape == (2, 2)
        assert t.size == 4
        assert np.prod(t.shape) == t.data.size

    def test_nan_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, float("nan")])

    def test_inf_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([[float("inf")]])

    def test_op_producing_nonfinite_raises(self):
        big = Tensor([1e308])
        with np.errstate(over="ignore"):
            with pytest.raises(NonFiniteError):
                mul(big, big)


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.arange(6, dtype=float).reshape(2, 3))
        out = matmul(Tensor(np.eye(2)), a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_zero_matrix(self):
        a = Tensor(np.random.default_rng(0).normal(size=(3, 3)))
        out = matmul(Tensor(np.zeros((3, 3))), a)
        np.testing.assert_array_equal(out.data, np.zeros((3, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestLayerNorm:
    def test_constant_row_maps_to_bias_zero(self):
        out = layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, np.zeros((1, 3)), atol=1e-12)

    def test_already_normalized_row(self):
        out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-9)

    def test_zero_gain_broadcasts_bias(self):
        x = Tensor(np.random.default_rng(1).normal(size=(4, 5)))
        bias = np.arange(5, dtype=float)
        out = layer_norm(x, Tensor(np.zeros(5)), Tensor(bias))
        np.testing.assert_array_equal(out.data, np.tile(bias, (4, 1)))

    def test_row_statistics(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(6, 32)) * 3 + 1)
        out = layer_norm(x, Tensor(np.ones(32)), Tensor(np.zeros(32)), eps=1e-10)
        mu = out.data.mean(axis=1)
        var = out.data.var(axis=1)
        assert np.abs(mu).max() < 1e-6
        assert np.abs(var - 1.0).max() < 1e-4

    def test_eps_positive_required(self):
        with pytest.raises(ContractError):
            layer_norm(Tensor([[1.0, 2.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)


class TestGelu:
    def test_zero(self):
        assert float(gelu(Tensor([0.0])).data[0]) == 0.0

    def test_asymptote(self):
        assert abs(float(gelu(Tensor([10.0])).data[0]) - 10.0) < 1e-6

    def test_unit_value(self):
        # 1 * Phi(1) via the erf form
        expected = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        assert abs(float(gelu(Tensor([1.0])).data[0]) - expected) < 1e-12
        assert abs(float(gelu(Tensor([1.0])).data[0]) - 0.8413447460685429) < 1e-12


class TestAttention:
    def _params(self, dim, seed=0):
        return AttentionParams.init(dim, RngStream(seed))

    def test_single_token_is_projected_value(self):
        dim = 6
        params = self._params(dim, 3)
        rng = np.random.default_rng(5)
        q = Tensor(rng.normal(size=(1, dim)))
        out = softmax_attention(q, q, q, params, 2)
        vp = q.data @ params.wv.data + params.bv.data
        expected = vp @ params.wo.data + params.bo.data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_identical_keys_uniform_weights(self):
        dim = 8
        params = self._params(dim, 4)
        rng = np.random.default_rng(6)
        k = Tensor(np.tile(rng.normal(size=(1, dim)), (5, 1)))
        q = Tensor(rng.normal(size=(5, dim)))
        v = Tensor(rng.normal(size=(5, dim)))
        _, weights = softmax_attention(q, k, v, params, 2, return_weights=True)
        for w in weights:
            np.testing.assert_allclose(w.data, np.full((5, 5), 0.2), atol=1e-12)

    def test_two_token_hand_oracle(self):
        # independent plain-numpy evaluation of the same attention definition
        dim, heads = 4, 2
        params = self._params(dim, 7)
        rng = np.random.default_rng(8)
        q, k, v = (rng.normal(size=(2, dim)) for _ in range(3))
        out = softmax_attention(Tensor(q), Tensor(k), Tensor(v), params, heads)

        qp = q @ params.wq.data + params.bq.data
        kp = k @ params.wk.data + params.bk.data
        vp = v @ params.wv.data + params.bv.data
        hd = dim // heads
        merged = np.zeros((2, dim))
        for h in range(heads):
            sl = slice(h * hd, (h + 1) * hd)
            scores = qp[:, sl] @ kp[:, sl].T / math.sqrt(hd)
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            attn = e / e.sum(axis=1, keepdims=True)
            merged[:, sl] = attn @ vp[:, sl]
        expected = merged @ params.wo.data + params.bo.data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_attention_rows_sum_to_one(self):
        dim = 12
        params = self._params(dim, 9)
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(7, dim)))
        _, weights = softmax_attention(x, x, x, params, 3, return_weights=True)
        for w in weights:
            np.testing.assert_allclose(w.data.sum(axis=1), np.ones(7), atol=1e-6)

    def test_indivisible_heads_rejected(self):
        params = self._params(6, 1)
        x = Tensor(np.ones((2, 6)))
        with pytest.raises(ConfigError):
            softmax_attention(x, x, x, params, 4)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6, dtype=float).reshape(2, 3), requires_grad=True)
        backward(tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(tsum(mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_non_scalar_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            backward(mul(x, x))

    def test_double_backward_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        loss = tsum(x)
        backward(loss)
        with pytest.raises(ContractError):
            backward(loss)

    def test_grad_accumulates_across_losses(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(tsum(x))
        backward(tsum(mul(x, x)))
        np.testing.assert_allclose(x.grad, [3.0, 5.0])
        zero_grad([x])
        assert x.grad is None

    def test_constant_branch_gets_no_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([3.0, 4.0])
        backward(tsum(add(x, c)))
        assert c.grad is None


def _rand(rng, shape):
    return rng.normal(size=shape)


class TestFiniteDifferences:
    """Every differentiable primitive against central finite differences."""

    def test_elementwise_and_reductions(self):
        rng = np.random.default_rng(42)
        cases = [
            (lambda ts: tsum(mul(add(ts[0], ts[1]), sub(ts[0], ts[1]))),
             [_rand(rng, (3, 4)), _rand(rng, (3, 4))]),
            (lambda ts: tsum(div(ts[0], add(mul(ts[1], ts[1]), 1.0))),
             [_rand(rng, (2, 5)), _rand(rng, (2, 5))]),
            (lambda ts: tsum(power(add(mul(ts[0], ts[0]), 0.5), 1.5)), [_rand(rng, (4, 3))]),
            (lambda ts: tsum(mul(tmean(ts[0], axis=1, keepdims=True), ts[0])),
             [_rand(rng, (3, 6))]),
            (lambda ts: tmean(mul(tsum(ts[0], axis=0, keepdims=True), ts[0])),
             [_rand(rng, (4, 4))]),
            (lambda ts: tsum(add(ts[0], ts[1])), [_rand(rng, (3, 4)), _rand(rng, (4,))]),
        ]
        for fn, arrays in cases:
            check_grads(fn, arrays)

    def test_structural_ops(self):
        rng = np.random.default_rng(43)
        idx = np.array([2, 0, 3])
        cases = [
            (lambda ts: tsum(mul(matmul(ts[0], ts[1]), matmul(ts[0], ts[1]))),
             [_rand(rng, (3, 4)), _rand(rng, (4, 2))]),
            (lambda ts: tsum(mul(transpose(ts[0]), transpose(ts[0]))), [_rand(rng, (3, 5))]),
            (lambda ts: tsum(mul(reshape(ts[0], (2, 6)), reshape(ts[0], (2, 6)))),
             [_rand(rng, (3, 4))]),
            (lambda ts: tsum(mul(permute_axes(ts[0], (1, 2, 0)), 2.0)), [_rand(rng, (2, 3, 4))]),
            (lambda ts: tsum(mul(concat([ts[0], ts[1]], axis=1), concat([ts[1], ts[0]], axis=1))),
             [_rand(rng, (3, 2)), _rand(rng, (3, 2))]),
            (lambda ts: tsum(mul(slice_cols(ts[0], 1, 3), slice_cols(ts[0], 2, 4))),
             [_rand(rng, (4, 5))]),
            (lambda ts: tsum(mul(gather_rows(ts[0], idx), gather_rows(ts[0], idx))),
             [_rand(rng, (5, 3))]),
            (lambda ts: tsum(mul(scatter_rows(ts[0], idx, 6), 3.0)), [_rand(rng, (3, 4))]),
        ]
        for fn, arrays in cases:
            check_grads(fn, arrays)

    def test_nonlinearities(self):
        rng = np.random.default_rng(44)
        cases = [
            (lambda ts: tsum(mul(gelu(ts[0]), ts[0])), [_rand(rng, (4, 4))]),
            (lambda ts: tsum(mul(softmax(ts[0]), ts[1])),
             [_rand(rng, (3, 5)), _rand(rng, (3, 5))]),
            (lambda ts: tsum(mul(layer_norm(ts[0], ts[1], ts[2]), ts[0])),
             [_rand(rng, (3, 6)), _rand(rng, (6,)), _rand(rng, (6,))]),
        ]
        for fn, arrays in cases:
            check_grads(fn, arrays)

    def test_attention_grads(self):
        rng = np.random.default_rng(45)
        dim = 6
        params = AttentionParams.init(dim, RngStream(11))
        mats = params.tensors()
        names = sorted(mats)

        def fn(ts):
            p = AttentionParams(**{n: t for n, t in zip(names, ts)})
            x = Tensor(fn.x)
            return tsum(mul(softmax_attention(x, x, x, p, 2), 1.0))

        fn.x = rng.normal(size=(4, dim))
        arrays = [mats[n].data.copy() for n in names]
        check_grads(fn, arrays)

    def test_random_composites(self):
        # random small tensors, many trials, mixing several primitives
        rng = np.random.default_rng(46)
        for _ in range(40):
            a = _rand(rng, (3, 4))
            b = _rand(rng, (4, 3))

            def fn(ts):
                m = matmul(ts[0], ts[1])
                n = softmax(m)
                return tmean(mul(gelu(m), add(n, 0.5)))

            check_grads(fn, [a, b])


class TestRng:
    def test_zero_std_constant(self):
        t = draw_gaussian(RngStream(1, 2), 10, mean=3.5, std=0.0)
        np.testing.assert_array_equal(t.data, np.full(10, 3.5))

    def test_clt_mean_bound(self):
        n = 1_000_000
        mean, std = 0.7, 2.0
        t = draw_gaussian(RngStream(3, 4), n, mean=mean, std=std)
        assert abs(t.data.mean() - mean) < 4 * std / math.sqrt(n)

    def test_bit_identical_streams(self):
        a = RngStream(42, 9).normal((1000,))
        b = RngStream(42, 9).normal((1000,))
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ_and_decorrelate(self):
        a = RngStream(42, 1).normal((20000,))
        b = RngStream(42, 2).normal((20000,))
        assert not np.array_equal(a, b)
        rho = np.corrcoef(a, b)[0, 1]
        assert abs(rho) < 0.03

    def test_substream_deterministic(self):
        a = RngStream(5).substream(7, 9).normal((50,))
        b = RngStream(5).substream(7, 9).normal((50,))
        np.testing.assert_array_equal(a, b)

    def test_counter_advances(self):
        s = RngStream(0)
        s.normal((10,))
        assert s.counter == 10
        s.uniform((3, 3))
        assert s.counter == 19

    def test_negative_std_rejected(self):
        with pytest.raises(ContractError):
            draw_gaussian(RngStream(0), 3, std=-1.0)


class TestSinusoidTable:
    def test_closed_form(self):
        table = sinusoid_table(10, 8)
        for pos in range(10):
            for i in range(4):
                angle = pos / 10000 ** (2 * i / 8)
                assert abs(table[pos, 2 * i] - math.sin(angle)) < 1e-12
                assert abs(table[pos, 2 * i + 1] - math.cos(angle)) < 1e-12

    def test_rows_distinct(self):
        table = sinusoid_table(64, 32)
        assert len({tuple(np.round(r, 9)) for r in table}) == 64


class TestSnapshot:
    def test_real_roundtrip(self):
        t = Tensor(np.random.default_rng(0).normal(size=(3, 4, 2)))
        back, _ = tensor_from_bytes(tensor_to_bytes(t))
        np.testing.assert_array_equal(back.data, t.data)

    def test_complex_roundtrip(self):
        z = ComplexTensor(np.random.default_rng(1).normal(size=(2, 3))
                          + 1j * np.random.default_rng(2).normal(size=(2, 3)))
        back, _ = tensor_from_bytes(tensor_to_bytes(z))
        np.testing.assert_array_equal(back.data, z.data)

    def test_checkpoint_roundtrip_and_stability(self, tmp_path):
        rng = np.random.default_rng(3)
        tensors = {"a": Tensor(rng.normal(size=(4,))), "b": Tensor(rng.normal(size=(2, 2)))}
        p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
        save_tensors(p1, tensors)
        save_tensors(p2, tensors)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = load_tensors(p1)
        assert set(loaded) == {"a", "b"}
        np.testing.assert_array_equal(loaded["a"].data, tensors["a"].data)

    def test_bad_magic(self):
        from semlink.errors import ParseError

        with pytest.raises(ParseError):
            tensor_from_bytes(b"JUNKxxxxxxxxxxxx")
