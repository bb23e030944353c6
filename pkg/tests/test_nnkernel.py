"""Tape, operator kernels against loop oracles, gradient checks and checkpoints."""

import numpy as np
import pytest

from cslr.nn import functional as F
from cslr.nn import layers as L
from cslr.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from cslr.nn.gradcheck import grad_check
from cslr.nn.tape import NonFiniteError, Param, Tape, Var

SEEDS = range(10)
TOL = 1e-4


# -- loop oracles ------------------------------------------------------------

def conv1d_loops(x, W, b, stride, padding):
    k, cin, cout = W.shape
    xp = np.pad(x, ((padding, padding), (0, 0)))
    t_out = (x.shape[0] + 2 * padding - k) // stride + 1
    y = np.zeros((t_out, cout))
    for t in range(t_out):
        for o in range(cout):
            acc = b[o]
            for j in range(k):
                for c in range(cin):
                    acc += xp[t * stride + j, c] * W[j, c, o]
            y[t, o] = acc
    return y


def conv2d_loops(x, W, b, stride, padding):
    kh, kw, cin, cout = W.shape
    N, H, Wd, _ = x.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = (H + 2 * padding - kh) // stride + 1
    wo = (Wd + 2 * padding - kw) // stride + 1
    y = np.zeros((N, ho, wo, cout))
    for n in range(N):
        for i in range(ho):
            for j in range(wo):
                patch = xp[n, i * stride:i * stride + kh, j * stride:j * stride + kw, :]
                for o in range(cout):
                    y[n, i, j, o] = np.sum(patch * W[..., o]) + b[o]
    return y


def lstm_loops(x, Wx, Wh, b):
    H = Wh.shape[0]
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    h, c = np.zeros(H), np.zeros(H)
    out = []
    for xt in x:
        a = xt @ Wx + h @ Wh + b
        i, f, g, o = sig(a[:H]), sig(a[H:2 * H]), np.tanh(a[2 * H:3 * H]), sig(a[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out)


class TestKernelOracles:
    @pytest.mark.parametrize("stride, padding", [(1, 0), (1, 2), (2, 1), (3, 2)])
    def test_conv1d(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x, W, b = rng.normal(size=(9, 3)), rng.normal(size=(5, 3, 4)), rng.normal(size=4)
        y, _ = F.conv1d_forward(x, W, b, stride, padding)
        np.testing.assert_allclose(y, conv1d_loops(x, W, b, stride, padding), atol=1e-12)

    @pytest.mark.parametrize("stride, padding", [(1, 0), (1, 1), (2, 1)])
    def test_conv2d(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x, W, b = rng.normal(size=(2, 7, 6, 3)), rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)
        y, _ = F.conv2d_forward(x, W, b, stride, padding)
        np.testing.assert_allclose(y, conv2d_loops(x, W, b, stride, padding), atol=1e-12)

    def test_linear(self):
        rng = np.random.default_rng(0)
        x, W, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5)), rng.normal(size=5)
        want = np.array([[sum(x[i, k] * W[k, j] for k in range(3)) + b[j] for j in range(5)] for i in range(4)])
        np.testing.assert_allclose(F.linear_forward(x, W, b)[0], want, atol=1e-12)

    def test_lstm(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(6, 3))
        Wx, Wh, b = rng.normal(size=(3, 8)) * 0.5, rng.normal(size=(2, 8)) * 0.5, rng.normal(size=8)
        np.testing.assert_allclose(F.lstm_forward(x, Wx, Wh, b)[0], lstm_loops(x, Wx, Wh, b), atol=1e-12)

    def test_bilstm_backward_direction_reads_reversed_sequence(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(5, 3))
        fwd = (rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8))
        bwd = (rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8))
        y, _ = F.bilstm_forward(x, fwd, bwd)
        assert y.shape == (5, 4)
        np.testing.assert_allclose(y[:, :2], lstm_loops(x, *fwd), atol=1e-12)
        np.testing.assert_allclose(y[:, 2:], lstm_loops(x[::-1], *bwd)[::-1], atol=1e-12)
        # reversing the input swaps the roles of the two directions
        y_rev, _ = F.bilstm_forward(x[::-1], bwd, fwd)
        np.testing.assert_allclose(y_rev[::-1], np.concatenate([y[:, 2:], y[:, :2]], axis=1), atol=1e-12)

    def test_global_avg_pool(self):
        x = np.arange(2 * 3 * 4 * 5, dtype=float).reshape(2, 3, 4, 5)
        y, _ = F.global_avg_pool_forward(x)
        np.testing.assert_allclose(y, [[x[n, :, :, c].sum() / 12 for c in range(5)] for n in range(2)])

    def test_maxpool_values(self):
        x = np.array([[1.0, 4.0], [3.0, 2.0], [0.0, 5.0], [7.0, 6.0], [9.0, 9.0]])
        y, _ = F.maxpool1d_forward(x)
        np.testing.assert_array_equal(y, [[3.0, 4.0], [7.0, 6.0]])

    def test_maxpool_tie_routes_gradient_to_first(self):
        x = np.array([[2.0], [2.0], [1.0], [1.0]])
        y, cache = F.maxpool1d_forward(x)
        dx = F.maxpool1d_backward(np.ones_like(y), cache)
        np.testing.assert_array_equal(dx[:, 0], [1.0, 0.0, 1.0, 0.0])

    def test_relu_subgradient_at_zero(self):
        y, mask = F.relu_forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(y, [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(F.relu_backward(np.ones(3), mask), [0.0, 0.0, 1.0])


class TestSoftmax:
    def test_rows_sum_to_one(self):
        x = np.random.default_rng(0).normal(size=(6, 5)) * 10
        np.testing.assert_allclose(F.softmax(x).sum(axis=1), 1.0, atol=1e-14)

    def test_shift_invariant_and_stable(self):
        x = np.array([[1000.0, 1001.0, 999.0]])
        p = F.softmax(x)
        np.testing.assert_allclose(p, F.softmax(x - 1000.0), atol=1e-15)
        assert np.all(np.isfinite(F.log_softmax(x)))
        np.testing.assert_allclose(np.exp(F.log_softmax(x)), p, atol=1e-15)

    def test_sigmoid_symmetry(self):
        x = np.linspace(-30, 30, 101)
        np.testing.assert_allclose(F.sigmoid(x) + F.sigmoid(-x), 1.0, atol=1e-15)


class TestShapeLaws:
    @pytest.mark.parametrize("n, k, s, p, want", [(8, 5, 1, 2, 8), (8, 3, 2, 1, 4), (7, 3, 2, 1, 4), (5, 5, 1, 0, 1)])
    def test_conv_out_len(self, n, k, s, p, want):
        assert F.conv_out_len(n, k, s, p) == want

    def test_too_short(self):
        with pytest.raises(F.ShapeError) as info:
            F.conv_out_len(2, 5, 1, 0)
        assert info.value.required == 5

    def test_even_kernel_rejected(self):
        with pytest.raises(F.ShapeError, match="odd"):
            F.conv1d_forward(np.zeros((6, 2)), np.zeros((4, 2, 2)), np.zeros(2))

    def test_channel_mismatch(self):
        with pytest.raises(F.ShapeError):
            F.conv2d_forward(np.zeros((1, 4, 4, 3)), np.zeros((3, 3, 2, 2)), np.zeros(2))

    def test_maxpool_needs_two_steps(self):
        with pytest.raises(F.ShapeError):
            F.maxpool1d_forward(np.zeros((1, 3)))

    def test_k5p2_pool_pool_gives_quarter_length(self):
        for T in range(4, 40):
            h = F.conv_out_len(T, 5, 1, 2)
            h = (h - 2) // 2 + 1
            h = F.conv_out_len(h, 5, 1, 2)
            assert (h - 2) // 2 + 1 == T // 4


class TestTape:
    def test_fan_out_accumulates(self):
        W = Param(np.array([[2.0]]), "W")
        b = Param(np.array([0.0]), "b")
        x = Var(np.array([[3.0]]))
        tape = Tape()
        y = L.linear(tape, x, W, b)
        loss = L.reduce_sum(tape, L.add(tape, y, y))
        tape.backward(loss)
        np.testing.assert_allclose(W.grad, [[6.0]])
        np.testing.assert_allclose(x.grad, [[4.0]])

    def test_param_grads_accumulate_until_zeroed(self):
        W = Param(np.ones((1, 1)), "W")
        b = Param(np.zeros(1), "b")
        for _ in range(2):
            tape = Tape()
            tape.backward(L.reduce_sum(tape, L.linear(tape, Var(np.ones((1, 1))), W, b)))
        np.testing.assert_allclose(W.grad, [[2.0]])
        W.zero_grad()
        np.testing.assert_allclose(W.grad, [[0.0]])

    def test_backward_twice_rejected(self):
        tape = Tape()
        loss = L.reduce_sum(tape, Var(np.ones(3)))
        tape.backward(loss)
        with pytest.raises(RuntimeError):
            tape.backward(loss)

    def test_nonscalar_loss_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError):
            tape.backward(L.relu(tape, Var(np.ones(3))))

    def test_non_finite_names_node(self):
        tape = Tape()
        with pytest.raises(NonFiniteError) as info:
            L.relu(tape, Var(np.array([np.inf])), name="frame.relu1")
        assert info.value.node == "frame.relu1"

    def test_seed_scales_gradients(self):
        x = Var(np.ones(3))
        tape = Tape()
        tape.backward(L.reduce_sum(tape, x), seed=0.5)
        np.testing.assert_allclose(x.grad, 0.5)


def _probe(rng, shape):
    """Random projection so the checked scalar depends on every output entry."""
    return rng.normal(size=shape)


class TestGradCheck:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_linear(self, seed):
        rng = np.random.default_rng(seed)
        x = Var(rng.normal(size=(4, 3)))
        W, b = Param(rng.normal(size=(3, 5)), "W"), Param(rng.normal(size=5), "b")
        r = _probe(rng, (4, 5))
        res = grad_check(lambda t: L.reduce_sum(t, _mul(t, L.linear(t, x, W, b), r)), [x, W, b])
        assert res.max_rel_error < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv1d(self, seed):
        rng = np.random.default_rng(seed)
        x = Var(rng.normal(size=(7, 3)))
        W, b = Param(rng.normal(size=(5, 3, 2)), "W"), Param(rng.normal(size=2), "b")
        r = _probe(rng, (4, 2))
        res = grad_check(lambda t: L.reduce_sum(t, _mul(t, L.conv1d(t, x, W, b, 2, 2), r)), [x, W, b])
        assert res.max_rel_error < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv2d(self, seed):
        rng = np.random.default_rng(seed)
        x = Var(rng.normal(size=(2, 5, 5, 2)))
        W, b = Param(rng.normal(size=(3, 3, 2, 3)), "W"), Param(rng.normal(size=3), "b")
        r = _probe(rng, (2, 3, 3, 3))
        res = grad_check(lambda t: L.reduce_sum(t, _mul(t, L.conv2d(t, x, W, b, 2, 1), r)), [x, W, b])
        assert res.max_rel_error < TOL

    @pytest.mark.parametrize("seed", SEEDS)
    def test_relu_and_pooling(self, seed):
        rng = np.random.default_rng(seed)
        x = Var(rng.normal(size=(2, 4, 4, 3)))
        r = _probe(rng, (2, 3))

        def loss(t):
            h = L.global_avg_pool(t, L.relu(t, x))
            return L.reduce_sum(t, _mul(t, h, r))

        res = grad_check(loss, [x])
        assert res.max_rel_error < TOL and res.checked > 0

    @pytest.mark.parametrize("seed", SEEDS)
    def test_maxpool(self, seed):
        rng = np.random.default_rng(seed)
        x = Var(rng.normal(size=(9, 3)))
        r = _probe(rng, (4, 3))
        res = grad_check(lambda t: L.reduce_sum(t, _mul(t, L.maxpool1d(t, x), r)), [x])
        assert res.max_rel_error < TOL and res.checked > 0

    @pytest.mark.parametrize("seed", SEEDS)
    def test_bilstm(self, seed):
        rng = np.random.default_rng(seed)
        x = Var(rng.normal(size=(5, 3)))
        layer = L.BiLSTM(3, 4, rng)
        r = _probe(rng, (5, 8))
        res = grad_check(lambda t: L.reduce_sum(t, _mul(t, layer(t, x), r)), [x, *layer.params()])
        assert res.max_rel_error < TOL

    def test_skips_kinks(self):
        x = Var(np.array([0.0005, -1.0, 2.0]))
        res = grad_check(lambda t: L.reduce_sum(t, L.relu(t, x)), [x])
        assert res.skipped == 1 and res.checked == 2 and res.max_rel_error < 1e-10

    def test_requires_float64(self):
        x = Var(np.ones(3, dtype=np.float32))
        with pytest.raises(TypeError):
            grad_check(lambda t: L.reduce_sum(t, x), [x])

    def test_detects_wrong_gradient(self):
        x = Var(np.array([1.0, 2.0]))

        def bad(t):
            return t.record("bad", (x,), np.sum(x.value ** 2), lambda dy: (dy * x.value,))

        assert grad_check(bad, [x]).max_rel_error > 0.1


def _mul(tape, v: Var, r: np.ndarray) -> Var:
    return tape.record("mul", (v,), v.value * r, lambda dy: (dy * r,))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"a.W": rng.normal(size=(3, 4)).astype(np.float32), "b": np.arange(5, dtype=np.float32),
                  "scalar": np.array(2.5, dtype=np.float32)}
        sections = {"MCFG": "k=v\n".encode(), "TRST": bytes(range(256))}
        save_checkpoint(tmp_path / "m.ckpt", params, sections)
        got, secs = load_checkpoint(tmp_path / "m.ckpt")
        assert list(got) == list(params)
        for k in params:
            np.testing.assert_array_equal(got[k], params[k])
            assert got[k].dtype == np.float32
        assert secs == sections

    def test_f64_stored_as_f32(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", {"w": np.array([1 / 3])})
        got, _ = load_checkpoint(tmp_path / "m.ckpt")
        assert got["w"][0] == np.float32(1 / 3)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_truncated(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", {"w": np.ones((10, 10))})
        data = (tmp_path / "m.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(data[:-7])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "t.ckpt")
