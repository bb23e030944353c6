"""Forward/backward kernels on plain numpy arrays.

Each ``*_forward`` returns ``(output, cache)`` and the matching ``*_backward``
takes ``(d_output, cache)``.  Sequences are time-major ``(T, C)``; image
batches are channels-last ``(N, H, W, C)``.  Convolution weights are stored as
``(k, C_in, C_out)`` / ``(kh, kw, C_in, C_out)`` so the im2col product is a
single matmul.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Input shape violates an operator's shape law."""

    def __init__(self, message: str, required: int | None = None):
        super().__init__(message)
        self.required = required


def conv_out_len(n: int, k: int, s: int, p: int) -> int:
    if n + 2 * p < k:
        raise ShapeError(f"length {n} with padding {p} is shorter than kernel {k}",
                         required=k - 2 * p)
    return (n + 2 * p - k) // s + 1


# -- linear -----------------------------------------------------------------

def linear_forward(x, W, b):
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: x{x.shape} W{W.shape} b{b.shape} are inconsistent")
    return x @ W + b, (x, W)


def linear_backward(dy, cache):
    x, W = cache
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# -- 1D convolution ----------------------------------------------------------

def conv1d_forward(x, W, b, stride: int = 1, padding: int = 0):
    k, cin, cout = W.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d kernel size must be odd, got {k}")
    T, C = x.shape
    if C != cin:
        raise ShapeError(f"conv1d: input has {C} channels, weight expects {cin}")
    t_out = conv_out_len(T, k, stride, padding)
    xp = np.pad(x, ((padding, padding), (0, 0)))
    # (T_out, C, k) -> (T_out, k, C) so columns line up with W.reshape(k*C, cout)
    win = sliding_window_view(xp, k, axis=0)[::stride][:t_out]
    cols = win.transpose(0, 2, 1).reshape(t_out, k * cin)
    y = cols @ W.reshape(k * cin, cout) + b
    return y, (cols, W, T, stride, padding)


def conv1d_backward(dy, cache):
    cols, W, T, stride, padding = cache
    k, cin, cout = W.shape
    t_out = dy.shape[0]
    dW = (cols.T @ dy).reshape(W.shape)
    db = dy.sum(axis=0)
    dcols = (dy @ W.reshape(k * cin, cout).T).reshape(t_out, k, cin)
    dxp = np.zeros((T + 2 * padding, cin), dtype=dy.dtype)
    span = stride * (t_out - 1) + 1
    for j in range(k):
        dxp[j:j + span:stride] += dcols[:, j]
    return dxp[padding:padding + T], dW, db


# -- 2D convolution ----------------------------------------------------------

def conv2d_forward(x, W, b, stride: int = 1, padding: int = 0):
    kh, kw, cin, cout = W.shape
    N, H, Wd, C = x.shape
    if C != cin:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {cin}")
    ho = conv_out_len(H, kh, stride, padding)
    wo = conv_out_len(Wd, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # (N, ho, wo, C, kh, kw) -> (N, ho, wo, kh, kw, C)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(N * ho * wo, kh * kw * cin)
    y = cols @ W.reshape(kh * kw * cin, cout) + b
    return y.reshape(N, ho, wo, cout), (cols, W, x.shape, stride, padding)


def conv2d_backward(dy, cache):
    cols, W, xshape, stride, padding = cache
    kh, kw, cin, cout = W.shape
    N, H, Wd, _ = xshape
    _, ho, wo, _ = dy.shape
    dy2 = dy.reshape(-1, cout)
    dW = (cols.T @ dy2).reshape(W.shape)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ W.reshape(-1, cout).T).reshape(N, ho, wo, kh, kw, cin)
    dxp = np.zeros((N, H + 2 * padding, Wd + 2 * padding, cin), dtype=dy.dtype)
    sh, sw = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + sh:stride, j:j + sw:stride] += dcols[:, :, :, i, j]
    return dxp[:, padding:padding + H, padding:padding + Wd], dW, db


# -- pointwise / pooling -----------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def global_avg_pool_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def global_avg_pool_backward(dy, shape):
    N, H, W, C = shape
    return np.broadcast_to(dy[:, None, None, :] / (H * W), shape).copy()


def maxpool1d_forward(x, k: int = 2, s: int = 2):
    T, C = x.shape
    if T < k:
        raise ShapeError(f"maxpool1d needs at least {k} steps, got {T}", required=k)
    t_out = (T - k) // s + 1
    win = sliding_window_view(x, k, axis=0)[::s][:t_out]  # (T_out, C, k)
    arg = win.argmax(axis=2)  # first maximum wins ties
    y = np.take_along_axis(win, arg[..., None], axis=2)[..., 0]
    src = arg + (np.arange(t_out) * s)[:, None]
    return y, (src, x.shape)


def maxpool1d_backward(dy, cache):
    src, shape = cache
    dx = np.zeros(shape, dtype=dy.dtype)
    cols = np.broadcast_to(np.arange(shape[1]), src.shape)
    np.add.at(dx, (src, cols), dy)
    return dx


# -- softmax -----------------------------------------------------------------

def softmax(x, axis: int = -1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis: int = -1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- LSTM --------------------------------------------------------------------

def lstm_forward(x, Wx, Wh, b):
    """Single-direction LSTM from zero state.

    Gate blocks along the last weight axis are ordered (input, forget,
    candidate, output).
    """
    T, cin = x.shape
    H = Wh.shape[0]
    if Wx.shape != (cin, 4 * H) or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: x{x.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape} are inconsistent")
    dt = np.result_type(x, Wx)
    xa = x @ Wx + b
    hs = np.zeros((T + 1, H), dtype=dt)
    cs = np.zeros((T + 1, H), dtype=dt)
    gates = np.zeros((T, 4 * H), dtype=dt)
    for t in range(T):
        a = xa[t] + hs[t] @ Wh
        g = gates[t]
        g[:2 * H] = sigmoid(a[:2 * H])
        g[2 * H:3 * H] = np.tanh(a[2 * H:3 * H])
        g[3 * H:] = sigmoid(a[3 * H:])
        cs[t + 1] = g[H:2 * H] * cs[t] + g[:H] * g[2 * H:3 * H]
        hs[t + 1] = g[3 * H:] * np.tanh(cs[t + 1])
    return hs[1:].copy(), (x, Wx, Wh, hs, cs, gates)


def lstm_backward(dy, cache):
    x, Wx, Wh, hs, cs, gates = cache
    T, H = dy.shape
    da = np.zeros((T, 4 * H), dtype=dy.dtype)
    dh_next = np.zeros(H, dtype=dy.dtype)
    dc_next = np.zeros(H, dtype=dy.dtype)
    for t in range(T - 1, -1, -1):
        gi, gf, gg, go = gates[t, :H], gates[t, H:2 * H], gates[t, 2 * H:3 * H], gates[t, 3 * H:]
        tc = np.tanh(cs[t + 1])
        dh = dy[t] + dh_next
        dc = dh * go * (1.0 - tc * tc) + dc_next
        row = da[t]
        row[:H] = dc * gg * gi * (1.0 - gi)
        row[H:2 * H] = dc * cs[t] * gf * (1.0 - gf)
        row[2 * H:3 * H] = dc * gi * (1.0 - gg * gg)
        row[3 * H:] = dh * tc * go * (1.0 - go)
        dc_next = dc * gf
        dh_next = row @ Wh.T
    return da @ Wx.T, x.T @ da, hs[:-1].T @ da, da.sum(axis=0)


def bilstm_forward(x, fwd, bwd):
    """``fwd``/``bwd`` are ``(Wx, Wh, b)`` triples; output is ``(T, 2H)``."""
    yf, cf = lstm_forward(x, *fwd)
    yb, cb = lstm_forward(x[::-1], *bwd)
    return np.concatenate([yf, yb[::-1]], axis=1), (cf, cb, yf.shape[1])


def bilstm_backward(dy, cache):
    cf, cb, H = cache
    dxf, *gf = lstm_backward(dy[:, :H], cf)
    dxb, *gb = lstm_backward(np.ascontiguousarray(dy[::-1, H:]), cb)
    return dxf + dxb[::-1], tuple(gf), tuple(gb)
