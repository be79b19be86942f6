"""Batched layer primitives with hand-written backward passes."""
from __future__ import annotations

import numpy as np

CLAMP = 40.0


class NumericalDivergence(FloatingPointError):
    """Raised when a forward or backward pass produces NaN or Inf."""


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalDivergence(f"numerical divergence in {what}")
    return x


def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` whose rows do not depend on how many rows ``a`` has.

    BLAS routes single-row products through gemv, which rounds differently
    from gemm; a duplicated row keeps every call on the gemm path.
    """
    if a.ndim == 2 and a.shape[0] == 1:
        return (np.concatenate([a, a]) @ b)[:1]
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -CLAMP, CLAMP)))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------- dense

def dense_tanh_forward(x, W, b):
    y = np.tanh(mm(x, W) + b)
    return y, (x, W, y)


def dense_tanh_backward(dy, cache):
    x, W, y = cache
    da = dy * (1.0 - y * y)
    return da @ W.T, x.T @ da, da.sum(axis=0)


def dense_forward(x, W, b):
    return mm(x, W) + b, (x, W)


def dense_backward(dy, cache):
    x, W = cache
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# ---------------------------------------------------------------- LSTM

def lstm_cell(x, h_prev, c_prev, Wx, Wh, b):
    """One LSTM step with gate order (input, forget, candidate, output)."""
    H = Wh.shape[0]
    a = mm(x, Wx) + mm(h_prev, Wh) + b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    g = np.tanh(a[..., 2 * H:3 * H])
    o = sigmoid(a[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    check_finite(h, "lstm_cell")
    return h, c


def lstm_forward(X, Wx, Wh, b, reverse: bool = False):
    """Run an LSTM over ``X`` (B, S, D) from a zero state.

    Returns all hidden states (B, S, H) in input order and a cache.
    """
    B, S, D = X.shape
    H = Wh.shape[0]
    pre = mm(X.reshape(B * S, D), Wx).reshape(B, S, 4 * H) + b
    hs = np.empty((B, S, H), dtype=pre.dtype)
    cs = np.empty_like(hs)
    tcs = np.empty_like(hs)
    gates = np.empty_like(pre)
    h = np.zeros((B, H), dtype=pre.dtype)
    c = np.zeros_like(h)
    for t in (range(S - 1, -1, -1) if reverse else range(S)):
        a = pre[:, t] + mm(h, Wh)
        gt = gates[:, t]
        gt[:, :2 * H] = sigmoid(a[:, :2 * H])
        gt[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
        gt[:, 3 * H:] = sigmoid(a[:, 3 * H:])
        c = gt[:, H:2 * H] * c + gt[:, :H] * gt[:, 2 * H:3 * H]
        tc = np.tanh(c)
        h = gt[:, 3 * H:] * tc
        hs[:, t], cs[:, t], tcs[:, t] = h, c, tc
    check_finite(hs, "lstm")
    return hs, (X, Wx, Wh, hs, cs, tcs, gates, reverse)


def lstm_backward(dhs, cache):
    """Backprop through time. Returns ``(dX, dWx, dWh, db)``."""
    X, Wx, Wh, hs, cs, tcs, gates, reverse = cache
    B, S, D = X.shape
    H = Wh.shape[0]
    dpre = np.empty_like(gates)
    dh_next = np.zeros((B, H), dtype=hs.dtype)
    dc_next = np.zeros_like(dh_next)
    zero = np.zeros_like(dh_next)
    WhT = Wh.T
    for t in (range(S) if reverse else range(S - 1, -1, -1)):
        p = t + 1 if reverse else t - 1
        c_prev = cs[:, p] if 0 <= p < S else zero
        gt = gates[:, t]
        i, f, g, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        tc = tcs[:, t]
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = dpre[:, t]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        da[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ WhT
    h_prev = np.zeros_like(hs)
    if reverse:
        h_prev[:, :-1] = hs[:, 1:]
    else:
        h_prev[:, 1:] = hs[:, :-1]
    dflat = dpre.reshape(B * S, 4 * H)
    dWh = h_prev.reshape(B * S, H).T @ dflat
    dWx = X.reshape(B * S, D).T @ dflat
    db = dflat.sum(axis=0)
    dX = (dflat @ Wx.T).reshape(B, S, D)
    return dX, dWx, dWh, db


# ---------------------------------------------------------------- attention

def attention_forward(Hs, W, b, v):
    """Additive self-attention pooling over axis 1 of ``Hs`` (N, S, K)."""
    N, S, K = Hs.shape
    A = W.shape[1]
    th = np.tanh(mm(Hs.reshape(N * S, K), W).reshape(N, S, A) + b)
    e = th @ v
    u = softmax(e, axis=1)
    out = np.einsum("ns,nsk->nk", u, Hs)
    return out, u, (Hs, W, v, th, u)


def attention_backward(dout, cache):
    """Returns ``(dHs, dW, db, dv)``."""
    Hs, W, v, th, u = cache
    N, S, K = Hs.shape
    A = W.shape[1]
    dHs = u[:, :, None] * dout[:, None, :]
    du = np.einsum("nsk,nk->ns", Hs, dout)
    de = u * (du - np.sum(u * du, axis=1, keepdims=True))
    dv = np.einsum("nsa,ns->a", th, de)
    dpre = (de[:, :, None] * v) * (1.0 - th * th)
    dflat = dpre.reshape(N * S, A)
    dW = Hs.reshape(N * S, K).T @ dflat
    db = dflat.sum(axis=0)
    dHs += (dflat @ W.T).reshape(N, S, K)
    return dHs, dW, db, dv


# ---------------------------------------------------------------- loss

def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``."""
    B = logits.shape[0]
    logp = log_softmax(logits)
    loss = -float(np.mean(logp[np.arange(B), labels]))
    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1.0
    return loss, dlogits / B
