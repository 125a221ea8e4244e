"""Hot inner loops for the 1D layers.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version. The active backend is chosen at import time from the
``IMUNET_NUMBA`` environment variable (``0``/``false``/``off`` selects
numpy) and can be switched at runtime with :func:`set_backend`. Both paths
return identical results up to floating point summation order.

Layout conventions: ``xp`` is an already padded input ``[B, C, Lp]``;
columns are ``[B, L_out, C, K]`` so that ``cols.reshape(B * L_out, C * K)``
feeds a BLAS matmul directly.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

__all__ = [
    "get_backend",
    "set_backend",
    "unfold",
    "fold",
    "depthwise_forward",
    "depthwise_backward",
    "maxpool_forward",
    "maxpool_backward",
    "elu_forward",
    "elu_backward",
    "bn_forward",
    "bn_backward",
    "compensated_cumsum",
]


def _env_wants_numba():
    flag = os.environ.get("IMUNET_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


_BACKEND = "numba" if (numba is not None and _env_wants_numba()) else "numpy"


def get_backend():
    return _BACKEND


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous name."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba is not installed")
    previous, _BACKEND = _BACKEND, name
    return previous


def _jit(func):
    if numba is None:
        return func
    return numba.njit(cache=True, fastmath=False)(func)


# --------------------------------------------------------------------------
# numpy implementations


def _unfold_np(xp, K, stride, L_out):
    win = sliding_window_view(xp, K, axis=2)[:, :, : (L_out - 1) * stride + 1 : stride, :]
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3))


def _fold_np(dcols, Lp, stride):
    B, L_out, C, K = dcols.shape
    dxp = np.zeros((B, C, Lp))
    d = dcols.transpose(0, 2, 1, 3)
    stop = (L_out - 1) * stride + 1
    for k in range(K):
        dxp[:, :, k : k + stop : stride] += d[:, :, :, k]
    return dxp


def _depthwise_forward_np(xp, w, stride, L_out):
    B, C, _ = xp.shape
    K = w.shape[1]
    stop = (L_out - 1) * stride + 1
    out = np.zeros((B, C, L_out))
    for k in range(K):
        out += w[None, :, k, None] * xp[:, :, k : k + stop : stride]
    return out


def _depthwise_backward_np(xp, w, dout, stride):
    B, C, Lp = xp.shape
    K = w.shape[1]
    L_out = dout.shape[2]
    stop = (L_out - 1) * stride + 1
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for k in range(K):
        seg = xp[:, :, k : k + stop : stride]
        dw[:, k] = np.einsum("bcl,bcl->c", dout, seg)
        dxp[:, :, k : k + stop : stride] += dout * w[None, :, k, None]
    return dxp, dw


def _maxpool_forward_np(xp, K, stride, L_out):
    win = sliding_window_view(xp, K, axis=2)[:, :, : (L_out - 1) * stride + 1 : stride, :]
    # argmax returns the first maximal index, which is the tie-break rule
    arg = np.argmax(win, axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    idx = arg + stride * np.arange(L_out)[None, None, :]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def _maxpool_backward_np(dout, idx, Lp):
    B, C, L_out = dout.shape
    dxp = np.zeros((B, C, Lp))
    flat = dxp.reshape(B * C, Lp)
    rows = np.repeat(np.arange(B * C), L_out)
    np.add.at(flat, (rows, idx.reshape(-1)), dout.reshape(-1))
    return dxp


def _elu_forward_np(x):
    neg = x < 0
    return np.where(neg, np.expm1(np.where(neg, x, 0.0)), x)


def _elu_backward_np(g, x, y):
    return np.where(x < 0, g * (y + 1.0), g)


def _bn_forward_np(x, mu, inv, gamma, beta):
    xhat = (x - mu[None, :, None]) * inv[None, :, None]
    return xhat, xhat * gamma[None, :, None] + beta[None, :, None]


def _bn_backward_np(g, xhat, gamma, inv):
    n = g.shape[0] * g.shape[2]
    dbeta = g.sum(axis=(0, 2))
    dgamma = (g * xhat).sum(axis=(0, 2))
    # d xhat sums are gamma-scaled versions of dbeta / dgamma
    dx = (gamma * inv / n)[None, :, None] * (
        n * g - dbeta[None, :, None] - xhat * dgamma[None, :, None]
    )
    return dx, dgamma, dbeta


def _compensated_cumsum_np(x0, inc):
    # Neumaier summation, vectorized across columns only so that the
    # operation order matches the compiled kernel exactly
    n, m = inc.shape
    out = np.empty((n + 1, m))
    s = x0.copy()
    c = np.zeros(m)
    out[0] = s
    for i in range(n):
        v = inc[i]
        t = s + v
        c += np.where(np.abs(s) >= np.abs(v), (s - t) + v, (v - t) + s)
        s = t
        out[i + 1] = s + c
    return out


# --------------------------------------------------------------------------
# numba implementations


@_jit
def _unfold_nb(xp, K, stride, L_out):
    B, C, _ = xp.shape
    cols = np.empty((B, L_out, C, K))
    for b in range(B):
        for l in range(L_out):
            s = l * stride
            for c in range(C):
                for k in range(K):
                    cols[b, l, c, k] = xp[b, c, s + k]
    return cols


@_jit
def _fold_nb(dcols, Lp, stride):
    B, L_out, C, K = dcols.shape
    dxp = np.zeros((B, C, Lp))
    for b in range(B):
        for l in range(L_out):
            s = l * stride
            for c in range(C):
                for k in range(K):
                    dxp[b, c, s + k] += dcols[b, l, c, k]
    return dxp


@_jit
def _depthwise_forward_nb(xp, w, stride, L_out):
    B, C, _ = xp.shape
    K = w.shape[1]
    out = np.empty((B, C, L_out))
    for b in range(B):
        for c in range(C):
            for l in range(L_out):
                s = l * stride
                acc = 0.0
                for k in range(K):
                    acc += w[c, k] * xp[b, c, s + k]
                out[b, c, l] = acc
    return out


@_jit
def _depthwise_backward_nb(xp, w, dout, stride):
    B, C, Lp = xp.shape
    K = w.shape[1]
    L_out = dout.shape[2]
    dxp = np.zeros((B, C, Lp))
    dw = np.zeros((C, K))
    for b in range(B):
        for c in range(C):
            for l in range(L_out):
                s = l * stride
                g = dout[b, c, l]
                for k in range(K):
                    dw[c, k] += g * xp[b, c, s + k]
                    dxp[b, c, s + k] += g * w[c, k]
    return dxp, dw


@_jit
def _maxpool_forward_nb(xp, K, stride, L_out):
    B, C, _ = xp.shape
    out = np.empty((B, C, L_out))
    idx = np.empty((B, C, L_out), dtype=np.int64)
    for b in range(B):
        for c in range(C):
            for l in range(L_out):
                s = l * stride
                best = xp[b, c, s]
                arg = s
                for k in range(1, K):
                    v = xp[b, c, s + k]
                    if v > best:
                        best = v
                        arg = s + k
                out[b, c, l] = best
                idx[b, c, l] = arg
    return out, idx


@_jit
def _maxpool_backward_nb(dout, idx, Lp):
    B, C, L_out = dout.shape
    dxp = np.zeros((B, C, Lp))
    for b in range(B):
        for c in range(C):
            for l in range(L_out):
                dxp[b, c, idx[b, c, l]] += dout[b, c, l]
    return dxp


@_jit
def _elu_forward_nb(x):
    y = np.empty_like(x)
    xf = x.ravel()
    yf = y.ravel()
    for i in range(xf.size):
        v = xf[i]
        yf[i] = np.expm1(v) if v < 0 else v
    return y


@_jit
def _elu_backward_nb(g, x, y):
    dx = np.empty_like(g)
    gf, xf, yf, df = g.ravel(), x.ravel(), y.ravel(), dx.ravel()
    for i in range(gf.size):
        df[i] = gf[i] * (yf[i] + 1.0) if xf[i] < 0 else gf[i]
    return dx


@_jit
def _bn_forward_nb(x, mu, inv, gamma, beta):
    B, C, L = x.shape
    xhat = np.empty_like(x)
    y = np.empty_like(x)
    for b in range(B):
        for c in range(C):
            m, s, gm, bt = mu[c], inv[c], gamma[c], beta[c]
            for l in range(L):
                h = (x[b, c, l] - m) * s
                xhat[b, c, l] = h
                y[b, c, l] = h * gm + bt
    return xhat, y


@_jit
def _bn_backward_nb(g, xhat, gamma, inv):
    B, C, L = g.shape
    n = B * L
    dbeta = np.zeros(C)
    dgamma = np.zeros(C)
    for b in range(B):
        for c in range(C):
            for l in range(L):
                dbeta[c] += g[b, c, l]
                dgamma[c] += g[b, c, l] * xhat[b, c, l]
    dx = np.empty_like(g)
    for b in range(B):
        for c in range(C):
            k = gamma[c] * inv[c] / n
            for l in range(L):
                dx[b, c, l] = k * (n * g[b, c, l] - dbeta[c] - xhat[b, c, l] * dgamma[c])
    return dx, dgamma, dbeta


@_jit
def _compensated_cumsum_nb(x0, inc):
    n, m = inc.shape
    out = np.empty((n + 1, m))
    for j in range(m):
        s = x0[j]
        c = 0.0
        out[0, j] = s
        for i in range(n):
            v = inc[i, j]
            t = s + v
            if abs(s) >= abs(v):
                c += (s - t) + v
            else:
                c += (v - t) + s
            s = t
            out[i + 1, j] = s + c
    return out


# --------------------------------------------------------------------------
# dispatch

_TABLE = {
    "numpy": {
        "unfold": _unfold_np,
        "fold": _fold_np,
        "depthwise_forward": _depthwise_forward_np,
        "depthwise_backward": _depthwise_backward_np,
        "maxpool_forward": _maxpool_forward_np,
        "maxpool_backward": _maxpool_backward_np,
        "elu_forward": _elu_forward_np,
        "elu_backward": _elu_backward_np,
        "bn_forward": _bn_forward_np,
        "bn_backward": _bn_backward_np,
        "compensated_cumsum": _compensated_cumsum_np,
    },
    "numba": {
        "unfold": _unfold_nb,
        "fold": _fold_nb,
        "depthwise_forward": _depthwise_forward_nb,
        "depthwise_backward": _depthwise_backward_nb,
        "maxpool_forward": _maxpool_forward_nb,
        "maxpool_backward": _maxpool_backward_nb,
        "elu_forward": _elu_forward_nb,
        "elu_backward": _elu_backward_nb,
        "bn_forward": _bn_forward_nb,
        "bn_backward": _bn_backward_nb,
        "compensated_cumsum": _compensated_cumsum_nb,
    },
}


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def unfold(xp, K, stride, L_out):
    """Gather sliding windows of ``xp`` into ``[B, L_out, C, K]`` columns."""
    return _TABLE[_BACKEND]["unfold"](_c(xp), int(K), int(stride), int(L_out))


def fold(dcols, Lp, stride):
    """Adjoint of :func:`unfold`: scatter-add columns back to ``[B, C, Lp]``."""
    return _TABLE[_BACKEND]["fold"](_c(dcols), int(Lp), int(stride))


def depthwise_forward(xp, w, stride, L_out):
    return _TABLE[_BACKEND]["depthwise_forward"](_c(xp), _c(w), int(stride), int(L_out))


def depthwise_backward(xp, w, dout, stride):
    """Returns ``(d_xp, d_w)`` for a one-filter-per-channel convolution."""
    return _TABLE[_BACKEND]["depthwise_backward"](_c(xp), _c(w), _c(dout), int(stride))


def maxpool_forward(xp, K, stride, L_out):
    """Returns pooled values and the (first-on-tie) argmax index into ``xp``."""
    return _TABLE[_BACKEND]["maxpool_forward"](_c(xp), int(K), int(stride), int(L_out))


def maxpool_backward(dout, idx, Lp):
    return _TABLE[_BACKEND]["maxpool_backward"](
        _c(dout), np.ascontiguousarray(idx, dtype=np.int64), int(Lp)
    )


def elu_forward(x):
    return _TABLE[_BACKEND]["elu_forward"](_c(x))


def elu_backward(g, x, y):
    return _TABLE[_BACKEND]["elu_backward"](_c(g), _c(x), _c(y))


def bn_forward(x, mu, inv, gamma, beta):
    """Returns ``(xhat, y)`` for per-channel statistics ``mu`` and ``inv = 1/sigma``."""
    return _TABLE[_BACKEND]["bn_forward"](_c(x), _c(mu), _c(inv), _c(gamma), _c(beta))


def bn_backward(g, xhat, gamma, inv):
    """Training-mode batch-norm gradient: ``(dx, dgamma, dbeta)``."""
    return _TABLE[_BACKEND]["bn_backward"](_c(g), _c(xhat), _c(gamma), _c(inv))


def compensated_cumsum(x0, inc):
    """Prefix sums ``[x0, x0 + inc[0], ...]`` with Neumaier error compensation.

    Returns ``[n + 1, m]`` for ``inc`` of shape ``[n, m]``.
    """
    return _TABLE[_BACKEND]["compensated_cumsum"](_c(x0), _c(inc))
