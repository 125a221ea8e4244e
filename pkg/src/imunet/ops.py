"""Differentiable 1D network operations on ``[batch, channels, length]`` tensors.

Each op computes its forward value with numpy/BLAS or the kernels in
:mod:`imunet._kernels` and registers a hand-written backward rule.
Convolutions use the cross-correlation convention (no kernel flip) with
zero padding.
"""

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError
from .tensor import Tensor

__all__ = [
    "conv_output_length",
    "conv1d",
    "batch_norm",
    "elu",
    "relu",
    "maxpool1d",
    "global_avg_pool",
    "flatten",
    "dense",
    "dropout",
]


def conv_output_length(L, kernel_size, stride=1, padding=0):
    return (L + 2 * padding - kernel_size) // stride + 1


def _check_3d(x, op):
    if x.data.ndim != 3:
        raise DimensionError(f"{op}: expected [batch, channels, length], got {list(x.shape)}")


def conv1d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Grouped 1D convolution.

    Parameters
    ----------
    x : Tensor
        Input ``[B, C_in, L]``.
    weight : Tensor
        Filters ``[C_out, C_in // groups, K]``.
    bias : Tensor, optional
        ``[C_out]``.

    Returns
    -------
    Tensor
        ``[B, C_out, L_out]`` with ``L_out = floor((L + 2p - K) / s) + 1``.
    """
    _check_3d(x, "conv1d")
    B, C, L = x.shape
    O, Cg, K = weight.shape
    if C % groups or O % groups or Cg * groups != C:
        raise DimensionError(
            f"conv1d: input {list(x.shape)} does not fit weight {list(weight.shape)} "
            f"with groups={groups}"
        )
    Lp = L + 2 * padding
    if Lp < K:
        raise ContractError(f"conv1d: padded length {Lp} is shorter than kernel {K}")
    L_out = conv_output_length(L, K, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    w = weight.data

    if Cg == 1 and O == C:
        out = _kernels.depthwise_forward(xp, w[:, 0, :], stride, L_out)

        def backward_core(g):
            dxp, dw = _kernels.depthwise_backward(xp, w[:, 0, :], g, stride)
            return dxp, dw.reshape(O, 1, K)

    else:
        cols = _kernels.unfold(xp, K, stride, L_out)  # [B, L_out, C, K]
        Og = O // groups
        out = np.empty((B, O, L_out))
        for gi in range(groups):
            cg = cols[:, :, gi * Cg : (gi + 1) * Cg, :].reshape(B * L_out, Cg * K)
            wg = w[gi * Og : (gi + 1) * Og].reshape(Og, Cg * K)
            out[:, gi * Og : (gi + 1) * Og, :] = (cg @ wg.T).reshape(B, L_out, Og).transpose(0, 2, 1)

        def backward_core(g):
            dw = np.empty_like(w)
            dcols = np.empty((B, L_out, C, K))
            for gi in range(groups):
                cg = cols[:, :, gi * Cg : (gi + 1) * Cg, :].reshape(B * L_out, Cg * K)
                wg = w[gi * Og : (gi + 1) * Og].reshape(Og, Cg * K)
                g2 = g[:, gi * Og : (gi + 1) * Og, :].transpose(0, 2, 1).reshape(B * L_out, Og)
                dw[gi * Og : (gi + 1) * Og] = (g2.T @ cg).reshape(Og, Cg, K)
                dcols[:, :, gi * Cg : (gi + 1) * Cg, :] = (g2 @ wg).reshape(B, L_out, Cg, K)
            return _kernels.fold(dcols, Lp, stride), dw

    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        dxp, dw = backward_core(g)
        dx = dxp[:, :, padding : padding + L] if padding else dxp
        grads = (dx, dw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2)),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel normalization over (batch, length).

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (numpy arrays) are updated in place with the unbiased
    batch variance. In inference mode only the running statistics are used.
    """
    _check_3d(x, "batch_norm")
    B, C, L = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batch_norm: {C} channels but affine shape {list(gamma.shape)}")
    X, G = x.data, gamma.data
    if training:
        n = B * L
        if n < 2:
            raise ContractError("batch_norm: training mode needs at least 2 values per channel")
        mu = X.mean(axis=(0, 2))
        var = X.var(axis=(0, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
        inv = 1.0 / np.sqrt(var + eps)
        xhat, y = _kernels.bn_forward(X, mu, inv, G, beta.data)

        def backward(g):
            return _kernels.bn_backward(g, xhat, G, inv)

    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat, y = _kernels.bn_forward(X, running_mean, inv, G, beta.data)

        def backward(g):
            dx = g * (G * inv)[None, :, None]
            return dx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    return Tensor._from_op(y, (x, gamma, beta), backward)


def elu(x):
    """``x`` for ``x >= 0``, ``exp(x) - 1`` otherwise."""
    X = x.data
    y = _kernels.elu_forward(X)
    return Tensor._from_op(y, (x,), lambda g: (_kernels.elu_backward(g, X, y),))


def relu(x):
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def maxpool1d(x, kernel_size, stride=None, padding=0):
    _check_3d(x, "maxpool1d")
    stride = kernel_size if stride is None else stride
    B, C, L = x.shape
    Lp = L + 2 * padding
    if kernel_size > Lp:
        raise ContractError(f"maxpool1d: window {kernel_size} exceeds padded length {Lp}")
    L_out = conv_output_length(L, kernel_size, stride, padding)
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding)), constant_values=-np.inf)
    out, idx = _kernels.maxpool_forward(xp, kernel_size, stride, L_out)

    def backward(g):
        dxp = _kernels.maxpool_backward(g, idx, Lp)
        return (dxp[:, :, padding : padding + L] if padding else dxp,)

    return Tensor._from_op(out, (x,), backward)


def global_avg_pool(x):
    """``[B, C, L] -> [B, C]`` mean over length."""
    _check_3d(x, "global_avg_pool")
    L = x.shape[2]
    return Tensor._from_op(
        x.data.mean(axis=2),
        (x,),
        lambda g: (np.repeat(g[:, :, None] / L, L, axis=2),),
    )


def flatten(x):
    B = x.shape[0]
    return x.reshape(B, -1) if x.data.ndim > 2 else x


def dense(x, weight, bias=None):
    """Affine map ``x @ weight.T + bias`` with weight ``[out, in]``."""
    if x.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"dense: input {list(x.shape)} does not fit weight {list(weight.shape)}"
        )
    X, W = x.data, weight.data
    y = X @ W.T
    if bias is not None:
        y = y + bias.data[None, :]

    def backward(g):
        grads = (g @ W, g.T @ X)
        if bias is not None:
            grads += (g.sum(axis=0),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(y, parents, backward)


def dropout(x, p, training, rng):
    """Inverted dropout; identity at inference or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,))
