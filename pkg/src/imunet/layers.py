"""Stateful 1D layers and residual blocks built on :mod:`imunet.ops`.

Modules keep their parameters as :class:`~imunet.tensor.Tensor` attributes
(``requires_grad=True``) and their non-trainable state (batch-norm running
statistics) as registered numpy buffers. Iteration order of parameters and
buffers follows attribute assignment order, which makes it the checkpoint
order as well.

Every module can also describe its cost symbolically: ``output_shape``
maps a per-sample shape (``(C, L)`` or ``(F,)``) through the layer and
``cost_rows`` returns one :class:`CostRow` per leaf layer.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ContractError, DimensionError
from .tensor import Tensor, add

__all__ = [
    "CostRow",
    "Module",
    "Sequential",
    "Conv1d",
    "BatchNorm1d",
    "Dense",
    "ELU",
    "ReLU",
    "MaxPool1d",
    "GlobalAvgPool",
    "Flatten",
    "Dropout",
    "MobileResNetBlock",
    "ResidualBlock",
    "DepthwiseSeparable",
]


@dataclass(frozen=True)
class CostRow:
    layer: str
    kind: str
    params: int
    macs: int
    flops: int


class Module:
    def __init__(self):
        self.training = True
        self._buffer_names = []

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError

    def register_buffer(self, name, value):
        setattr(self, name, np.array(value, dtype=np.float64))
        self._buffer_names.append(name)

    def children(self):
        return [(k, v) for k, v in vars(self).items() if isinstance(v, Module)]

    def named_parameters(self, prefix=""):
        out = []
        for k, v in vars(self).items():
            if isinstance(v, Tensor) and v.requires_grad:
                out.append((prefix + k, v))
            elif isinstance(v, Module):
                out.extend(v.named_parameters(prefix + k + "."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        out = []
        for k, v in vars(self).items():
            if k in self._buffer_names:
                out.append((prefix + k, v))
            elif isinstance(v, Module):
                out.extend(v.named_buffers(prefix + k + "."))
        return out

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def output_shape(self, shape):
        return shape

    def cost_rows(self, shape, prefix):
        rows = []
        for name, child in self.children():
            rows.extend(child.cost_rows(shape, prefix + name + "."))
            shape = child.output_shape(shape)
        return rows


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def __iter__(self):
        return iter(m for _, m in self.children())

    def __len__(self):
        return len(self.children())

    def __getitem__(self, i):
        return list(self)[i]

    def forward(self, x):
        for layer in self:
            x = layer(x)
        return x

    def output_shape(self, shape):
        for layer in self:
            shape = layer.output_shape(shape)
        return shape


def _row(prefix, kind, params=0, macs=0, flops=None):
    if flops is None:
        flops = 2 * macs
    return CostRow(prefix.rstrip("."), kind, int(params), int(macs), int(flops))


class Conv1d(Module):
    """1D convolution; ``groups == in_channels == out_channels`` is depthwise."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 groups=1, bias=True, rng=None):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ContractError(
                f"channels {in_channels}->{out_channels} not divisible by groups={groups}"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = (in_channels // groups) * kernel_size
        self.weight = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       (out_channels, in_channels // groups, kernel_size)),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    @property
    def depthwise(self):
        return self.groups == self.in_channels == self.out_channels

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise DimensionError(
                f"conv1d expects {self.in_channels} input channels, got {x.shape[1]}"
            )
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def output_shape(self, shape):
        C, L = shape
        return (self.out_channels,
                ops.conv_output_length(L, self.kernel_size, self.stride, self.padding))

    def cost_rows(self, shape, prefix):
        _, L_out = self.output_shape(shape)
        params = self.weight.data.size + (0 if self.bias is None else self.bias.data.size)
        macs = L_out * self.out_channels * (self.in_channels // self.groups) * self.kernel_size
        kind = "conv_dw" if self.depthwise else ("conv_pw" if self.kernel_size == 1 else "conv")
        return [_row(prefix, kind, params, macs)]


class BatchNorm1d(Module):
    def __init__(self, num_channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.num_channels = num_channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(num_channels), requires_grad=True)
        self.beta = Tensor(np.zeros(num_channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(num_channels))
        self.register_buffer("running_var", np.ones(num_channels))

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)

    def cost_rows(self, shape, prefix):
        C, L = shape
        return [_row(prefix, "bn", 2 * C, 0, C * L)]


class Dense(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Tensor(rng.uniform(-bound, bound, (out_features, in_features)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def forward(self, x):
        return ops.dense(x, self.weight, self.bias)

    def output_shape(self, shape):
        (F,) = shape
        if F != self.in_features:
            raise DimensionError(f"dense expects {self.in_features} features, got {F}")
        return (self.out_features,)

    def cost_rows(self, shape, prefix):
        params = self.in_features * self.out_features + (self.out_features if self.bias else 0)
        return [_row(prefix, "dense", params, self.in_features * self.out_features)]


def _numel(shape):
    return int(np.prod(shape))


class ELU(Module):
    def forward(self, x):
        return ops.elu(x)

    def cost_rows(self, shape, prefix):
        return [_row(prefix, "elu", flops=_numel(shape))]


class ReLU(Module):
    def forward(self, x):
        return ops.relu(x)

    def cost_rows(self, shape, prefix):
        return [_row(prefix, "relu", flops=_numel(shape))]


class MaxPool1d(Module):
    def __init__(self, kernel_size, stride=None, padding=0):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = kernel_size if stride is None else stride
        self.padding = padding

    def forward(self, x):
        return ops.maxpool1d(x, self.kernel_size, self.stride, self.padding)

    def output_shape(self, shape):
        C, L = shape
        return (C, ops.conv_output_length(L, self.kernel_size, self.stride, self.padding))

    def cost_rows(self, shape, prefix):
        return [_row(prefix, "maxpool", flops=_numel(shape))]


class GlobalAvgPool(Module):
    def forward(self, x):
        return ops.global_avg_pool(x)

    def output_shape(self, shape):
        return (shape[0],)

    def cost_rows(self, shape, prefix):
        return [_row(prefix, "avgpool", flops=_numel(shape))]


class Flatten(Module):
    def forward(self, x):
        return ops.flatten(x)

    def output_shape(self, shape):
        return (_numel(shape),)

    def cost_rows(self, shape, prefix):
        return [_row(prefix, "flatten")]


class Dropout(Module):
    def __init__(self, p=0.5, seed=0):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(seed)

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, x):
        return ops.dropout(x, self.p, self.training, self.rng)

    def cost_rows(self, shape, prefix):
        # identity at inference
        return [_row(prefix, "dropout")]


def _projection(in_ch, out_ch, stride, rng):
    return Sequential(Conv1d(in_ch, out_ch, 1, stride=stride, bias=False, rng=rng),
                      BatchNorm1d(out_ch))


class _ResidualBase(Module):
    def _merge(self, branch, x):
        skip = x if self.shortcut is None else self.shortcut(x)
        if branch.shape != skip.shape:
            raise DimensionError(
                f"residual branch {list(branch.shape)} != shortcut {list(skip.shape)}"
            )
        return add(branch, skip)

    def output_shape(self, shape):
        C, L = shape
        return (self.out_channels, ops.conv_output_length(L, 3, self.stride, 1))

    def cost_rows(self, shape, prefix):
        rows = []
        cur = shape
        for name, child in self.children():
            if name == "shortcut":
                continue
            rows.extend(child.cost_rows(cur, prefix + name + "."))
            cur = child.output_shape(cur)
        if self.shortcut is not None:
            rows.extend(self.shortcut.cost_rows(shape, prefix + "shortcut."))
        out = self.output_shape(shape)
        rows.append(_row(prefix + "add", "add", flops=_numel(out)))
        rows.append(_row(prefix + "act", self._act_kind, flops=_numel(out)))
        return rows


class MobileResNetBlock(_ResidualBase):
    """Depthwise + pointwise residual unit with batch norm and ELU.

    ``ELU(BN(PW(ELU(BN(DW(x))))) + shortcut(x))``; the shortcut is the
    identity unless the stride or channel count changes, in which case it is
    a strided pointwise convolution followed by batch norm.
    """

    _act_kind = "elu"

    def __init__(self, in_channels, out_channels, stride=1, kernel_size=3, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        pad = kernel_size // 2
        self.dw = Conv1d(in_channels, in_channels, kernel_size, stride, pad,
                         groups=in_channels, bias=False, rng=rng)
        self.bn1 = BatchNorm1d(in_channels)
        self.act1 = ELU()
        self.pw = Conv1d(in_channels, out_channels, 1, bias=False, rng=rng)
        self.bn2 = BatchNorm1d(out_channels)
        needs_proj = stride != 1 or in_channels != out_channels
        self.shortcut = _projection(in_channels, out_channels, stride, rng) if needs_proj else None

    def forward(self, x):
        h = self.act1(self.bn1(self.dw(x)))
        h = self.bn2(self.pw(h))
        return ops.elu(self._merge(h, x))


class ResidualBlock(_ResidualBase):
    """Classic two-convolution (kernel 3) basic block with ReLU."""

    _act_kind = "relu"

    def __init__(self, in_channels, out_channels, stride=1, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.conv1 = Conv1d(in_channels, out_channels, 3, stride, 1, bias=False, rng=rng)
        self.bn1 = BatchNorm1d(out_channels)
        self.act1 = ReLU()
        self.conv2 = Conv1d(out_channels, out_channels, 3, 1, 1, bias=False, rng=rng)
        self.bn2 = BatchNorm1d(out_channels)
        needs_proj = stride != 1 or in_channels != out_channels
        self.shortcut = _projection(in_channels, out_channels, stride, rng) if needs_proj else None

    def forward(self, x):
        h = self.act1(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return ops.relu(self._merge(h, x))


class DepthwiseSeparable(Sequential):
    """MobileNet unit: DW(k3) + BN + ReLU + PW + BN + ReLU, no shortcut."""

    def __init__(self, in_channels, out_channels, stride=1, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        super().__init__(
            Conv1d(in_channels, in_channels, 3, stride, 1, groups=in_channels, bias=False, rng=rng),
            BatchNorm1d(in_channels),
            ReLU(),
            Conv1d(in_channels, out_channels, 1, bias=False, rng=rng),
            BatchNorm1d(out_channels),
            ReLU(),
        )
