"""IMUNet, ResNet18-1D and MobileNet-1D regressors plus cost accounting.

All three map a ``[batch, 6, 200]`` window of globally rotated gyroscope
and accelerometer samples to a ``[batch, m]`` velocity.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .layers import (
    ELU,
    BatchNorm1d,
    Conv1d,
    Dense,
    DepthwiseSeparable,
    Dropout,
    Flatten,
    GlobalAvgPool,
    MaxPool1d,
    MobileResNetBlock,
    Module,
    ReLU,
    ResidualBlock,
    Sequential,
)
from .tensor import Tensor, no_grad

__all__ = [
    "INPUT_CHANNELS",
    "WINDOW",
    "Model",
    "CostReport",
    "build_imunet",
    "build_resnet18_1d",
    "build_mobilenet_1d",
    "build_model",
    "ARCHITECTURES",
    "count_costs",
]

INPUT_CHANNELS = 6
WINDOW = 200
_STAGE_CHANNELS = (64, 128, 256, 512)


class Model(Module):
    """A named regressor with a fixed ``(6, 200)`` input spec."""

    def __init__(self, name, m, body, input_spec=(INPUT_CHANNELS, WINDOW)):
        super().__init__()
        self.name = name
        self.m = m
        self.input_spec = tuple(input_spec)
        self.step = 0
        self.body = body

    @property
    def output_dim(self):
        return self.m

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.data.ndim != 3 or tuple(x.shape[1:]) != self.input_spec:
            raise DimensionError(
                f"{self.name} expects [batch, {self.input_spec[0]}, {self.input_spec[1]}], "
                f"got {list(x.shape)}"
            )
        return self.body(x)

    def predict(self, inputs, batch_size=256):
        """Inference on a numpy array ``[N, 6, 200]``; returns ``[N, m]``."""
        inputs = np.asarray(inputs, dtype=np.float64)
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                outs = [self.forward(inputs[i : i + batch_size]).data
                        for i in range(0, len(inputs), batch_size)]
        finally:
            self.train(was_training)
        if not outs:
            return np.zeros((0, self.m))
        return np.concatenate(outs, axis=0)

    def predict_windows(self, windows, batch_size=256):
        return self.predict(np.stack([w.input for w in windows]), batch_size)

    def dropout_layers(self):
        found = []

        def walk(mod):
            for _, child in mod.children():
                if isinstance(child, Dropout):
                    found.append(child)
                walk(child)

        walk(self)
        return found

    def output_shape(self, shape):
        return self.body.output_shape(shape)

    def cost_rows(self, shape, prefix=""):
        return self.body.cost_rows(shape, prefix)


def _check_m(m):
    if m not in (2, 3):
        raise ContractError(f"output dimension m must be 2 or 3, got {m!r}")


def _stem(act, rng):
    return Sequential(
        Conv1d(INPUT_CHANNELS, 64, 7, stride=2, padding=3, bias=False, rng=rng),
        BatchNorm1d(64),
        act(),
        MaxPool1d(3, stride=2, padding=1),
    )


def _stages(block, rng):
    stages, in_ch = [], 64
    for i, ch in enumerate(_STAGE_CHANNELS):
        stride = 1 if i == 0 else 2
        stages.append(Sequential(block(in_ch, ch, stride, rng=rng), block(ch, ch, 1, rng=rng)))
        in_ch = ch
    return stages


def build_imunet(m=2, seed=0, dropout=0.5):
    """IMUNet: ResNet18-style skeleton of MobileResNet blocks with ELU.

    Stage 7 is a pointwise 512->128 convolution; the 128x7 map is flattened
    into two dense layers (896->512->m) separated by ELU and dropout.
    """
    _check_m(m)
    rng = np.random.default_rng(seed)
    stages = _stages(MobileResNetBlock, rng)
    body = Sequential(
        _stem(ELU, rng),
        *stages,
        Sequential(Conv1d(512, 128, 1, bias=False, rng=rng), BatchNorm1d(128), ELU()),
        Sequential(
            Flatten(),
            Dense(128 * 7, 512, rng=rng),
            ELU(),
            Dropout(dropout, seed=seed),
            Dense(512, m, rng=rng),
        ),
    )
    return Model("imunet", m, body)


def build_resnet18_1d(m=2, seed=0, dropout=0.5):
    """ResNet18-1D baseline: dense kernel-3 basic blocks, ReLU, GAP head."""
    _check_m(m)
    rng = np.random.default_rng(seed)
    body = Sequential(
        _stem(ReLU, rng),
        *_stages(ResidualBlock, rng),
        Sequential(
            GlobalAvgPool(),
            Dense(512, 512, rng=rng),
            ReLU(),
            Dropout(dropout, seed=seed),
            Dense(512, m, rng=rng),
        ),
    )
    return Model("resnet18", m, body)


# (out_channels, stride) for the 13 depthwise-separable units of MobileNet-v1
MOBILENET_UNITS = (
    (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
    (512, 1), (512, 1), (512, 1), (512, 1), (512, 1),
    (1024, 2), (1024, 1),
)


def build_mobilenet_1d(m=2, seed=0):
    _check_m(m)
    rng = np.random.default_rng(seed)
    units, in_ch = [], 32
    for out_ch, stride in MOBILENET_UNITS:
        units.append(DepthwiseSeparable(in_ch, out_ch, stride, rng=rng))
        in_ch = out_ch
    body = Sequential(
        Sequential(Conv1d(INPUT_CHANNELS, 32, 3, stride=2, padding=1, bias=False, rng=rng),
                   BatchNorm1d(32), ReLU()),
        *units,
        Sequential(GlobalAvgPool(), Dense(1024, m, rng=rng)),
    )
    return Model("mobilenet", m, body)


ARCHITECTURES = {
    "imunet": build_imunet,
    "resnet18": build_resnet18_1d,
    "mobilenet": build_mobilenet_1d,
}


def build_model(name, m=2, seed=0):
    try:
        builder = ARCHITECTURES[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}"
        ) from None
    return builder(m, seed=seed)


@dataclass
class CostReport:
    model: str
    rows: list = field(default_factory=list)

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self):
        return sum(r.macs for r in self.rows)

    @property
    def total_flops(self):
        return sum(r.flops for r in self.rows)

    def to_text(self):
        width = max([len("layer"), len("total")] + [len(r.layer) for r in self.rows])
        head = f"{'layer':<{width}}  {'kind':<8} {'params':>10} {'macs':>12} {'flops':>12}"
        lines = [f"model: {self.model}", head, "-" * len(head)]
        for r in self.rows:
            lines.append(
                f"{r.layer:<{width}}  {r.kind:<8} {r.params:>10d} {r.macs:>12d} {r.flops:>12d}"
            )
        lines.append("-" * len(head))
        lines.append(
            f"{'total':<{width}}  {'':<8} {self.total_params:>10d} "
            f"{self.total_macs:>12d} {self.total_flops:>12d}"
        )
        return "\n".join(lines)

    def to_csv(self):
        lines = ["layer,params,macs,flops"]
        lines += [f"{r.layer},{r.params},{r.macs},{r.flops}" for r in self.rows]
        return "\n".join(lines) + "\n"


def count_costs(model):
    """Per-layer parameter, MAC and FLOP counts for one input window.

    Convolution MACs are ``L_out * C_out * (C_in / groups) * K``, dense MACs
    ``in * out``; FLOPs are ``2 * MACs`` for those and one per element for
    batch norm, activations, pooling and residual additions.
    """
    return CostReport(model.name, model.cost_rows(model.input_spec))
