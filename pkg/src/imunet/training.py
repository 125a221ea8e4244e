"""MSE regression training with Adam, and binary checkpoints."""

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_bytes
from .architectures import ARCHITECTURES, build_model
from .errors import (
    ArchitectureMismatchError,
    CorruptHeaderError,
    DimensionError,
    TrainingDivergedError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from .navigation import OracleModel
from .tensor import Tensor, mul, scale, sub, tensor_sum

__all__ = [
    "mse_loss",
    "AdamState",
    "adam_step",
    "Adam",
    "TrainConfig",
    "TrainResult",
    "train",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
    "checkpoint_scalar_count",
]

log = logging.getLogger(__name__)


def mse_loss(pred, target):
    """Mean of squared differences over all ``batch * m`` entries, shape ``[1]``."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(
            f"mse_loss: prediction {list(pred.shape)} vs target {list(target.shape)}"
        )
    diff = sub(pred, target)
    return scale(tensor_sum(mul(diff, diff)), 1.0 / diff.data.size)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update, in place on ``params[i].data``."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.data.shape:
            raise DimensionError(f"Adam moment {m.shape} does not match parameter {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.for_params(self.params)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state,
                  self.lr, self.betas, self.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 300
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    report_every: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    steps: int = 0

    def history_csv(self):
        return "epoch,loss\n" + "".join(f"{i + 1},{loss:.9g}\n" for i, loss in enumerate(self.history))


def _stack(windows):
    inputs = np.stack([w.input for w in windows])
    targets = np.stack([w.target for w in windows])
    return inputs, targets


def _canonical_order(windows):
    # training must not depend on the caller's window order
    return sorted(windows, key=lambda w: w.digest())


def train(model, windows, config=None, callback=None):
    """Fit ``model`` to window targets by mini-batch Adam on the MSE loss.

    Windows are put in a canonical order, then shuffled each epoch with a
    generator seeded from ``config.seed``; dropout masks use the same seed.
    Returns a :class:`TrainResult` with the per-epoch mean training loss; the
    model is left in inference mode.
    """
    config = TrainConfig() if config is None else config
    if not windows:
        raise ValueError("train() needs at least one window")
    if any(w.target is None for w in windows):
        raise ValueError("every training window needs a target")
    inputs, targets = _stack(_canonical_order(windows))
    if targets.shape[1] != model.m:
        raise DimensionError(f"targets have {targets.shape[1]} dims, model outputs {model.m}")

    shuffle_ss, dropout_ss = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropouts = model.dropout_layers()
    for layer, ss in zip(dropouts, dropout_ss.spawn(len(dropouts))):
        layer.rng = np.random.default_rng(ss)

    opt = Adam(model.parameters(), config.learning_rate, config.betas, config.eps)
    history = []
    n = len(inputs)
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            loss = mse_loss(model(inputs[idx]), targets[idx])
            value = loss.item()
            if not np.isfinite(value):
                model.eval()
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b + 1}")
            loss.backward()
            opt.step()
            model.step += 1
            total += value * len(idx)
        history.append(total / n)
        if config.report_every and epoch % config.report_every == 0:
            log.info("epoch %d loss %.6g", epoch, history[-1])
        if callback is not None and callback(epoch, history[-1]) is False:
            break
    model.eval()
    return TrainResult(model, history, opt.state.t)


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"IMUNETCK"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<8sII")  # magic, version, header byte length


def _directory(named):
    entries, offset = [], 0
    for name, value in named:
        arr = value.data if isinstance(value, Tensor) else value
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    return entries, offset


def checkpoint_bytes(model):
    """Serialize parameters and buffers.

    Layout: ``magic(8) | version u32 | header_len u32 | header JSON |``
    little-endian float64 parameter blob ``|`` float64 buffer blob.
    """
    params = model.named_parameters()
    buffers = model.named_buffers()
    p_dir, p_count = _directory(params)
    b_dir, b_count = _directory(buffers)
    header = {
        "model": model.name,
        "m": int(model.m),
        "step": int(model.step),
        "params": p_dir,
        "param_count": p_count,
        "buffers": b_dir,
        "buffer_count": b_count,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for _, p in params)
    blob += b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes() for _, b in buffers)
    return _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(head)) + head + blob


def save_checkpoint(model, path):
    atomic_write_bytes(path, checkpoint_bytes(model))


def _read_header(raw):
    if len(raw) < _PREFIX.size:
        raise CorruptHeaderError(f"file is {len(raw)} bytes, too short for a checkpoint header")
    magic, version, head_len = _PREFIX.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CorruptHeaderError(f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    end = _PREFIX.size + head_len
    if len(raw) < end:
        raise TruncatedCheckpointError("file ends inside the header")
    try:
        header = json.loads(raw[_PREFIX.size : end].decode("utf-8"))
        for key in ("model", "m", "step", "params", "param_count", "buffers", "buffer_count"):
            header[key]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CorruptHeaderError(f"unreadable header: {exc}") from None
    return header, end


def checkpoint_scalar_count(path):
    """Number of parameter scalars stored in a checkpoint file."""
    with open(path, "rb") as fh:
        header, _ = _read_header(fh.read())
    return int(header["param_count"])


def _fill(named, directory, blob, what):
    if [e["name"] for e in directory] != [n for n, _ in named]:
        raise ArchitectureMismatchError(f"{what} names in checkpoint do not match the architecture")
    for (name, target), entry in zip(named, directory):
        arr = target.data if isinstance(target, Tensor) else target
        if list(arr.shape) != entry["shape"]:
            raise ArchitectureMismatchError(
                f"{what} {name}: checkpoint shape {entry['shape']} vs model {list(arr.shape)}"
            )
        off = entry["offset"]
        arr[...] = blob[off : off + arr.size].reshape(arr.shape)


def load_checkpoint(path):
    """Rebuild the named architecture and restore parameters and buffers."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header, start = _read_header(raw)
    n_params, n_buffers = int(header["param_count"]), int(header["buffer_count"])
    need = start + 8 * (n_params + n_buffers)
    if len(raw) < need:
        raise TruncatedCheckpointError(f"expected {need} bytes, file has {len(raw)}")
    if len(raw) > need:
        raise CorruptHeaderError(f"{len(raw) - need} unexpected trailing bytes")
    blob = np.frombuffer(raw, dtype="<f8", count=n_params + n_buffers, offset=start)
    blob = blob.astype(np.float64)
    name = header["model"]
    if name == OracleModel.name:
        if n_params or n_buffers:
            raise ArchitectureMismatchError("oracle checkpoints carry no parameters")
        return OracleModel(int(header["m"]))
    if name not in ARCHITECTURES:
        raise ArchitectureMismatchError(f"unknown architecture {name!r} in checkpoint")
    try:
        model = build_model(name, int(header["m"]))
    except ValueError as exc:
        raise ArchitectureMismatchError(str(exc)) from None
    params = model.named_parameters()
    buffers = model.named_buffers()
    _fill(params, header["params"], blob[:n_params], "parameter")
    _fill(buffers, header["buffers"], blob[n_params:], "buffer")
    model.step = int(header["step"])
    model.eval()
    return model
