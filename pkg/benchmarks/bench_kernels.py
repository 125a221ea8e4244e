"""Compare the numba and pure-numpy kernel backends.

Times each hot kernel on IMUNet-sized inputs, then one full training step
of IMUNet and ResNet18-1D, under both backends in the same process.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 64]
"""

import argparse
import time

import numpy as np

from imunet import _kernels
from imunet.architectures import build_model
from imunet.tensor import Tensor
from imunet.training import Adam, mse_loss


def _best_of(fn, repeat):
    fn()  # warm-up, triggers JIT compilation
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(batch, rng):
    xp = rng.normal(size=(batch, 64, 202))
    dw = rng.normal(size=(64, 3))
    dout = rng.normal(size=(batch, 64, 100))
    cols = _kernels.unfold(xp, 3, 2, 100)
    act = rng.normal(size=(batch, 128, 50))
    mu, inv = act.mean(axis=(0, 2)), 1.0 / act.std(axis=(0, 2))
    gamma, beta = rng.normal(size=128), rng.normal(size=128)
    xhat, y = _kernels.bn_forward(act, mu, inv, gamma, beta)
    pooled, idx = _kernels.maxpool_forward(xp, 3, 2, 100)
    inc = rng.normal(size=(60_000, 2)) * 0.005
    return {
        "unfold": lambda: _kernels.unfold(xp, 3, 2, 100),
        "fold": lambda: _kernels.fold(cols, 202, 2),
        "depthwise fwd": lambda: _kernels.depthwise_forward(xp, dw, 2, 100),
        "depthwise bwd": lambda: _kernels.depthwise_backward(xp, dw, dout, 2),
        "maxpool fwd": lambda: _kernels.maxpool_forward(xp, 3, 2, 100),
        "maxpool bwd": lambda: _kernels.maxpool_backward(pooled, idx, 202),
        "elu fwd": lambda: _kernels.elu_forward(act),
        "elu bwd": lambda: _kernels.elu_backward(act, act, y),
        "batchnorm fwd": lambda: _kernels.bn_forward(act, mu, inv, gamma, beta),
        "batchnorm bwd": lambda: _kernels.bn_backward(act, xhat, gamma, inv),
        "compensated cumsum": lambda: _kernels.compensated_cumsum(np.zeros(2), inc),
    }


def train_step_case(name, batch, rng):
    model = build_model(name, 2, seed=0)
    opt = Adam(model.parameters(), lr=1e-4)
    x = Tensor(rng.normal(size=(batch, 6, 200)))
    y = rng.normal(size=(batch, 2))

    def step():
        opt.zero_grad()
        mse_loss(model(x), y).backward()
        opt.step()

    return step


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--batch", type=int, default=64)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    cases = kernel_cases(args.batch, rng)
    for arch in ("imunet", "resnet18"):
        cases[f"train step {arch}"] = train_step_case(arch, args.batch, rng)

    previous = _kernels.get_backend()
    timings = {}
    try:
        for backend in ("numba", "numpy"):
            _kernels.set_backend(backend)
            for label, fn in cases.items():
                timings[label, backend] = _best_of(fn, args.repeat)
    finally:
        _kernels.set_backend(previous)

    print(f"batch {args.batch}, best of {args.repeat}")
    print(f"{'case':<22}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for label in cases:
        nb, npy = timings[label, "numba"], timings[label, "numpy"]
        print(f"{label:<22}{nb * 1e3:>12.3f}{npy * 1e3:>12.3f}{npy / nb:>9.2f}x")


if __name__ == "__main__":
    main()
