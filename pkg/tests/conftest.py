import numpy as np
import pytest

from imunet import _kernels
from imunet.tensor import Tensor, mul, no_grad, tensor_sum

FD_STEP = 1e-5

_CRITERIA = {}


def record_criterion(number, title, passed, detail=""):
    """Remember one acceptance line; printed now and again in the summary."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    _CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    previous = _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(previous)


def _rel_err(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def gradcheck_fn(fn, inputs, seed=0, h=FD_STEP):
    """Worst relative error of analytic vs central-difference gradients.

    ``fn`` maps tensors to a tensor; the scalar probed is ``<fn(...), R>`` for
    a fixed random ``R`` so every output entry contributes.
    """
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in inputs]
    out = fn(*tensors)
    R = rng.normal(size=out.shape)
    tensor_sum(mul(out, Tensor(R))).backward()

    def probe(arrays):
        with no_grad():
            return float(np.sum(fn(*[Tensor(a) for a in arrays]).data * R))

    worst = 0.0
    for i, a in enumerate(inputs):
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in inputs]
            minus = [x.copy() for x in inputs]
            plus[i][idx] += h
            minus[i][idx] -= h
            num[idx] = (probe(plus) - probe(minus)) / (2 * h)
        worst = max(worst, _rel_err(tensors[i].grad, num))
    return worst


def gradcheck_module(module, x, seed=0, h=FD_STEP, before_forward=None):
    """Like :func:`gradcheck_fn` over the input and every module parameter."""
    rng = np.random.default_rng(seed)

    def run(arr, grad):
        if before_forward is not None:
            before_forward()
        xt = Tensor(arr, requires_grad=grad)
        if grad:
            return module(xt), xt
        with no_grad():
            return module(xt), xt

    out, xt = run(x, True)
    R = rng.normal(size=out.shape)
    module.zero_grad()
    tensor_sum(mul(out, Tensor(R))).backward()

    def probe(arr):
        return float(np.sum(run(arr, False)[0].data * R))

    worst = 0.0
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num[idx] = (probe(xp) - probe(xm)) / (2 * h)
    worst = max(worst, _rel_err(xt.grad, num))
    for _, p in module.named_parameters():
        analytic = p.grad.copy()
        num = np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp = probe(x)
            p.data[idx] = orig - h
            fm = probe(x)
            p.data[idx] = orig
            num[idx] = (fp - fm) / (2 * h)
        worst = max(worst, _rel_err(analytic, num))
    return worst
