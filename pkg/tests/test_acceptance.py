"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
happen; they are also repeated in the terminal summary.
"""

import filecmp
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import record_criterion
from gradcases import (
    LAYER_CASES,
    run_bn_inference_gradcheck,
    run_dropout_gradcheck,
    run_layer_gradcheck,
)
from oracles import naive_conv1d, overfit_windows, random_conv_configs
from imunet import ops
from imunet.architectures import ARCHITECTURES, build_imunet, build_model, count_costs
from imunet.data import make_windows, noise_preset, synth_generate
from imunet.navigation import (
    OracleModel,
    Trajectory,
    VelocitySeries,
    ate,
    double_integration_baseline,
    ground_truth_trajectory,
    integrate_acceleration,
    integrate_velocity,
    predict_trajectory,
    rte,
)
from imunet.tensor import Tensor, no_grad
from imunet.training import TrainConfig, checkpoint_scalar_count, save_checkpoint, train

GRAD_TOL = 1e-6
SEEDS = range(5)


def test_criterion_01_gradient_suite():
    start = time.monotonic()
    worst, where = 0.0, ""
    for name in sorted(LAYER_CASES):
        for seed in SEEDS:
            err = run_layer_gradcheck(name, seed)
            if err > worst:
                worst, where = err, f"{name}/seed{seed}"
    for seed in SEEDS:
        for name, err in (("batchnorm_eval", run_bn_inference_gradcheck(seed)),
                          ("dropout", run_dropout_gradcheck(seed))):
            if err > worst:
                worst, where = err, f"{name}/seed{seed}"
    elapsed = time.monotonic() - start
    ok = worst < GRAD_TOL and elapsed < 60
    record_criterion(1, "gradient suite", ok,
                     f"{len(LAYER_CASES) + 2} cases x {len(SEEDS)} seeds, worst rel err "
                     f"{worst:.2e} at {where}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_convolution_oracle():
    worst = 0.0
    configs = random_conv_configs(100, seed=2024)
    for x, w, b, s, p, g in configs:
        got = ops.conv1d(Tensor(x), Tensor(w), None if b is None else Tensor(b), s, p, g).data
        worst = max(worst, float(np.max(np.abs(got - naive_conv1d(x, w, b, s, p, g)))))
    kinds = {"dense": 0, "grouped": 0, "depthwise": 0}
    for x, w, _, _, _, g in configs:
        C = x.shape[1]
        kinds["depthwise" if g == C == w.shape[0] and g > 1 else "grouped" if g > 1 else "dense"] += 1
    ok = worst < 1e-10 and len(configs) == 100
    record_criterion(2, "conv1d vs direct loops", ok, f"100 configs {kinds}, max |d| {worst:.1e}")
    assert ok


def test_criterion_03_architecture_shapes(tmp_path):
    problems = []
    for name in sorted(ARCHITECTURES):
        for m in (2, 3):
            model = build_model(name, m).eval()
            for batch in (1, 7):
                with no_grad():
                    out = model(Tensor(np.ones((batch, 6, 200)))).shape
                if out != (batch, m):
                    problems.append(f"{name} m={m} b={batch} -> {out}")
            path = tmp_path / f"{name}{m}.ckpt"
            save_checkpoint(model, path)
            if checkpoint_scalar_count(path) != count_costs(model).total_params:
                problems.append(f"{name} m={m} scalar count")
    ok = not problems
    record_criterion(3, "architecture shapes and checkpoint counts", ok,
                     "; ".join(problems) or "3 archs x m{2,3} x batch{1,7}")
    assert ok


def test_criterion_04_efficiency_anchor():
    imu = count_costs(build_model("imunet", 2))
    res = count_costs(build_model("resnet18", 2))
    ratio = imu.total_params / res.total_params
    ok = 0.25 <= ratio <= 0.45 and imu.total_flops < res.total_flops
    record_criterion(4, "IMUNet/ResNet18 efficiency", ok,
                     f"params {imu.total_params}/{res.total_params} = {ratio:.4f}, "
                     f"flops {imu.total_flops} < {res.total_flops}")
    assert ok


def test_criterion_05_integration_closed_forms():
    t = np.arange(201) / 200.0
    const = integrate_velocity(VelocitySeries(t, np.tile([1.0, 0.0], (201, 1)))).positions[-1]
    ramp = integrate_velocity(VelocitySeries(t, t)).positions[-1, 0]
    acc = integrate_acceleration(t, np.tile([2.0, 0.0], (201, 1))).positions[-1, 0]
    # discrete double sum: P_n = sum_k V_k dt, V_k = k * a * dt
    double_sum = sum(sum(2.0 * 0.005 for _ in range(k)) * 0.005 for k in range(200))
    ok = const.tolist() == [1.0, 0.0] and ramp == 0.4975 and abs(acc - double_sum) < 1e-12
    record_criterion(5, "integration closed forms", ok,
                     f"P(1)={const.tolist()}, ramp={ramp!r}, |double-sum d|={abs(acc - double_sum):.1e}")
    assert ok


def test_criterion_06_metric_oracles():
    rng = np.random.default_rng(6)
    t = np.arange(0, 240.0 + 1e-9, 0.5)
    g = np.cumsum(rng.normal(size=(len(t), 2)), axis=0)
    gt = Trajectory(t, g)
    offset = ate(Trajectory(t, g + [3.0, 4.0]), gt)
    anchored = rte(Trajectory(t, g + [3.0, 4.0]), gt)
    e = g + rng.normal(scale=0.5, size=g.shape)
    direct_ate = np.sqrt(np.mean([(e[i] - g[i]) @ (e[i] - g[i]) for i in range(len(t))]))
    per_interval = []
    for j in range(4):
        idx = [i for i in range(len(t)) if 60 * j <= t[i] < 60 * (j + 1)]
        d = [(e[i] - e[idx[0]]) - (g[i] - g[idx[0]]) for i in idx]
        per_interval.append(np.sqrt(np.mean([x @ x for x in d])))
    d_ate = abs(ate(Trajectory(t, e), gt) - direct_ate)
    d_rte = abs(rte(Trajectory(t, e), gt) - np.mean(per_interval))
    ok = offset == 5.0 and anchored < 1e-12 and d_ate < 1e-12 and d_rte < 1e-12
    record_criterion(6, "ATE/RTE oracles", ok,
                     f"ATE(3,4)={offset!r}, RTE(offset)={anchored:.1e}, "
                     f"|dATE|={d_ate:.1e}, |dRTE|={d_rte:.1e}")
    assert ok


def test_criterion_07_pipeline_closure():
    start = time.monotonic()
    seq = synth_generate("figure8", duration_s=300, seed=7)
    est = predict_trajectory(OracleModel(2), seq, stride=200)
    err = ate(est, ground_truth_trajectory(seq, stride=200))
    elapsed = time.monotonic() - start
    ok = err < 1e-6 and elapsed < 60
    record_criterion(7, "oracle model pipeline closure", ok,
                     f"ATE {err:.2e} m over 300 s, {elapsed:.1f}s")
    assert ok


# -- learning -----------------------------------------------------------------


def overfit_run(max_steps=2000, target=1e-3, seed=0):
    model = build_imunet(2, seed=seed, dropout=0.0)
    windows = overfit_windows()
    cfg = TrainConfig(learning_rate=1e-4, batch_size=len(windows), epochs=max_steps, seed=seed)
    result = train(model, windows, cfg, callback=lambda epoch, loss: loss >= target)
    return result


def test_criterion_08_learning_smoke():
    start = time.monotonic()
    result = overfit_run()
    elapsed = time.monotonic() - start
    h = np.array(result.history)
    reached = h[-1] < 1e-3 and result.steps <= 2000
    ups = [i + 1 for i in range(3, len(h)) if h[i] > h[i - 1]]
    monotone = not ups
    ok = reached and monotone and elapsed < 600
    detail = (f"final MSE {h[-1]:.2e} after {result.steps} steps, {elapsed:.0f}s; "
              f"epoch-mean increases after epoch 3 at {ups or 'none'}")
    record_criterion(8, "IMUNet overfit smoke test", ok, detail)
    assert reached, detail
    assert monotone, detail


TRAIN_SEQUENCES = (
    ("circle", {"radius": 5.0, "omega": 0.2}),
    ("circle", {"radius": 3.0, "omega": -0.3}),
    ("circle", {"radius": 8.0, "omega": 0.15}),
    ("figure8", {"scale": 10.0, "omega": 0.15}),
    ("figure8", {"scale": 8.0, "omega": 0.2}),
    ("random-walk", {}),
    ("random-walk", {"speed": 1.5}),
    ("random-walk", {"speed": 0.7}),
    ("random-walk", {}),
    ("line", {"speed": 1.0, "heading": 0.5}),
)
TEST_SEQUENCES = (
    ("circle", {"radius": 4.0, "omega": 0.25}),
    ("figure8", {"scale": 9.0, "omega": 0.18}),
    ("random-walk", {}),
)


def desk_sequences(spec, first_seed):
    noise = noise_preset("consumer")
    return [synth_generate(profile, duration_s=300, noise=noise, seed=first_seed + i, **params)
            for i, (profile, params) in enumerate(spec)]


def desk_experiment():
    train_seqs = desk_sequences(TRAIN_SEQUENCES, 100)
    test_seqs = desk_sequences(TEST_SEQUENCES, 200)
    windows = [w for s in train_seqs for w in make_windows(s, 200, 200)]
    cfg = TrainConfig(learning_rate=1e-4, batch_size=128, epochs=20, seed=0)
    rows = []
    for name in ("imunet", "resnet18"):
        t0 = time.monotonic()
        model = train(build_model(name, 2, seed=0), windows, cfg).model
        fit_s = time.monotonic() - t0
        for seq in test_seqs:
            gt = ground_truth_trajectory(seq, stride=200)
            est = predict_trajectory(model, seq, stride=200)
            base = double_integration_baseline(seq)
            rows.append({
                "model": name, "sequence": seq.name, "fit_s": fit_s,
                "ate": ate(est, gt), "rte": rte(est, gt), "baseline_ate": ate(base, gt),
            })
    return len(windows), rows


@pytest.mark.slow
def test_criterion_09_desk_experiment():
    start = time.monotonic()
    n_windows, rows = desk_experiment()
    elapsed = time.monotonic() - start
    for r in rows:
        print(f"  {r['model']:<9} {r['sequence']:<15} ATE {r['ate']:8.3f} m  RTE {r['rte']:8.3f} m"
              f"  double-integration ATE {r['baseline_ate']:10.1f} m"
              f"  gain {r['baseline_ate'] / r['ate']:7.1f}x")
    # a model's held-out ATE is the mean over the held-out sequences
    gains = {}
    for name in ("imunet", "resnet18"):
        mine = [r for r in rows if r["model"] == name]
        gains[name] = np.mean([r["baseline_ate"] for r in mine]) / np.mean([r["ate"] for r in mine])
    worst_seq = min(r["baseline_ate"] / r["ate"] for r in rows)
    ok = min(gains.values()) >= 5.0 and elapsed < 1800
    record_criterion(9, "learned models beat double integration", ok,
                     f"{n_windows} training windows, held-out gain imunet {gains['imunet']:.1f}x "
                     f"resnet18 {gains['resnet18']:.1f}x (worst single sequence {worst_seq:.1f}x), "
                     f"{elapsed / 60:.1f} min")
    assert ok


# -- determinism --------------------------------------------------------------


def _cli(*args):
    subprocess.run([sys.executable, "-m", "imunet.cli", *map(str, args)], check=True,
                   capture_output=True, text=True)


def _cli_round(root):
    d1, d2 = root / "data1", root / "data2"
    _cli("synth", "--profile", "random-walk", "--duration", "8", "--noise-preset", "consumer",
         "--seed", "4", "--out", d1)
    _cli("synth", "--profile", "circle", "--duration", "8", "--noise-preset", "consumer",
         "--seed", "5", "--m", "3", "--out", d2)
    _cli("train", "--arch", "imunet", "--data", d1, "--epochs", "2", "--stride", "100",
         "--batch", "6", "--seed", "1", "--out", root / "imunet.ckpt")
    _cli("train", "--arch", "mobilenet", "--m", "3", "--data", d2, "--epochs", "1", "--stride", "200",
         "--batch", "4", "--out", root / "mobilenet.ckpt")
    _cli("train", "--arch", "oracle", "--data", d1, "--out", root / "oracle.ckpt")
    _cli("eval", "--ckpt", root / "imunet.ckpt", "--data", d1, "--out", root / "eval")
    _cli("eval", "--ckpt", root / "oracle.ckpt", "--data", d1, "--out", root / "eval_oracle")
    _cli("flops", "--arch", "all", "--format", "csv", "--out", root / "flops")


def _artifacts(root):
    out = []
    for dirpath, _, files in os.walk(root):
        for f in files:
            out.append(os.path.relpath(os.path.join(dirpath, f), root))
    return sorted(out)


def test_criterion_10_cli_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for root in (a, b):
        root.mkdir()
        _cli_round(root)
    names = _artifacts(a)
    differ = []
    for rel in names:
        if rel.endswith("manifest.json"):
            ma, mb = (json.loads((r / rel).read_text()) for r in (a, b))
            for m in (ma, mb):
                m.pop("wall_clock_s")
                m["flags"] = {k: v for k, v in m["flags"].items()
                              if k not in ("out", "data", "ckpt")}
            if ma != mb:
                differ.append(rel)
        elif not filecmp.cmp(a / rel, b / rel, shallow=False):
            differ.append(rel)
    compared = [n for n in names if not n.endswith("manifest.json")]
    ok = names == _artifacts(b) and not differ
    record_criterion(10, "CLI reruns are byte-identical", ok,
                     f"{len(compared)} CSV/checkpoint files compared; differing: {differ or 'none'}")
    assert ok
