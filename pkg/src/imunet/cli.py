"""``imunet`` command line: synth, train, eval, flops.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set ``IMUNET_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) for verbosity.
"""

import argparse
import json
import logging
import os
import sys
import time


from . import __version__
from ._io import atomic_write_text
from .architectures import ARCHITECTURES, build_model, count_costs
from .data import NOISE_PRESETS, PROFILES, make_windows, noise_preset, read_dataset, synth_generate, write_dataset
from .errors import (
    ArchitectureMismatchError,
    CheckpointError,
    ConfigurationError,
    ImunetError,
)
from .navigation import (
    OracleModel,
    ate,
    ground_truth_trajectory,
    predict_trajectory,
    rte,
    write_trajectory,
)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("imunet")


def _write_manifest(path, args, artifacts, started):
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": args.command,
        "flags": flags,
        "seed": flags.get("seed"),
        "artifacts": sorted(os.path.relpath(a, os.path.dirname(os.path.abspath(path)))
                            for a in artifacts),
        "wall_clock_s": round(time.monotonic() - started, 3),
        "version": __version__,
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_params(pairs):
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigurationError(f"--param expects KEY=VALUE, got {pair!r}")
        out[key.replace("-", "_")] = float(value)
    return out


def _data_dirs(spec):
    dirs = [d for d in spec.split(",") if d]
    for d in dirs:
        if not os.path.isdir(d):
            raise ConfigurationError(f"data directory not found: {d}")
    if not dirs:
        raise ConfigurationError("no data directory given")
    return dirs


def cmd_synth(args):
    started = time.monotonic()
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise ConfigurationError(f"output directory {args.out} is not empty (use --force)")
    overrides = {
        k: getattr(args, k)
        for k in ("gyro_noise_std", "accel_noise_std", "bias_random_walk_std")
        if getattr(args, k) is not None
    }
    noise = noise_preset(args.noise_preset, **overrides)
    seq = synth_generate(args.profile, args.duration, args.rate, noise, args.seed, m=args.m,
                         **_parse_params(args.param))
    paths = write_dataset(seq, args.out)
    _write_manifest(os.path.join(args.out, "manifest.json"), args, paths, started)
    log.info("wrote %d samples to %s", len(seq), args.out)
    return 0


def cmd_train(args):
    started = time.monotonic()
    dirs = _data_dirs(args.data)
    seqs = [read_dataset(d, require_gt=True) for d in dirs]
    for seq in seqs:
        if seq.m != args.m:
            raise ConfigurationError(
                f"{seq.name}: ground truth has {seq.m} dimensions but --m is {args.m}"
            )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    stem = os.path.splitext(os.path.basename(args.out))[0]
    loss_path = os.path.join(out_dir, stem + "_loss.csv")
    if args.arch == "oracle":
        model, history = OracleModel(args.m), []
    else:
        windows = []
        for seq in seqs:
            windows.extend(make_windows(seq, args.window, args.stride))
        model = build_model(args.arch, args.m, seed=args.seed)
        if args.dropout is not None:
            for layer in model.dropout_layers():
                layer.p = args.dropout
        config = TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
                             seed=args.seed)
        history = train(model, windows, config).history
        if history:
            print(f"final loss {history[-1]:.6g} after {model.step} steps")
    save_checkpoint(model, args.out)
    atomic_write_text(loss_path, "epoch,loss\n" + "".join(
        f"{i + 1},{loss:.9g}\n" for i, loss in enumerate(history)))
    _write_manifest(os.path.join(out_dir, stem + ".manifest.json"), args,
                    [args.out, loss_path], started)
    return 0


def cmd_eval(args):
    started = time.monotonic()
    dirs = _data_dirs(args.data)
    model = load_checkpoint(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    rows, artifacts = [], []
    for d in dirs:
        seq = read_dataset(d, require_gt=True)
        if seq.m != model.m:
            raise ConfigurationError(
                f"{seq.name}: ground truth has {seq.m} dimensions, checkpoint predicts {model.m}"
            )
        est = predict_trajectory(model, seq, stride=args.stride, window=args.window)
        gt = ground_truth_trajectory(seq, window=args.window, stride=args.stride)
        seq_dir = os.path.join(args.out, seq.name)
        os.makedirs(seq_dir, exist_ok=True)
        write_trajectory(est, os.path.join(seq_dir, "traj.csv"))
        write_trajectory(gt, os.path.join(seq_dir, "gt.csv"))
        artifacts += [os.path.join(seq_dir, "traj.csv"), os.path.join(seq_dir, "gt.csv")]
        rows.append((seq.name, ate(est, gt), rte(est, gt, args.rte_interval)))
    text = "sequence,ate,rte\n" + "".join(f"{n},{a:.9g},{r:.9g}\n" for n, a, r in rows)
    metrics = os.path.join(args.out, "metrics.csv")
    atomic_write_text(metrics, text)
    sys.stdout.write(text)
    _write_manifest(os.path.join(args.out, "manifest.json"), args, artifacts + [metrics], started)
    return 0


def cmd_flops(args):
    started = time.monotonic()
    names = list(ARCHITECTURES) if args.arch == "all" else [args.arch]
    reports = {n: count_costs(build_model(n, args.m)) for n in names}
    chunks = []
    for rep in reports.values():
        chunks.append(rep.to_csv() if args.format == "csv" else rep.to_text())
    if "imunet" in reports and "resnet18" in reports:
        ratio = reports["imunet"].total_params / reports["resnet18"].total_params
        flop_ratio = reports["imunet"].total_flops / reports["resnet18"].total_flops
        chunks.append(f"imunet/resnet18 params ratio: {ratio:.4f}\n"
                      f"imunet/resnet18 flops ratio: {flop_ratio:.4f}")
    text = "\n\n".join(c.rstrip("\n") for c in chunks) + "\n"
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        paths = []
        for name, rep in reports.items():
            path = os.path.join(args.out, f"{name}_costs.csv")
            atomic_write_text(path, rep.to_csv())
            paths.append(path)
        _write_manifest(os.path.join(args.out, "manifest.json"), args, paths, started)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="imunet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--profile", required=True, choices=sorted(PROFILES))
    p.add_argument("--duration", type=float, default=300.0, help="seconds")
    p.add_argument("--rate", type=float, default=200.0, help="Hz")
    p.add_argument("--noise-preset", default="none", choices=sorted(NOISE_PRESETS))
    p.add_argument("--gyro-noise-std", type=float)
    p.add_argument("--accel-noise-std", type=float)
    p.add_argument("--bias-random-walk-std", type=float)
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="profile parameter, e.g. radius=5 (repeatable)")
    p.add_argument("--m", type=int, default=2, choices=(2, 3))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on dataset directories")
    p.add_argument("--arch", required=True, choices=sorted(ARCHITECTURES) + ["oracle"])
    p.add_argument("--data", required=True, help="DIR[,DIR...]")
    p.add_argument("--m", type=int, default=2, choices=(2, 3))
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--window", type=int, default=200)
    p.add_argument("--dropout", type=float, help="override the head dropout probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="predict trajectories and score ATE/RTE")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="DIR[,DIR...]")
    p.add_argument("--stride", type=int, default=200)
    p.add_argument("--window", type=int, default=200)
    p.add_argument("--rte-interval", type=float, default=60.0, help="seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="print parameter and FLOP counts")
    p.add_argument("--arch", default="all", choices=sorted(ARCHITECTURES) + ["all"])
    p.add_argument("--m", type=int, default=2, choices=(2, 3))
    p.add_argument("--format", default="text", choices=("text", "csv"))
    p.add_argument("--out", help="also write <arch>_costs.csv files here")
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("IMUNET_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        parser.print_usage(sys.stderr)
        print(f"imunet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ArchitectureMismatchError as exc:
        print(f"imunet {args.command}: architecture mismatch: {exc}", file=sys.stderr)
        return 1
    except CheckpointError as exc:
        print(f"imunet {args.command}: checkpoint error ({type(exc).__name__}): {exc}",
              file=sys.stderr)
        return 1
    except (ImunetError, OSError, ValueError) as exc:
        print(f"imunet {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
