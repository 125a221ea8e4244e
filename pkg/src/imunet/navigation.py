"""Velocity/acceleration integration, trajectory prediction and ATE/RTE."""

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._io import atomic_write_text, format_rows
from .data import window_arrays, window_spans
from .errors import ConfigurationError, ValidationError

__all__ = [
    "Trajectory",
    "VelocitySeries",
    "integrate_velocity",
    "integrate_acceleration",
    "OracleModel",
    "trajectory_knots",
    "predict_trajectory",
    "ground_truth_trajectory",
    "double_integration_baseline",
    "ate",
    "rte",
    "write_trajectory",
    "read_trajectory",
]


def _check_increasing(t, what):
    bad = np.nonzero(np.diff(t) <= 0)[0]
    if bad.size:
        raise ValidationError(f"{what} timestamps not strictly increasing at index {bad[0] + 1}")


@dataclass
class Trajectory:
    timestamps: np.ndarray
    positions: np.ndarray  # [N, m]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        if len(self.timestamps) != len(self.positions):
            raise ValidationError(
                f"{len(self.timestamps)} timestamps but {len(self.positions)} positions"
            )
        _check_increasing(self.timestamps, "trajectory")
        if not np.all(np.isfinite(self.positions)):
            raise ValidationError("trajectory contains non-finite positions")

    def __len__(self):
        return len(self.timestamps)


@dataclass
class VelocitySeries:
    timestamps: np.ndarray
    velocities: np.ndarray  # [N, m]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.velocities.ndim == 1:
            self.velocities = self.velocities[:, None]
        if len(self.timestamps) != len(self.velocities):
            raise ValidationError(
                f"{len(self.timestamps)} timestamps but {len(self.velocities)} velocities"
            )


def _left_riemann(t, rate, x0):
    """``x[k+1] = x[k] + rate[k] * (t[k+1] - t[k])``, summed from ``x0``.

    The running sum is error-compensated so long sequences do not accumulate
    rounding drift.
    """
    if len(t) < 2:
        raise ValidationError("integration needs at least 2 samples")
    _check_increasing(t, "integration")
    inc = rate[:-1] * np.diff(t)[:, None]
    return _kernels.compensated_cumsum(np.asarray(x0, dtype=np.float64), inc)


def integrate_velocity(v, p0=None):
    """Left-Riemann position integration; ``P[0] = p0``."""
    p0 = np.zeros(v.velocities.shape[1]) if p0 is None else np.asarray(p0, dtype=np.float64)
    return Trajectory(v.timestamps, _left_riemann(v.timestamps, v.velocities, p0))


def integrate_acceleration(timestamps, accel, v0=None, p0=None):
    """Classical double integration: acceleration -> velocity -> position."""
    t = np.asarray(timestamps, dtype=np.float64)
    a = np.asarray(accel, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    dim = a.shape[1]
    v0 = np.zeros(dim) if v0 is None else v0
    p0 = np.zeros(dim) if p0 is None else p0
    vel = _left_riemann(t, a, v0)
    return integrate_velocity(VelocitySeries(t, vel), p0)


class OracleModel:
    """Plug-in model that answers with each window's ground-truth target.

    Used to verify the windowing/integration bookkeeping independently of any
    learned network.
    """

    name = "oracle"
    needs_targets = True

    def __init__(self, m=2):
        self.m = m
        self.step = 0

    def predict_targets(self, inputs, targets):
        if targets is None:
            raise ConfigurationError("the oracle model needs ground-truth positions")
        return np.asarray(targets, dtype=np.float64)

    def named_parameters(self):
        return []

    def named_buffers(self):
        return []


def trajectory_knots(N, window=200, stride=200):
    """Sample indices at which a predicted trajectory is defined.

    One knot per window start plus the end of the last window's span.
    """
    starts, ends = window_spans(N, window, stride)
    return np.append(starts, ends[-1])


def predict_trajectory(model, seq, stride=200, window=200, p0=None, batch_size=256):
    """Integrate per-window velocity predictions into a trajectory.

    Each window's prediction is held constant from its start knot to the next
    knot (left Riemann at the stride period); the final window is integrated
    over its own span. The start position is the ground truth when the
    sequence has it, otherwise the origin.
    """
    has_gt = seq.gt_position is not None
    needs_targets = getattr(model, "needs_targets", False)
    inputs, targets, _, _ = window_arrays(seq, window, stride, with_targets=has_gt)
    if needs_targets:
        vel = model.predict_targets(inputs, targets)
    else:
        vel = model.predict(inputs, batch_size=batch_size)
    if vel.shape[1] != model.m:
        raise ConfigurationError(f"model returned {vel.shape[1]} dims, expected {model.m}")
    knots = trajectory_knots(len(seq), window, stride)
    t = seq.timestamps[knots]
    if p0 is None:
        p0 = seq.gt_position[0, : model.m] if has_gt else np.zeros(model.m)
    vel = np.vstack([vel, vel[-1:]])
    return integrate_velocity(VelocitySeries(t, vel), p0)


def ground_truth_trajectory(seq, window=200, stride=200):
    """Ground truth sampled at the same knots as :func:`predict_trajectory`."""
    if seq.gt_position is None:
        raise ConfigurationError(f"sequence {seq.name!r} has no ground truth")
    knots = trajectory_knots(len(seq), window, stride)
    return Trajectory(seq.timestamps[knots], seq.gt_position[knots])


def double_integration_baseline(seq, v0=None):
    """Integrate globally rotated accelerometer data from the true initial state.

    The initial velocity defaults to the ground-truth finite difference over
    the first sample interval.
    """
    if seq.gt_position is None:
        raise ConfigurationError(f"sequence {seq.name!r} has no ground truth")
    m = seq.gt_position.shape[1]
    _, acc = seq.global_imu()
    t = seq.timestamps
    if v0 is None:
        v0 = (seq.gt_position[1] - seq.gt_position[0]) / (t[1] - t[0])
    return integrate_acceleration(t, acc[:, :m], v0, seq.gt_position[0])


def _aligned(est, gt):
    lo = max(est.timestamps[0], gt.timestamps[0])
    hi = min(est.timestamps[-1], gt.timestamps[-1])
    sel = (gt.timestamps >= lo) & (gt.timestamps <= hi)
    if not np.any(sel):
        raise ValidationError("estimate and ground truth do not overlap in time")
    if est.positions.shape[1] != gt.positions.shape[1]:
        raise ValidationError(
            f"dimension mismatch: estimate {est.positions.shape[1]} vs truth {gt.positions.shape[1]}"
        )
    t = gt.timestamps[sel]
    e = np.column_stack(
        [np.interp(t, est.timestamps, est.positions[:, j]) for j in range(est.positions.shape[1])]
    )
    return t, e, gt.positions[sel]


# absorbs rounding of interval boundaries that land on a sample time
_BOUNDARY_TOL = 1e-9


def _rms(d):
    return float(np.sqrt(np.mean(np.sum(d**2, axis=1))))


def ate(est, gt):
    """Absolute trajectory error: RMSE of position error at ground-truth times.

    The estimate is linearly interpolated onto the ground-truth timestamps
    inside the shared time range. No alignment transform is applied.
    """
    _, e, g = _aligned(est, gt)
    return _rms(e - g)


def rte(est, gt, interval_s=60.0):
    """Relative trajectory error: mean of re-anchored ATE over fixed intervals.

    The overlap is cut into consecutive half-open intervals of
    ``interval_s`` seconds; trailing partial intervals are dropped. Inside
    each interval the estimate is translated so its first point coincides
    with the ground truth. Sequences shorter than one interval are scored
    over their full span and scaled by ``interval_s / duration``.
    """
    t, e, g = _aligned(est, gt)
    d = e - g
    duration = t[-1] - t[0]
    if duration < interval_s:
        if duration <= 0:
            return 0.0
        return _rms(d - d[0]) * interval_s / duration
    n_full = int(np.floor(duration / interval_s + 1e-9))
    errors = []
    for j in range(n_full):
        a = t[0] + j * interval_s - _BOUNDARY_TOL
        sel = (t >= a) & (t < a + interval_s)
        if not np.any(sel):
            continue
        dj = d[sel]
        # re-anchoring the estimate at the interval start shifts d by d[0]
        errors.append(_rms(dj - dj[0]))
    return float(np.mean(errors))


def write_trajectory(traj, path):
    cols = ["px", "py", "pz"][: traj.positions.shape[1]]
    atomic_write_text(
        path, format_rows("t," + ",".join(cols), [traj.timestamps, *traj.positions.T])
    )


def read_trajectory(path):
    if not os.path.exists(path):
        raise ConfigurationError(f"trajectory file not found: {path}")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(arr[:, 0], arr[:, 1:])
