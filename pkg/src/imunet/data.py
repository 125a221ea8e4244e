"""IMU sequences: quaternion frame rotation, resampling, windowing, CSV I/O
and an analytic synthetic-trajectory generator.

Quaternions are ``(w, x, y, z)`` and rotate body-frame vectors into the
global frame. Windows hold 200 consecutive samples of globally rotated
gyroscope (rows 0-2) and accelerometer (rows 3-5) data; the regression
target is the mean ground-truth velocity over the window's time span.
"""

import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._io import atomic_write_text, format_rows
from .errors import ConfigurationError, ContractError, ValidationError

__all__ = [
    "QUAT_TOL",
    "quat_multiply",
    "quat_conjugate",
    "quat_normalize",
    "quat_rotate",
    "quat_from_yaw",
    "ImuSequence",
    "Window",
    "NoiseSpec",
    "NOISE_PRESETS",
    "noise_preset",
    "resample_linear",
    "window_spans",
    "window_arrays",
    "make_windows",
    "PROFILES",
    "synth_generate",
    "SyntheticTruth",
    "write_dataset",
    "read_dataset",
]

QUAT_TOL = 1e-6


# -- quaternions -------------------------------------------------------------


def quat_multiply(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_rotate(q, v):
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``: ``q * (0, v) * q^-1``.

    Broadcasts over leading dimensions. Raises :class:`ContractError` if any
    quaternion norm deviates from 1 by more than ``QUAT_TOL``.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(norms - 1.0) > QUAT_TOL):
        raise ContractError(
            f"quaternion norm deviates from 1 by {np.max(np.abs(norms - 1.0)):.3g}"
        )
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_yaw(theta):
    theta = np.asarray(theta, dtype=np.float64)
    z = np.zeros_like(theta)
    return np.stack([np.cos(theta / 2), z, z, np.sin(theta / 2)], axis=-1)


# -- containers ---------------------------------------------------------------


def _first_non_increasing(t):
    bad = np.nonzero(np.diff(t) <= 0)[0]
    return int(bad[0]) + 1 if bad.size else None


@dataclass
class ImuSequence:
    """Time-stamped body-frame IMU streams with orientation and optional truth.

    Attributes
    ----------
    timestamps : ndarray [N]
        Seconds, strictly increasing.
    gyro, accel : ndarray [N, 3]
        Body-frame angular rate (rad/s) and acceleration (m/s^2).
    orientation : ndarray [N, 4]
        Unit quaternions ``(w, x, y, z)``, body to global.
    gt_position : ndarray [N, m] or None
        Ground-truth global position in meters.
    """

    timestamps: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    orientation: np.ndarray
    gt_position: np.ndarray = None
    sample_rate_hz: float = 200.0
    name: str = "sequence"

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.gyro = np.asarray(self.gyro, dtype=np.float64)
        self.accel = np.asarray(self.accel, dtype=np.float64)
        self.orientation = np.asarray(self.orientation, dtype=np.float64)
        if self.gt_position is not None:
            self.gt_position = np.asarray(self.gt_position, dtype=np.float64)
        self.validate()

    def __len__(self):
        return len(self.timestamps)

    @property
    def m(self):
        return None if self.gt_position is None else self.gt_position.shape[1]

    @property
    def duration(self):
        return float(self.timestamps[-1] - self.timestamps[0])

    def validate(self):
        N = len(self.timestamps)
        if N < 2:
            raise ValidationError(f"sequence needs at least 2 samples, got {N}")
        shapes = {"gyro": (N, 3), "accel": (N, 3), "orientation": (N, 4)}
        for attr, shape in shapes.items():
            if getattr(self, attr).shape != shape:
                raise ValidationError(
                    f"{attr} has shape {getattr(self, attr).shape}, expected {shape}"
                )
        if self.gt_position is not None and (
            self.gt_position.ndim != 2 or self.gt_position.shape[0] != N
        ):
            raise ValidationError(
                f"gt_position has shape {self.gt_position.shape}, expected ({N}, m)"
            )
        idx = _first_non_increasing(self.timestamps)
        if idx is not None:
            raise ValidationError(f"timestamps not strictly increasing at index {idx}")
        norms = np.linalg.norm(self.orientation, axis=1)
        if np.any(np.abs(norms - 1.0) > QUAT_TOL):
            raise ValidationError(
                f"orientation quaternion {int(np.argmax(np.abs(norms - 1.0)))} is not unit norm"
            )

    def global_imu(self):
        """Gyro and accel rotated into the global frame, ``([N, 3], [N, 3])``."""
        return quat_rotate(self.orientation, self.gyro), quat_rotate(self.orientation, self.accel)


@dataclass
class Window:
    input: np.ndarray  # [6, window]
    target: np.ndarray  # [m] or None
    t_start: float
    t_end: float

    def digest(self):
        h = hashlib.blake2b(digest_size=16)
        h.update(np.ascontiguousarray(self.input).tobytes())
        if self.target is not None:
            h.update(np.ascontiguousarray(self.target).tobytes())
        return h.digest()


@dataclass
class NoiseSpec:
    """Sensor error model applied to clean body-frame measurements.

    Biases are constant 3-vectors; ``bias_random_walk_std`` is the per-sample
    standard deviation of an additional random-walk drift on both sensors.
    """

    gyro_noise_std: float = 0.0
    accel_noise_std: float = 0.0
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)
    bias_random_walk_std: float = 0.0
    rng_seed: int = None

    def __post_init__(self):
        self.gyro_bias = tuple(np.broadcast_to(np.asarray(self.gyro_bias, float), 3))
        self.accel_bias = tuple(np.broadcast_to(np.asarray(self.accel_bias, float), 3))
        for name in ("gyro_noise_std", "accel_noise_std", "bias_random_walk_std"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    @property
    def is_zero(self):
        return (
            self.gyro_noise_std == 0
            and self.accel_noise_std == 0
            and self.bias_random_walk_std == 0
            and not any(self.gyro_bias)
            and not any(self.accel_bias)
        )


NOISE_PRESETS = {
    "none": NoiseSpec(),
    "consumer": NoiseSpec(
        gyro_noise_std=0.01,
        accel_noise_std=0.05,
        gyro_bias=(0.002, -0.001, 0.003),
        accel_bias=(0.05, -0.04, 0.03),
        bias_random_walk_std=1e-4,
    ),
    "harsh": NoiseSpec(
        gyro_noise_std=0.03,
        accel_noise_std=0.2,
        gyro_bias=(0.01, -0.008, 0.012),
        accel_bias=(0.2, -0.15, 0.1),
        bias_random_walk_std=5e-4,
    ),
}


def noise_preset(name, **overrides):
    try:
        base = NOISE_PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown noise preset {name!r}; choose from {sorted(NOISE_PRESETS)}"
        ) from None
    return replace(base, **overrides)


# -- resampling and windowing ------------------------------------------------


def resample_linear(seq, target_hz):
    """Linearly interpolate every channel onto a uniform ``target_hz`` grid.

    Quaternions are made sign-continuous, interpolated componentwise and
    renormalized.
    """
    if target_hz <= 0:
        raise ContractError(f"target rate must be positive, got {target_hz}")
    t = seq.timestamps
    idx = _first_non_increasing(t)
    if idx is not None:
        raise ValidationError(f"timestamps not strictly increasing at index {idx}")
    if seq.duration <= 2.0 / target_hz:
        raise ContractError(
            f"sequence of {seq.duration:.6g} s is too short to resample at {target_hz} Hz"
        )
    n = int(np.floor(seq.duration * target_hz + 1e-9)) + 1
    grid = t[0] + np.arange(n) / target_hz

    def interp(values):
        return np.column_stack([np.interp(grid, t, values[:, j]) for j in range(values.shape[1])])

    q = seq.orientation.copy()
    flips = np.cumprod(np.where(np.sum(q[1:] * q[:-1], axis=1) < 0, -1.0, 1.0))
    q[1:] *= flips[:, None]
    ori = quat_normalize(interp(q))
    gt = None if seq.gt_position is None else interp(seq.gt_position)
    return ImuSequence(grid, interp(seq.gyro), interp(seq.accel), ori, gt,
                       sample_rate_hz=float(target_hz), name=seq.name)


def window_spans(N, window=200, stride=10):
    """Start and end sample indices of every window.

    A window's inputs are samples ``[s, s + window)``; its time span runs from
    sample ``s`` to sample ``s + window`` (the next window's start when
    ``stride == window``), clipped to the last sample.
    """
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if N < window:
        raise ValidationError(f"sequence of {N} samples is shorter than one window ({window})")
    starts = np.arange(0, N - window + 1, stride)
    ends = np.minimum(starts + window, N - 1)
    return starts, ends


def window_arrays(seq, window=200, stride=10, with_targets=True):
    """Vectorized windowing: ``(inputs [n, 6, window], targets [n, m] or None,
    t_start [n], t_end [n])``."""
    if with_targets and seq.gt_position is None:
        raise ConfigurationError(
            f"sequence {seq.name!r} has no ground-truth positions; targets cannot be built"
        )
    starts, ends = window_spans(len(seq), window, stride)
    g, a = seq.global_imu()
    channels = np.concatenate([g, a], axis=1).T  # [6, N]
    inputs = sliding_window_view(channels, window, axis=1)[:, starts, :].transpose(1, 0, 2)
    t = seq.timestamps
    targets = None
    if with_targets:
        P = seq.gt_position
        targets = (P[ends] - P[starts]) / (t[ends] - t[starts])[:, None]
    return np.ascontiguousarray(inputs), targets, t[starts], t[ends]


def make_windows(seq, window=200, stride=10, with_targets=True):
    inputs, targets, t0, t1 = window_arrays(seq, window, stride, with_targets)
    return [
        Window(inputs[i], None if targets is None else targets[i], float(t0[i]), float(t1[i]))
        for i in range(len(inputs))
    ]


# -- synthetic generator ------------------------------------------------------


@dataclass
class SyntheticTruth:
    """Analytic planar (or 3D) motion sampled at the sequence timestamps."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray  # global frame, always 3 columns
    yaw: np.ndarray
    yaw_rate: np.ndarray
    params: dict = field(default_factory=dict)


def _line(t, rng, speed=1.0, heading=0.0, ramp=2.0):
    T = float(ramp)
    s = float(speed)
    inside = t < T
    ph = np.pi * np.minimum(t, T) / T
    v = np.where(inside, 0.5 * s * (1 - np.cos(ph)), s)
    a = np.where(inside, 0.5 * s * np.pi / T * np.sin(ph), 0.0)
    p = np.where(inside, 0.5 * s * (t - T / np.pi * np.sin(ph)), 0.5 * s * T + s * (t - T))
    d = np.array([np.cos(heading), np.sin(heading)])
    yaw = np.full_like(t, heading)
    return p[:, None] * d, v[:, None] * d, a[:, None] * d, yaw, np.zeros_like(t)


def _circle(t, rng, radius=5.0, omega=0.2, phase=0.0):
    phi = omega * t + phase
    c, s = np.cos(phi), np.sin(phi)
    pos = radius * np.column_stack([c - np.cos(phase), s - np.sin(phase)])
    vel = radius * omega * np.column_stack([-s, c])
    acc = -radius * omega**2 * np.column_stack([c, s])
    yaw = phi + np.sign(omega) * np.pi / 2
    return pos, vel, acc, yaw, np.full_like(t, omega)


def _figure8(t, rng, scale=10.0, omega=0.15):
    a, w = scale, omega
    pos = np.column_stack([a * np.sin(w * t), 0.5 * a * np.sin(2 * w * t)])
    vel = np.column_stack([a * w * np.cos(w * t), a * w * np.cos(2 * w * t)])
    acc = np.column_stack([-a * w**2 * np.sin(w * t), -2 * a * w**2 * np.sin(2 * w * t)])
    yaw = np.arctan2(vel[:, 1], vel[:, 0])
    yaw_rate = (vel[:, 0] * acc[:, 1] - vel[:, 1] * acc[:, 0]) / np.sum(vel**2, axis=1)
    return pos, vel, acc, yaw, yaw_rate


def _sinusoid_sum(t, amp, freq, phase):
    arg = np.outer(t, freq) + phase
    return (
        (np.sin(arg) - np.sin(phase)) @ amp,
        np.cos(arg) @ (amp * freq),
        -np.sin(arg) @ (amp * freq**2),
    )


def _random_walk(t, rng, speed=1.0, components=4):
    """Bounded wandering path: a sum of random sinusoids per axis, with an
    independent smoothly varying heading."""
    k = int(components)
    pos, vel, acc = [], [], []
    for _ in range(2):
        freq = rng.uniform(0.05, 0.5, k)
        amp = speed * rng.uniform(0.3, 1.0, k) / (freq * np.sqrt(k))
        phase = rng.uniform(0, 2 * np.pi, k)
        p, v, a = _sinusoid_sum(t, amp, freq, phase)
        pos.append(p)
        vel.append(v)
        acc.append(a)
    yaw0 = rng.uniform(-np.pi, np.pi)
    yfreq = rng.uniform(0.05, 0.5, 3)
    yamp = rng.uniform(0.2, 1.0, 3)
    yphase = rng.uniform(0, 2 * np.pi, 3)
    dyaw, yaw_rate, _ = _sinusoid_sum(t, yamp, yfreq, yphase)
    return (np.column_stack(pos), np.column_stack(vel), np.column_stack(acc),
            yaw0 + dyaw, yaw_rate)


PROFILES = {
    "line": _line,
    "circle": _circle,
    "figure8": _figure8,
    "random-walk": _random_walk,
}


def synth_generate(profile, duration_s=300.0, rate_hz=200.0, noise=None, seed=0, m=2,
                   return_truth=False, **params):
    """Simulate an IMU riding an analytic trajectory.

    Parameters
    ----------
    profile : {'line', 'circle', 'figure8', 'random-walk'}
    duration_s, rate_hz : float
        ``round(duration_s * rate_hz)`` samples are produced.
    noise : NoiseSpec, optional
        Defaults to noise-free measurements.
    seed : int
        Drives the random-walk shape and the noise draws.
    m : {2, 3}
        Ground-truth dimensionality; ``m=3`` adds a slow vertical oscillation
        (``z_amp`` meters at ``z_omega`` rad/s).
    **params
        Profile shape overrides, e.g. ``radius``/``omega`` for circles.

    Returns
    -------
    ImuSequence, or ``(ImuSequence, SyntheticTruth)`` if ``return_truth``.
    """
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    if duration_s < 2:
        raise ContractError(f"duration must be >= 2 s, got {duration_s}")
    if m not in (2, 3):
        raise ConfigurationError(f"m must be 2 or 3, got {m}")
    noise = NoiseSpec() if noise is None else noise
    z_amp = float(params.pop("z_amp", 1.0))
    z_omega = float(params.pop("z_omega", 0.1))

    N = int(round(duration_s * rate_hz))
    t = np.arange(N) / float(rate_hz)
    shape_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    try:
        pos, vel, acc, yaw, yaw_rate = PROFILES[profile](t, shape_rng, **params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for profile {profile!r}: {exc}") from None

    acc3 = np.column_stack([acc, np.zeros(N)])
    if m == 3:
        pos = np.column_stack([pos, z_amp * np.sin(z_omega * t)])
        vel = np.column_stack([vel, z_amp * z_omega * np.cos(z_omega * t)])
        acc3[:, 2] = -z_amp * z_omega**2 * np.sin(z_omega * t)

    ori = quat_from_yaw(yaw)
    accel = quat_rotate(quat_conjugate(ori), acc3)
    gyro = np.column_stack([np.zeros(N), np.zeros(N), yaw_rate])

    if not noise.is_zero:
        if noise.rng_seed is not None:
            noise_rng = np.random.default_rng(noise.rng_seed)
        gyro_drift = np.cumsum(noise_rng.normal(0.0, noise.bias_random_walk_std, (N, 3)), axis=0)
        accel_drift = np.cumsum(noise_rng.normal(0.0, noise.bias_random_walk_std, (N, 3)), axis=0)
        gyro = (gyro + np.asarray(noise.gyro_bias) + gyro_drift
                + noise_rng.normal(0.0, noise.gyro_noise_std, (N, 3)))
        accel = (accel + np.asarray(noise.accel_bias) + accel_drift
                 + noise_rng.normal(0.0, noise.accel_noise_std, (N, 3)))

    seq = ImuSequence(t, gyro, accel, ori, pos, sample_rate_hz=float(rate_hz),
                      name=f"{profile}-{seed}")
    if return_truth:
        return seq, SyntheticTruth(pos, vel, acc3, yaw, yaw_rate, dict(params))
    return seq


# -- canonical CSV dataset ---------------------------------------------------


def write_dataset(seq, directory):
    """Write ``imu.csv``, ``ori.csv`` and (if present) ``gt.csv`` atomically."""
    os.makedirs(directory, exist_ok=True)
    t = seq.timestamps
    atomic_write_text(
        os.path.join(directory, "imu.csv"),
        format_rows("t,gx,gy,gz,ax,ay,az", [t, *seq.gyro.T, *seq.accel.T]),
    )
    atomic_write_text(
        os.path.join(directory, "ori.csv"),
        format_rows("t,qw,qx,qy,qz", [t, *seq.orientation.T]),
    )
    paths = [os.path.join(directory, n) for n in ("imu.csv", "ori.csv")]
    if seq.gt_position is not None:
        cols = ["px", "py", "pz"][: seq.gt_position.shape[1]]
        atomic_write_text(
            os.path.join(directory, "gt.csv"),
            format_rows("t," + ",".join(cols), [t, *seq.gt_position.T]),
        )
        paths.append(os.path.join(directory, "gt.csv"))
    return paths


def _read_csv(path, expected):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if header != expected:
        raise ValidationError(f"{path}: header {header} does not match {expected}")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] != len(expected):
        raise ValidationError(f"{path}: expected {len(expected)} columns, got {arr.shape[1]}")
    return arr


def read_dataset(directory, require_gt=False):
    """Load a canonical dataset directory into an :class:`ImuSequence`.

    Orientation quaternions are renormalized to absorb CSV rounding.
    """
    if not os.path.isdir(directory):
        raise ConfigurationError(f"dataset directory not found: {directory}")
    imu = _read_csv(os.path.join(directory, "imu.csv"), ["t", "gx", "gy", "gz", "ax", "ay", "az"])
    ori = _read_csv(os.path.join(directory, "ori.csv"), ["t", "qw", "qx", "qy", "qz"])
    if len(ori) != len(imu) or not np.array_equal(ori[:, 0], imu[:, 0]):
        raise ValidationError(f"{directory}: imu.csv and ori.csv timestamps differ")
    gt_path = os.path.join(directory, "gt.csv")
    gt = None
    if os.path.exists(gt_path):
        with open(gt_path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        if header not in (["t", "px", "py"], ["t", "px", "py", "pz"]):
            raise ValidationError(f"{gt_path}: unexpected header {header}")
        gt_arr = _read_csv(gt_path, header)
        if len(gt_arr) != len(imu) or not np.array_equal(gt_arr[:, 0], imu[:, 0]):
            raise ValidationError(f"{directory}: gt.csv timestamps differ from imu.csv")
        gt = gt_arr[:, 1:]
    elif require_gt:
        raise ConfigurationError(f"{directory}: gt.csv is required but missing")
    t = imu[:, 0]
    rate = 1.0 / float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    name = os.path.basename(os.path.normpath(directory))
    return ImuSequence(t, imu[:, 1:4], imu[:, 4:7], quat_normalize(ori[:, 1:]), gt,
                       sample_rate_hz=rate, name=name)
