"""Neural inertial navigation: IMU windows -> IMUNet velocity -> trajectory."""

__version__ = "0.1.0"

from .architectures import (  # noqa: E402
    build_imunet,
    build_mobilenet_1d,
    build_model,
    build_resnet18_1d,
    count_costs,
)
from .data import ImuSequence, NoiseSpec, make_windows, read_dataset, synth_generate, write_dataset  # noqa: E402
from .navigation import ate, integrate_acceleration, integrate_velocity, predict_trajectory, rte  # noqa: E402
from .tensor import Tensor, no_grad  # noqa: E402
from .training import TrainConfig, load_checkpoint, save_checkpoint, train  # noqa: E402

__all__ = [
    "__version__",
    "Tensor",
    "no_grad",
    "build_imunet",
    "build_resnet18_1d",
    "build_mobilenet_1d",
    "build_model",
    "count_costs",
    "ImuSequence",
    "NoiseSpec",
    "synth_generate",
    "make_windows",
    "read_dataset",
    "write_dataset",
    "integrate_velocity",
    "integrate_acceleration",
    "predict_trajectory",
    "ate",
    "rte",
    "TrainConfig",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]
