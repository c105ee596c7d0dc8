"""Learn semantic edit directions from paired examples on a toy rectified-flow denoiser."""

from pairedit.tensorcore import Rng, gauss, finite_diff_grad
from pairedit.netmodel import (
    DenoiserParams,
    LoraAdapter,
    StackEntry,
    init_adapter,
    init_base,
    predict_noise,
    backprop_adapters,
)
from pairedit.schedule import NoiseSchedule, STANDARD, content_preserving, forward_noise, euler_step, paired_delta

__version__ = "0.1.0"

__all__ = [
    "Rng",
    "gauss",
    "finite_diff_grad",
    "DenoiserParams",
    "LoraAdapter",
    "StackEntry",
    "init_adapter",
    "init_base",
    "predict_noise",
    "backprop_adapters",
    "NoiseSchedule",
    "STANDARD",
    "content_preserving",
    "forward_noise",
    "euler_step",
    "paired_delta",
]
