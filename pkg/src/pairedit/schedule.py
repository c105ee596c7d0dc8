"""Forward noising paths and the Euler denoising step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """``standard``: x_t = (1 - t) x0 + t eps.  ``content_preserving``: x_t = x0 + t beta eps."""

    variant: str = "standard"
    beta: float = 1.0

    def __post_init__(self):
        if self.variant not in ("standard", "content_preserving"):
            raise ValueError(f"unknown schedule variant {self.variant!r}")
        if self.variant == "content_preserving" and not self.beta > 0:
            raise ValueError("content-preserving schedule needs beta > 0")

    @property
    def is_standard(self) -> bool:
        return self.variant == "standard"

    def velocity(self, x0: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Path derivative d x_t / dt: the regression target that makes the Euler step exact."""
        if self.is_standard:
            return eps - x0
        return self.beta * eps

    def __str__(self) -> str:
        return "standard" if self.is_standard else f"cp:{self.beta!r}"

    @classmethod
    def parse(cls, text: str) -> "NoiseSchedule":
        text = text.strip()
        if text == "standard":
            return STANDARD
        if text.startswith("cp:"):
            return content_preserving(float(text[3:]))
        raise ValueError(f"cannot parse schedule {text!r}; use 'standard' or 'cp:<beta>'")


STANDARD = NoiseSchedule("standard")


def content_preserving(beta: float) -> NoiseSchedule:
    return NoiseSchedule("content_preserving", float(beta))


def _time_column(t) -> np.ndarray | float:
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError("t must lie in [0, 1]")
    if t_arr.ndim == 0:
        return float(t_arr)
    return t_arr.reshape(-1, 1)


def forward_noise(x0: np.ndarray, eps: np.ndarray, t, sched: NoiseSchedule = STANDARD) -> np.ndarray:
    """Noise ``x0`` to time ``t``. ``t`` may be a scalar or one value per row."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    tc = _time_column(t)
    if sched.is_standard:
        return (1.0 - tc) * x0 + tc * eps
    return x0 + tc * sched.beta * eps


def euler_step(x_t: np.ndarray, eps_pred: np.ndarray, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if x_t.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch {x_t.shape} vs {eps_pred.shape}")
    return x_t - dt * eps_pred


def paired_delta(x0A: np.ndarray, x0B: np.ndarray, eps: np.ndarray, t: float, dt: float,
                 sched: NoiseSchedule = STANDARD) -> np.ndarray:
    """``x^A_{t-dt} - x^B_{t-dt}`` with both images noised by the same ``eps``."""
    if t - dt < 0:
        raise ValueError(f"t - dt = {t - dt} is negative")
    s = t - dt
    return forward_noise(x0A, eps, s, sched) - forward_noise(x0B, eps, s, sched)
