"""Euler sampling with delayed semantic activation, guidance-style adapter fusion and composition."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from pairedit.netmodel import AdapterStack, DenoiserParams, LoraAdapter, StackEntry, predict_noise
from pairedit.schedule import STANDARD, euler_step, forward_noise
from pairedit.tensorcore import Rng


@dataclass(frozen=True)
class SampleConfig:
    num_steps: int = 28
    off_steps: int = 14
    scale: float = 1.0
    gamma_real: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not 0 <= self.off_steps <= self.num_steps:
            raise ValueError("off_steps must lie in [0, num_steps]")

    @property
    def dt(self) -> float:
        return 1.0 / self.num_steps

    def times(self) -> list[float]:
        """Uniform grid 1, 1 - dt, ..., dt."""
        return [1.0 - i / self.num_steps for i in range(self.num_steps)]


@dataclass
class Trajectory:
    x: list[np.ndarray]
    eps: list[np.ndarray]


def initial_noise(seeds: Sequence[int], dim: int) -> np.ndarray:
    """One row of N(0, 1) noise per seed, each from its own stream."""
    return np.stack([Rng(int(s)).normal((dim,)) for s in seeds])


def integrate(x_start: np.ndarray, cfg: SampleConfig, noise_fn: Callable[[np.ndarray, float, int], np.ndarray],
              trajectory: Trajectory | None = None, start_step: int = 0) -> np.ndarray:
    """Euler steps ``start_step .. num_steps - 1`` from ``x_start`` at time ``1 - start_step * dt``."""
    x = np.array(x_start, dtype=np.float64)
    dt = cfg.dt
    times = cfg.times()
    for i in range(start_step, cfg.num_steps):
        t = times[i]
        eps = noise_fn(x, t, i)
        if trajectory is not None:
            trajectory.x.append(x.copy())
            trajectory.eps.append(eps.copy())
        x = euler_step(x, eps, dt)
    if trajectory is not None:
        trajectory.x.append(x.copy())
    return x


def _stack_at(stack: AdapterStack, step: int, cfg: SampleConfig) -> AdapterStack:
    out = []
    for e in stack:
        if e.semantic:
            s = 0.0 if step < cfg.off_steps else cfg.scale
            out.append(replace(e, scale=s))
        else:
            out.append(e)
    return out


def _x1(base: DenoiserParams, cfg: SampleConfig, x1: np.ndarray | None, n: int) -> np.ndarray:
    if x1 is not None:
        return np.atleast_2d(np.asarray(x1, dtype=np.float64))
    return Rng(cfg.seed).normal((n, base.dim))


def generate(base: DenoiserParams, stack: AdapterStack, cfg: SampleConfig = SampleConfig(), x1=None, n: int = 1,
             trajectory: Trajectory | None = None) -> np.ndarray:
    """Integrate from t=1 to 0. Entries flagged ``semantic`` run at ``cfg.scale`` but only
    from step ``cfg.off_steps`` on; before that they contribute nothing."""
    start = _x1(base, cfg, x1, n)

    def noise_fn(x, t, step):
        return predict_noise(base, _stack_at(stack, step, cfg), x, t)

    return integrate(start, cfg, noise_fn, trajectory)


def edit_sources(base: DenoiserParams, stack: AdapterStack, sources: np.ndarray, cfg: SampleConfig = SampleConfig(),
                 x1: np.ndarray | None = None, trajectory: Trajectory | None = None) -> np.ndarray:
    """Edit existing samples: noise them along the standard path to the step where semantic
    entries switch on, then integrate the remaining steps.

    With ``off_steps = 0`` this is plain generation from ``x1``.
    """
    sources = np.atleast_2d(np.asarray(sources, dtype=np.float64))
    noise = _x1(base, cfg, x1, sources.shape[0])
    k = cfg.off_steps
    start = forward_noise(sources, noise, 1.0 - k * cfg.dt, STANDARD) if k > 0 else noise

    def noise_fn(x, t, step):
        return predict_noise(base, _stack_at(stack, step, cfg), x, t)

    return integrate(start, cfg, noise_fn, trajectory, start_step=k)


def compose(base: DenoiserParams, rec: LoraAdapter | None, sems: Sequence[LoraAdapter], gammas: Sequence[float],
            x_t, t, stacked: bool = True) -> np.ndarray:
    """``eps_rec + sum_i gamma_i (eps_{rec+sem_i} - eps_rec)``, evaluated in the affine form
    ``(1 - sum gamma) eps_rec + sum_i gamma_i eps_{rec+sem_i}`` so the endpoints are exact.

    With ``stacked=False`` the guided term uses the semantic adapter alone (``eps_{sem_i}``).
    """
    if len(sems) == 0:
        raise ValueError("need at least one semantic adapter")
    if len(sems) != len(gammas):
        raise ValueError("one gamma per semantic adapter")
    rec_stack = [StackEntry(rec)] if rec is not None else []
    eps_rec = predict_noise(base, rec_stack, x_t, t)
    out = (1.0 - float(sum(gammas))) * eps_rec
    for sem, g in zip(sems, gammas):
        guided = [*rec_stack, StackEntry(sem)] if stacked else [StackEntry(sem)]
        out = out + g * predict_noise(base, guided, x_t, t)
    return out


def fused_noise(base: DenoiserParams, rec: LoraAdapter | None, sem: LoraAdapter, x_t, t, gamma: float,
                stacked: bool = True) -> np.ndarray:
    return compose(base, rec, [sem], [gamma], x_t, t, stacked)


def generate_fused(base: DenoiserParams, rec: LoraAdapter | None, sems: Sequence[LoraAdapter],
                   gammas: Sequence[float], cfg: SampleConfig = SampleConfig(), x1=None, n: int = 1,
                   trajectory: Trajectory | None = None) -> np.ndarray:
    """Sample with fused noise; the semantic terms stay off for the first ``off_steps``."""
    start = _x1(base, cfg, x1, n)
    rec_stack = [StackEntry(rec)] if rec is not None else []

    def noise_fn(x, t, step):
        if step < cfg.off_steps:
            return predict_noise(base, rec_stack, x, t)
        return compose(base, rec, sems, gammas, x, t)

    return integrate(start, cfg, noise_fn, trajectory)


def linear_merge(rec: LoraAdapter, sem: LoraAdapter, alpha: float) -> LoraAdapter:
    """Weight-space merge ``dW = dW_rec + alpha * dW_sem`` as one adapter of rank r_rec + r_sem."""
    if len(rec.A) != len(sem.A):
        raise ValueError("adapters cover different layer counts")
    A = [np.concatenate([ar, as_], axis=0) for ar, as_ in zip(rec.A, sem.A)]
    B = [np.concatenate([rec.scale * br, alpha * sem.scale * bs], axis=1) for br, bs in zip(rec.B, sem.B)]
    return LoraAdapter(A, B, 1.0)


def generate_merged(base: DenoiserParams, rec: LoraAdapter, merged: LoraAdapter, cfg: SampleConfig = SampleConfig(),
                    x1=None, n: int = 1) -> np.ndarray:
    """Sample with ``rec`` for the first ``off_steps`` and the weight-merged adapter afterwards."""
    start = _x1(base, cfg, x1, n)

    def noise_fn(x, t, step):
        return predict_noise(base, [StackEntry(rec if step < cfg.off_steps else merged)], x, t)

    return integrate(start, cfg, noise_fn)
