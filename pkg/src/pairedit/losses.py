"""Content, semantic and ablation losses with analytic adapter gradients.

All losses are mean squared errors averaged over every element of the batch. Each loss
returns ``(value, (dA_list, dB_list))`` for the single adapter it trains.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from pairedit.netmodel import DenoiserParams, LoraAdapter, StackEntry, forward_backward
from pairedit.schedule import STANDARD, NoiseSchedule, content_preserving, forward_noise


@dataclass(frozen=True)
class PairedBatch:
    x0A: np.ndarray
    x0B: np.ndarray
    eps0: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        for name in ("x0A", "x0B", "eps0"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64)))
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if t.size == 1 and self.x0A.shape[0] > 1:
            t = np.full(self.x0A.shape[0], t[0])
        object.__setattr__(self, "t", t)
        if self.x0A.shape[0] == 0:
            raise ValueError("empty batch")
        if not (self.x0A.shape == self.x0B.shape == self.eps0.shape):
            raise ValueError("x0A, x0B and eps0 must share a shape")
        if t.shape != (self.x0A.shape[0],):
            raise ValueError("need exactly one t per row")
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("t must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.x0A.shape[0]


@dataclass(frozen=True)
class LossConfig:
    eta: float = 4.0
    lambda_sem: float = 1.0
    beta: float = 1.0
    content_schedule: str = "cp"
    semantic_schedule: str = "cp"
    num_steps: int = 28

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.lambda_sem < 0:
            raise ValueError("lambda_sem must be non-negative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for name in ("content_schedule", "semantic_schedule"):
            if getattr(self, name) not in ("standard", "cp"):
                raise ValueError(f"{name} must be 'standard' or 'cp'")

    def schedule(self, kind: str) -> NoiseSchedule:
        return STANDARD if kind == "standard" else content_preserving(self.beta)

    @property
    def content(self) -> NoiseSchedule:
        return self.schedule(self.content_schedule)

    @property
    def semantic(self) -> NoiseSchedule:
        return self.schedule(self.semantic_schedule)

    @property
    def dt(self) -> float:
        return 1.0 / self.num_steps


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    r = pred - target
    return float(np.mean(r * r)), (2.0 / r.size) * r


def semantic_target(eps0, x0A, x0B, beta: float, eta: float) -> np.ndarray:
    eps0, x0A, x0B = (np.asarray(a, dtype=np.float64) for a in (eps0, x0A, x0B))
    if not (eps0.shape == x0A.shape == x0B.shape):
        raise ValueError("eps0, x0A, x0B must share a shape")
    return beta * eps0 + eta * (x0A - x0B)


def standard_semantic_target(eps0, x0A, x0B, t, eta: float, dt: float) -> np.ndarray:
    """Target under the standard path: the weight on ``x0A - x0B`` is ``eta * (1 - t + dt)``."""
    weight = eta * (1.0 - np.asarray(t, dtype=np.float64).reshape(-1, 1) + dt)
    return (eps0 - x0A) + weight * (x0A - x0B)


def _loss_and_grads(base, stack, x_t, t, target, trainable_index):
    loss, grads, _ = forward_backward(base, stack, x_t, t, lambda p: mse(p, target), [trainable_index])
    return loss, grads[trainable_index]


def content_loss(base: DenoiserParams, content: LoraAdapter, batch: PairedBatch, cfg: LossConfig):
    """Reconstruct the source: regress the path velocity of the content schedule."""
    sched = cfg.content
    x_t = forward_noise(batch.x0A, batch.eps0, batch.t, sched)
    target = sched.velocity(batch.x0A, batch.eps0)
    return _loss_and_grads(base, [StackEntry(content)], x_t, batch.t, target, 0)


def semantic_loss(base: DenoiserParams, semantic: LoraAdapter, batch: PairedBatch, cfg: LossConfig,
                  content: LoraAdapter | None = None):
    """Joint prediction of content+semantic on the noised source versus the guidance target.

    Only the semantic adapter is differentiated; the content adapter is a constant here.
    """
    sched = cfg.semantic
    x_t = forward_noise(batch.x0A, batch.eps0, batch.t, sched)
    if sched.is_standard:
        target = standard_semantic_target(batch.eps0, batch.x0A, batch.x0B, batch.t, cfg.eta, cfg.dt)
    else:
        target = semantic_target(batch.eps0, batch.x0A, batch.x0B, cfg.beta, cfg.eta)
    stack = [StackEntry(semantic)] if content is None else [StackEntry(content), StackEntry(semantic)]
    return _loss_and_grads(base, stack, x_t, batch.t, target, len(stack) - 1)


def joint_objective(l_content: float, l_semantic: float, lambda_sem: float = 1.0) -> float:
    return l_content + lambda_sem * l_semantic


def variant_a_loss(base: DenoiserParams, adapter: LoraAdapter, batch: PairedBatch, cfg: LossConfig):
    """Slider-style pair loss: at scale +1 reconstruct the target, at scale -1 the source.

    Both images are noised on the standard path with the shared ``eps0``.
    """
    total = 0.0
    dA = [np.zeros_like(a) for a in adapter.A]
    dB = [np.zeros_like(b) for b in adapter.B]
    for sign, x0 in ((1.0, batch.x0B), (-1.0, batch.x0A)):
        x_t = forward_noise(x0, batch.eps0, batch.t, STANDARD)
        target = STANDARD.velocity(x0, batch.eps0)
        loss, (gA, gB) = _loss_and_grads(base, [StackEntry(adapter, scale=sign)], x_t, batch.t, target, 0)
        total += loss
        for l in range(len(dA)):
            dA[l] += gA[l]
            dB[l] += gB[l]
    return total, (dA, dB)


def variant_b_loss(base: DenoiserParams, semantic: LoraAdapter, batch: PairedBatch, cfg: LossConfig):
    """Semantic loss with no content adapter in the stack."""
    return semantic_loss(base, semantic, batch, cfg, content=None)


def variant_c_loss(base: DenoiserParams, content: LoraAdapter, semantic: LoraAdapter, batch: PairedBatch,
                   cfg: LossConfig):
    """Semantic loss on the standard path with its time-dependent target weight."""
    return semantic_loss(base, semantic, batch, replace(cfg, semantic_schedule="standard"), content=content)
