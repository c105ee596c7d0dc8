"""Base pretraining, joint content/semantic adapter training and reconstruction fitting."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from types import SimpleNamespace
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

import numpy as np

from pairedit import losses as L
from pairedit.netmodel import DenoiserParams, Linear, LoraAdapter, forward_backward, init_adapter, init_base
from pairedit.schedule import STANDARD, forward_noise
from pairedit.tensorcore import NonFiniteError, Rng

log = logging.getLogger(__name__)

METHODS = ("full", "A", "B", "C")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, what: str = "loss"):
        super().__init__(f"{what} became non-finite at step {step}")
        self.step = step


@contextmanager
def _step_guard(step: int):
    """Turn a non-finite prediction inside a training step into TrainingDiverged(step)."""
    try:
        yield
    except NonFiniteError as exc:
        raise TrainingDiverged(step, "prediction") from exc


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _coerce(cls, values: Mapping[str, Any]) -> dict[str, Any]:
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in values.items():
        if key not in types:
            raise KeyError(f"unknown config key {key!r}")
        kind = types[key]
        if isinstance(raw, str):
            if kind in ("int", int):
                raw = int(raw)
            elif kind in ("float", float):
                raw = float(raw)
            elif kind in ("tuple[int, ...]",):
                raw = tuple(int(v) for v in raw.split(",") if v.strip())
        out[key] = raw
    return out


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2000
    lr: float = 2e-3
    batch_size: int = 64
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    n_freq: int = 4
    n_samples: int = 4096

    def __post_init__(self):
        if self.steps < 1 or self.lr <= 0 or self.batch_size < 1:
            raise ValueError("pretrain config needs steps >= 1, lr > 0, batch_size >= 1")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "PretrainConfig":
        return cls(**_coerce(cls, values))

    def to_mapping(self) -> dict[str, Any]:
        d = asdict(self)
        d["hidden"] = ",".join(str(h) for h in self.hidden)
        return d


# Disc images need a wider base and a longer, gentler schedule than the vector suites.
IMAGE_PRETRAIN = PretrainConfig(steps=4000, lr=1e-3, hidden=(256, 256))


def default_pretrain(mode: str) -> PretrainConfig:
    return IMAGE_PRETRAIN if mode == "image" else PretrainConfig()


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 2e-3
    batch_size: int = 16
    rank: int = 4
    seed: int = 0
    init_scale: float = 0.1
    t_min: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: L.LossConfig = field(default_factory=L.LossConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.t_min < 1.0:
            raise ValueError("t_min must lie in [0, 1)")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "TrainConfig":
        loss_keys = {f.name for f in fields(L.LossConfig)}
        loss_vals = {k: v for k, v in values.items() if k in loss_keys}
        own = {k: v for k, v in values.items() if k not in loss_keys}
        own = _coerce(cls, own)
        own.pop("loss", None)
        return cls(**own, loss=L.LossConfig(**_coerce(L.LossConfig, loss_vals)))

    def to_mapping(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "loss"}
        d.update(asdict(self.loss))
        return d

    def with_loss(self, **kw) -> "TrainConfig":
        return replace(self, loss=replace(self.loss, **kw))


def _batch_rows(rng: Rng, n: int, batch_size: int) -> np.ndarray:
    if n < batch_size:
        return rng.integers(n, batch_size)
    # without replacement: rank uniform keys
    return np.argsort(rng.uniform((n,)), kind="stable")[:batch_size]


def _sample_t(rng: Rng, size: int, t_min: float) -> np.ndarray:
    return t_min + (1.0 - t_min) * rng.uniform((size,))


def pretrain_base(data: np.ndarray, cfg: PretrainConfig = PretrainConfig(), losses_out: list | None = None) -> DenoiserParams:
    """Fit the base denoiser to unpaired data with the standard rectified-flow objective."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("empty dataset")
    rng = Rng(cfg.seed)
    init = init_base(rng.child(0), data.shape[1], cfg.hidden, cfg.n_freq)
    Ws = [l.W.copy() for l in init.layers]
    bs = [l.b.copy() for l in init.layers]
    opt = Adam([*Ws, *bs], cfg.lr)
    draw = rng.child(1)
    for step in range(cfg.steps):
        rows = _batch_rows(draw, data.shape[0], cfg.batch_size)
        x0 = data[rows]
        eps = draw.normal(x0.shape)
        t = _sample_t(draw, x0.shape[0], 0.0)
        x_t = forward_noise(x0, eps, t, STANDARD)
        target = STANDARD.velocity(x0, eps)
        # live view over the arrays being optimised; DenoiserParams would copy and freeze them
        params = SimpleNamespace(layers=tuple(Linear(W, b) for W, b in zip(Ws, bs)), n_freq=cfg.n_freq)
        with _step_guard(step):
            loss, _, base_grads = forward_backward(params, [], x_t, t, lambda p: L.mse(p, target), want_base=True)
        if not np.isfinite(loss):
            raise TrainingDiverged(step)
        if losses_out is not None:
            losses_out.append(loss)
        opt.step([g[0] for g in base_grads] + [g[1] for g in base_grads])
        if step % 500 == 0:
            log.debug("pretrain step %d loss %.5f", step, loss)
    return DenoiserParams(tuple(Linear(W, b) for W, b in zip(Ws, bs)), cfg.n_freq)


@dataclass
class StepLog:
    step: int
    l_content: float
    l_semantic: float
    l_total: float


def _check(step: int, *values: float) -> None:
    if not all(np.isfinite(v) for v in values):
        raise TrainingDiverged(step)


def train_pairedit(base: DenoiserParams, x0A: np.ndarray, x0B: np.ndarray, cfg: TrainConfig = TrainConfig(),
                   method: str = "full", log_rows: list[StepLog] | None = None):
    """Train the content and semantic adapters on paired samples.

    ``method`` selects the full objective or an ablation (``A``: single slider-style adapter,
    ``B``: no content adapter, ``C``: standard-path semantic loss). Returns
    ``(content_or_None, semantic)``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    x0A = np.atleast_2d(np.asarray(x0A, dtype=np.float64))
    x0B = np.atleast_2d(np.asarray(x0B, dtype=np.float64))
    if x0A.shape[0] == 0:
        raise ValueError("need at least one pair")
    if x0A.shape != x0B.shape:
        raise ValueError("source and target arrays differ in shape")
    rng = Rng(cfg.seed)
    use_content = method in ("full", "C")
    content = init_adapter(rng.child(1), base, cfg.rank, cfg.init_scale) if use_content else None
    semantic = init_adapter(rng.child(2), base, cfg.rank, cfg.init_scale)
    adam = dict(lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    opt_c = Adam(content.params(), **adam) if content is not None else None
    opt_s = Adam(semantic.params(), **adam)
    loss_cfg = cfg.loss
    if method == "C":
        # the ablation swaps the schedule for both adapters so they still share one noised input
        loss_cfg = replace(loss_cfg, content_schedule="standard", semantic_schedule="standard")
    lam = loss_cfg.lambda_sem
    draw = rng.child(3)
    for step in range(cfg.steps):
        rows = _batch_rows(draw, x0A.shape[0], cfg.batch_size)
        eps0 = draw.normal((len(rows), x0A.shape[1]))
        t = _sample_t(draw, len(rows), cfg.t_min)
        batch = L.PairedBatch(x0A[rows], x0B[rows], eps0, t)
        l_c = 0.0
        with _step_guard(step):
            if method == "A":
                l_s, g_s = L.variant_a_loss(base, semantic, batch, loss_cfg)
            elif method == "B":
                l_s, g_s = L.variant_b_loss(base, semantic, batch, loss_cfg)
            else:
                l_c, g_c = L.content_loss(base, content, batch, loss_cfg)
                if method == "C":
                    l_s, g_s = L.variant_c_loss(base, content, semantic, batch, loss_cfg)
                else:
                    l_s, g_s = L.semantic_loss(base, semantic, batch, loss_cfg, content=content)
        total = L.joint_objective(l_c, l_s, lam) if use_content else lam * l_s
        _check(step, l_c, l_s)
        if log_rows is not None:
            log_rows.append(StepLog(step, l_c, l_s, total))
        # gradients are computed at the pre-step parameters, then each adapter moves on its own loss
        if opt_c is not None:
            opt_c.step([*g_c[0], *g_c[1]])
        opt_s.step([lam * g for g in (*g_s[0], *g_s[1])])
    return content, semantic


def fit_reconstruction_lora(base: DenoiserParams, x_real: np.ndarray, cfg: TrainConfig = TrainConfig(),
                            steps: int | None = None) -> LoraAdapter:
    """Fit one adapter so the base reconstructs ``x_real`` (one sample or a small set)."""
    x_real = np.atleast_2d(np.asarray(x_real, dtype=np.float64))
    steps = cfg.steps if steps is None else steps
    rng = Rng(cfg.seed)
    rec = init_adapter(rng.child(4), base, cfg.rank, cfg.init_scale)
    opt = Adam(rec.params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    loss_cfg = replace(cfg.loss, content_schedule="standard")
    draw = rng.child(5)
    for step in range(steps):
        rows = _batch_rows(draw, x_real.shape[0], cfg.batch_size)
        x0 = x_real[rows]
        eps0 = draw.normal(x0.shape)
        t = _sample_t(draw, len(rows), cfg.t_min)
        with _step_guard(step):
            loss, (gA, gB) = L.content_loss(base, rec, L.PairedBatch(x0, x0, eps0, t), loss_cfg)
        _check(step, loss)
        opt.step([*gA, *gB])
    return rec
