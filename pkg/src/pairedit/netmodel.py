"""Frozen MLP denoiser with stacked low-rank adapters.

Wiring: the input to layer 0 is ``concat(x, phi(t))`` where
``phi(t) = [sin(pi k t) for k=1..K] + [cos(pi k t) for k=1..K]``. Each hidden layer is
``tanh(h @ W_eff.T + b)``; the last layer is linear. Every linear layer carries one
low-rank delta per adapter: ``W_eff = W + sum_i s_i * B_i @ A_i``.

The network output is the quantity integrated by the sampler, ``x_{t-dt} = x_t - dt * out``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pairedit.tensorcore import Rng, as_tensor, check_finite


@dataclass(frozen=True)
class Linear:
    W: np.ndarray
    b: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, order="C")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DenoiserParams:
    layers: tuple[Linear, ...]
    n_freq: int = 4

    def __post_init__(self):
        layers = tuple(Linear(_frozen(l.W), _frozen(l.b)) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        for i in range(1, len(layers)):
            if layers[i].W.shape[1] != layers[i - 1].W.shape[0]:
                raise ValueError(f"layer {i} input width does not match layer {i - 1} output")
        for i, l in enumerate(layers):
            if l.b.shape != (l.W.shape[0],):
                raise ValueError(f"layer {i} bias shape {l.b.shape} != ({l.W.shape[0]},)")
        if layers[0].W.shape[1] != self.dim + 2 * self.n_freq:
            raise ValueError("first layer must take data dim + 2 * n_freq inputs")

    @property
    def dim(self) -> int:
        return self.layers[-1].W.shape[0]

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(l.W.shape[0] for l in self.layers[:-1])

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [l.W.shape for l in self.layers]


def time_features(t: np.ndarray, n_freq: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    k = np.arange(1, n_freq + 1, dtype=np.float64)
    arg = np.pi * t * k
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def init_base(rng: Rng, dim: int, hidden: Sequence[int] = (64, 64), n_freq: int = 4) -> DenoiserParams:
    widths = [dim + 2 * n_freq, *hidden, dim]
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = rng.normal((fan_out, fan_in)) / np.sqrt(fan_in)
        layers.append(Linear(W, np.zeros(fan_out)))
    return DenoiserParams(tuple(layers), n_freq)


@dataclass
class LoraAdapter:
    """Per-layer factors ``A[l]`` (r x in) and ``B[l]`` (out x r); delta is ``scale * B @ A``."""

    A: list[np.ndarray]
    B: list[np.ndarray]
    scale: float = 1.0

    @property
    def rank(self) -> int:
        return self.A[0].shape[0]

    def delta(self, layer: int) -> np.ndarray:
        return self.scale * (self.B[layer] @ self.A[layer])

    def params(self) -> list[np.ndarray]:
        return [*self.A, *self.B]

    def copy(self) -> "LoraAdapter":
        return LoraAdapter([a.copy() for a in self.A], [b.copy() for b in self.B], self.scale)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.params()])

    def with_vector(self, v: np.ndarray) -> "LoraAdapter":
        """Copy of this adapter with parameters read from a flat vector (A blocks, then B)."""
        out, pos = [], 0
        for p in self.params():
            out.append(np.array(v[pos:pos + p.size], dtype=np.float64).reshape(p.shape))
            pos += p.size
        n = len(self.A)
        return LoraAdapter(out[:n], out[n:], self.scale)

    def norm(self) -> float:
        """Frobenius norm of the stacked layer deltas."""
        return float(np.sqrt(sum(np.sum(self.delta(i) ** 2) for i in range(len(self.A)))))


def init_adapter(rng: Rng, base: DenoiserParams, rank: int, init_scale: float = 0.1, scale: float = 1.0) -> LoraAdapter:
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    limit = min(min(s) for s in base.shapes)
    if rank > limit:
        raise ValueError(f"rank {rank} exceeds smallest layer dimension {limit}")
    A = [rng.normal((rank, n_in)) * init_scale for _, n_in in base.shapes]
    B = [np.zeros((n_out, rank)) for n_out, _ in base.shapes]
    return LoraAdapter(A, B, scale)


@dataclass
class StackEntry:
    adapter: LoraAdapter
    active: bool = True
    scale: float | None = None
    semantic: bool = False

    @property
    def effective_scale(self) -> float:
        if not self.active:
            return 0.0
        return self.adapter.scale if self.scale is None else self.scale


AdapterStack = list[StackEntry]


def as_stack(*items) -> AdapterStack:
    """Build a stack from adapters or entries; ``None`` items are skipped."""
    return [it if isinstance(it, StackEntry) else StackEntry(it) for it in items if it is not None]


@dataclass
class _Cache:
    inputs: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)


def _effective_weight(base: DenoiserParams, stack: AdapterStack, layer: int) -> np.ndarray:
    W = base.layers[layer].W
    for entry in stack:
        s = entry.effective_scale
        if s == 0.0:
            continue
        W = W + s * (entry.adapter.B[layer] @ entry.adapter.A[layer])
    return W


def _prepare(base: DenoiserParams, x_t, t) -> tuple[np.ndarray, np.ndarray, bool]:
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.ndim != 2 or x2.shape[1] != base.dim:
        raise ValueError(f"input shape {x.shape} does not match network dim {base.dim}")
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (x2.shape[0],))
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError("t must lie in [0, 1]")
    return x2, t_arr, single


def _forward(base: DenoiserParams, stack: AdapterStack, x2: np.ndarray, t_arr: np.ndarray) -> tuple[np.ndarray, _Cache]:
    cache = _Cache()
    h = np.concatenate([x2, time_features(t_arr, base.n_freq)], axis=1)
    last = len(base.layers) - 1
    for i, layer in enumerate(base.layers):
        W = _effective_weight(base, stack, i)
        cache.inputs.append(h)
        cache.weights.append(W)
        z = h @ W.T + layer.b
        if i < last:
            h = np.tanh(z)
            cache.acts.append(h)
        else:
            h = z
    return h, cache


def predict_noise(base: DenoiserParams, stack: AdapterStack, x_t, t) -> np.ndarray:
    """Network output for ``x_t`` (shape ``[d]`` or ``[n, d]``) at time ``t`` (scalar or ``[n]``)."""
    x2, t_arr, single = _prepare(base, x_t, t)
    out, _ = _forward(base, stack, x2, t_arr)
    check_finite(out, "prediction")
    return out[0] if single else out


def _backward(base: DenoiserParams, stack: AdapterStack, cache: _Cache, grad_out: np.ndarray,
              trainable: Sequence[int], want_base: bool = False):
    n_layers = len(base.layers)
    grads = {i: ([None] * n_layers, [None] * n_layers) for i in trainable}
    base_grads = [None] * n_layers
    G = grad_out
    for l in range(n_layers - 1, -1, -1):
        h = cache.inputs[l]
        dW = G.T @ h
        if want_base:
            base_grads[l] = (dW, G.sum(axis=0))
        for i in trainable:
            entry = stack[i]
            s = entry.effective_scale
            A, B = entry.adapter.A[l], entry.adapter.B[l]
            if s == 0.0:
                grads[i][0][l] = np.zeros_like(A)
                grads[i][1][l] = np.zeros_like(B)
                continue
            grads[i][0][l] = s * (B.T @ dW)
            grads[i][1][l] = s * (dW @ A.T)
        if l > 0:
            G = (G @ cache.weights[l]) * (1.0 - cache.acts[l - 1] ** 2)
    return grads, base_grads


def backprop_adapters(base: DenoiserParams, stack: AdapterStack, x_t, t, grad_out, trainable: Sequence[int]):
    """Gradients of ``sum(output * grad_out)`` with respect to the trainable adapters.

    ``trainable`` holds indices into ``stack``. Returns ``{index: (dA_list, dB_list)}``;
    adapters not listed get no gradient entry at all.
    """
    trainable = list(trainable)
    if not trainable:
        raise ValueError("trainable adapter set is empty")
    if any(i < 0 or i >= len(stack) for i in trainable):
        raise IndexError("trainable index outside the stack")
    x2, t_arr, single = _prepare(base, x_t, t)
    g = as_tensor(grad_out, "grad_out").reshape(x2.shape) if np.shape(grad_out) == np.shape(x_t) else None
    if g is None:
        raise ValueError(f"grad_out shape {np.shape(grad_out)} != output shape {np.shape(x_t)}")
    _, cache = _forward(base, stack, x2, t_arr)
    grads, _ = _backward(base, stack, cache, g, trainable)
    return grads


def forward_backward(base: DenoiserParams, stack: AdapterStack, x2: np.ndarray, t_arr: np.ndarray,
                     grad_fn, trainable: Sequence[int] = (), want_base: bool = False):
    """One pass: ``grad_fn(pred) -> (loss, dloss/dpred)`` then backprop.

    Used by the loss functions so the prediction is not recomputed.
    """
    pred, cache = _forward(base, stack, x2, t_arr)
    check_finite(pred, "prediction")
    loss, g = grad_fn(pred)
    grads, base_grads = _backward(base, stack, cache, g, list(trainable), want_base)
    return loss, grads, base_grads
