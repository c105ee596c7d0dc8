"""Tensor helpers, a counter-based Gaussian RNG and a finite-difference gradient oracle.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order.

The random stream is SplitMix64 evaluated at ``seed + (counter + 1) * 0x9E3779B97F4A7C15``
(mod 2**64), so draw ``i`` of a stream is a pure function of ``(seed, i)``. Uniforms take
the top 53 bits of each 64-bit output. Normals use the Box-Muller transform on consecutive
uniform pairs ``(u1, u2)``: ``sqrt(-2 ln u1) cos(2 pi u2)`` then ``sqrt(-2 ln u1) sin(2 pi u2)``,
where ``u1`` lies in ``(0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53


class NonFiniteError(ValueError):
    """Raised when an operation would produce NaN or Inf."""


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return x


def as_tensor(x, what: str = "tensor") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    return check_finite(arr, what)


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise ValueError(f"shape must be nonempty with all dims >= 1, got {shape}")
    return shape


def _splitmix64(seed: int, start: int, count: int) -> np.ndarray:
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK64) + idx * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@dataclass
class Rng:
    """Counter-based generator state. Every draw advances ``counter`` by the number of
    64-bit words consumed."""

    seed: int
    counter: int = 0

    def _words(self, count: int) -> np.ndarray:
        out = _splitmix64(self.seed, self.counter, count)
        self.counter += count
        return out

    def uniform(self, shape: Sequence[int]) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        shape = _check_shape(shape)
        words = self._words(int(np.prod(shape)))
        return ((words >> np.uint64(11)).astype(np.float64) * _TWO_M53).reshape(shape)

    def integers(self, high: int, size: int) -> np.ndarray:
        if high < 1:
            raise ValueError("high must be >= 1")
        u = self.uniform((size,))
        return np.minimum((u * high).astype(np.int64), high - 1)

    def normal(self, shape: Sequence[int]) -> np.ndarray:
        shape = _check_shape(shape)
        n = int(np.prod(shape))
        n_pairs = (n + 1) // 2
        words = self._words(2 * n_pairs).reshape(n_pairs, 2)
        u1 = ((words[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_M53
        u2 = (words[:, 1] >> np.uint64(11)).astype(np.float64) * _TWO_M53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty((n_pairs, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        return z.reshape(-1)[:n].reshape(shape)

    def child(self, tag: int) -> "Rng":
        """Independent stream keyed on this seed and ``tag``; does not advance self."""
        key = int(_splitmix64(self.seed ^ 0x5851F42D4C957F2D, int(tag) & _MASK64, 1)[0])
        return Rng(key)


def gauss(rng: Rng, shape: Sequence[int]) -> np.ndarray:
    """I.i.d. standard normal tensor drawn from ``rng``."""
    return rng.normal(shape)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar function ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm relative error ``|a - b| / max(|b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))
