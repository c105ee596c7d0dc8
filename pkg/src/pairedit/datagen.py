"""Synthetic paired datasets with exact, known semantic transforms."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping

import numpy as np

from pairedit.tensorcore import Rng

SEMANTICS = ("offset", "linear", "region_brighten", "brightness", "none")

DEFAULT_AMOUNT = {"offset": 1.0, "linear": 1.0, "region_brighten": 0.6, "brightness": 0.4, "none": 0.0}

_MIX_STD = 0.35
# image pixels live in [-1, 1]; to_unit_range maps them to [0, 1] for display
_BACKGROUND = -1.0
_DISC = 0.4


@dataclass(frozen=True)
class PairSpec:
    mode: str = "vector"
    dim: int = 8
    height: int = 16
    width: int = 16
    semantic: str = "offset"
    amount: float | None = None
    n_pairs: int = 3
    seed: int = 0
    n_components: int = 3
    dist_seed: int = 7

    def __post_init__(self):
        if self.mode not in ("vector", "image"):
            raise ValueError(f"mode must be 'vector' or 'image', got {self.mode!r}")
        if self.semantic not in SEMANTICS:
            raise ValueError(f"unknown semantic {self.semantic!r}")
        if self.mode == "vector" and self.semantic in ("region_brighten",):
            raise ValueError("region_brighten needs image mode")
        if self.mode == "image" and self.semantic == "linear":
            raise ValueError("linear semantic is vector-only")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        if self.amount is None:
            object.__setattr__(self, "amount", DEFAULT_AMOUNT[self.semantic])

    @property
    def data_dim(self) -> int:
        return self.dim if self.mode == "vector" else self.height * self.width

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "PairSpec":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in values.items():
            if k not in kinds:
                raise KeyError(f"unknown spec key {k!r}")
            if isinstance(v, str):
                if kinds[k] == "int":
                    v = int(v)
                elif kinds[k] == "float | None":
                    v = None if v in ("", "none") else float(v)
            out[k] = v
        return cls(**out)

    def to_mapping(self) -> dict[str, Any]:
        return asdict(self)


# Benchmark suites and the beta each one trains with (1 for local edits, 3 for global ones).
SUITES = {
    "V1": PairSpec(mode="vector", semantic="offset"),
    "V2": PairSpec(mode="vector", semantic="linear"),
    "I1": PairSpec(mode="image", semantic="region_brighten"),
    "I2": PairSpec(mode="image", semantic="brightness"),
}
SUITE_BETA = {"V1": 1.0, "V2": 1.0, "I1": 1.0, "I2": 3.0}


@dataclass
class PairSet:
    x0A: np.ndarray
    x0B: np.ndarray
    g: np.ndarray | None
    spec: PairSpec

    @property
    def has_direction(self) -> bool:
        return self.g is not None


def _mixture(spec: PairSpec) -> np.ndarray:
    return 1.0 + 1.5 * Rng(spec.dist_seed).normal((spec.n_components, spec.dim))


def offset_vector(spec: PairSpec) -> np.ndarray:
    d = Rng(spec.dist_seed).child(1).normal((spec.dim,))
    return spec.amount * d / np.linalg.norm(d)


def linear_map(spec: PairSpec) -> np.ndarray:
    R = Rng(spec.dist_seed).child(2).normal((spec.dim, spec.dim))
    return np.eye(spec.dim) + 0.3 * spec.amount * R / np.sqrt(spec.dim)


def mixture_mean(spec: PairSpec) -> np.ndarray:
    return _mixture(spec).mean(axis=0)


def mixture_var(spec: PairSpec) -> np.ndarray:
    means = _mixture(spec)
    return means.var(axis=0) + _MIX_STD**2


def _sample_vectors(spec: PairSpec, rng: Rng, n: int) -> np.ndarray:
    means = _mixture(spec)
    comp = rng.integers(spec.n_components, n)
    return means[comp] + _MIX_STD * rng.normal((n, spec.dim))


def _sample_discs(spec: PairSpec, rng: Rng, n: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    u = rng.uniform((n, 3))
    images = np.empty((n, spec.height * spec.width))
    masks = np.empty_like(images)
    for i in range(n):
        cy = 4.0 + u[i, 0] * (spec.height - 8.0)
        cx = 4.0 + u[i, 1] * (spec.width - 8.0)
        r = 2.5 + 2.0 * u[i, 2]
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.float64)
        masks[i] = mask.reshape(-1)
        images[i] = np.where(mask > 0, _DISC, _BACKGROUND).reshape(-1)
    return images, masks


def sample_sources(spec: PairSpec, rng: Rng, n: int) -> tuple[np.ndarray, np.ndarray | None]:
    if n < 1:
        raise ValueError("need n >= 1 samples")
    if spec.mode == "vector":
        return _sample_vectors(spec, rng, n), None
    return _sample_discs(spec, rng, n)


def apply_semantic(spec: PairSpec, x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    if spec.semantic == "offset":
        return x + offset_vector(spec)
    if spec.semantic == "linear":
        return x @ linear_map(spec).T
    if spec.semantic == "brightness":
        return x + spec.amount
    if spec.semantic == "region_brighten":
        if mask is None or np.any(mask.sum(axis=-1) == 0):
            raise ValueError("region_brighten needs a nonempty mask for every image")
        return x + spec.amount * mask
    return x.copy()


def to_unit_range(images: np.ndarray) -> np.ndarray:
    return (np.asarray(images) + 1.0) / 2.0


def direction(x0A: np.ndarray, x0B: np.ndarray) -> np.ndarray | None:
    """Unit mean of ``x0B - x0A``; ``None`` when the pairs carry no change."""
    m = np.mean(x0B - x0A, axis=0)
    norm = np.linalg.norm(m)
    if norm == 0.0:
        return None
    return m / norm


def make_pairs(spec: PairSpec) -> PairSet:
    x0A, mask = sample_sources(spec, Rng(spec.seed).child(10), spec.n_pairs)
    x0B = apply_semantic(spec, x0A, mask)
    return PairSet(x0A, x0B, direction(x0A, x0B), spec)


def make_pretrain_set(spec: PairSpec, n: int, seed: int | None = None) -> np.ndarray:
    """``n`` i.i.d. sources from the content distribution of ``spec``."""
    seed = spec.seed if seed is None else seed
    x, _ = sample_sources(spec, Rng(seed).child(20), n)
    return x


def make_eval_set(spec: PairSpec, seeds) -> tuple[np.ndarray, np.ndarray | None]:
    """Held-out sources, one per seed."""
    rows, masks = [], []
    for s in seeds:
        x, m = sample_sources(spec, Rng(int(s)).child(30), 1)
        rows.append(x[0])
        masks.append(None if m is None else m[0])
    return np.stack(rows), (None if masks[0] is None else np.stack(masks))
