"""Edit metrics against synthetic ground truth, and the experiment harnesses built on them.

``identity_drift`` is the norm of the part of the edit orthogonal to the ground-truth
direction, relative to the norm of the original. ``alignment`` is the cosine between the
edit and that direction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields, replace
from typing import Iterable, Sequence

import numpy as np

from pairedit import datagen as D
from pairedit import sampler as S
from pairedit.netmodel import DenoiserParams, LoraAdapter, StackEntry
from pairedit.trainer import METHODS, TrainConfig, train_pairedit

EVAL_SEEDS = tuple(range(1000, 1064))
SWEEP_SCALES = (0.0, 0.5, 1.0, 1.5)
_MATCH_GRID = tuple(np.round(np.arange(0.0, 3.0001, 0.125), 6))


def projection(original, edited, g) -> float:
    return float(np.dot(np.asarray(edited) - np.asarray(original), g))


def identity_drift(original, edited, g) -> float:
    original = np.asarray(original, dtype=np.float64)
    d = np.asarray(edited, dtype=np.float64) - original
    perp = d - np.dot(d, g) * np.asarray(g)
    return float(np.linalg.norm(perp) / np.linalg.norm(original))


def alignment(original, edited, g) -> float:
    """Cosine of the edit with ``g``; 0.0 for a zero-length edit (see ``is_null_edit``)."""
    d = np.asarray(edited, dtype=np.float64) - np.asarray(original, dtype=np.float64)
    n = np.linalg.norm(d)
    if n == 0.0:
        return 0.0
    return float(np.clip(np.dot(d, g) / n, -1.0, 1.0))


def is_null_edit(original, edited) -> bool:
    return bool(np.all(np.asarray(edited) == np.asarray(original)))


def truth_directions(spec: D.PairSpec, sources: np.ndarray, masks: np.ndarray | None = None) -> np.ndarray:
    """Unit direction ``semantic(x) - x`` for each source row; zero rows where the change is zero."""
    delta = D.apply_semantic(spec, sources, masks) - sources
    norms = np.linalg.norm(delta, axis=1, keepdims=True)
    return np.divide(delta, norms, out=np.zeros_like(delta), where=norms > 0)


@dataclass(frozen=True)
class EditRow:
    semantic: str
    method: str
    scale: float
    seed: int
    identity_drift: float
    alignment: float
    projection: float
    flag: str = ""


_HEADER = [f.name for f in fields(EditRow)]


@dataclass
class EditReport:
    rows: list[EditRow]

    def sorted(self) -> "EditReport":
        return EditReport(sorted(self.rows, key=lambda r: (r.method, r.semantic, r.scale, r.seed)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_HEADER)
        for r in self.rows:
            w.writerow([r.semantic, r.method, repr(float(r.scale)), r.seed, repr(float(r.identity_drift)),
                        repr(float(r.alignment)), repr(float(r.projection)), r.flag])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EditReport":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header != _HEADER:
            raise ValueError(f"unexpected report header {header}")
        rows = []
        for rec in reader:
            sem, method, scale, seed, drift, align, proj, flag = rec
            rows.append(EditRow(sem, method, float(scale), int(seed), float(drift), float(align), float(proj), flag))
        return cls(rows)

    def select(self, **kw) -> list[EditRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def mean(self, attr: str, **kw) -> float:
        sel = self.select(**kw)
        return float(np.mean([getattr(r, attr) for r in sel]))


def score_edits(semantic: str, method: str, scale: float, seeds: Sequence[int], originals: np.ndarray,
                edited: np.ndarray, directions: np.ndarray) -> list[EditRow]:
    rows = []
    for seed, o, e, g in zip(seeds, originals, edited, directions):
        flag = "null_edit" if is_null_edit(o, e) else ""
        if not np.any(g):
            flag = "no_direction"
            rows.append(EditRow(semantic, method, float(scale), int(seed), 0.0, 0.0, 0.0, flag))
            continue
        rows.append(EditRow(semantic, method, float(scale), int(seed), identity_drift(o, e, g),
                            alignment(o, e, g), projection(o, e, g), flag))
    return rows


@dataclass
class EvalSet:
    spec: D.PairSpec
    seeds: tuple[int, ...]
    sources: np.ndarray
    directions: np.ndarray
    noise: np.ndarray

    @classmethod
    def build(cls, spec: D.PairSpec, seeds: Sequence[int] = EVAL_SEEDS) -> "EvalSet":
        seeds = tuple(int(s) for s in seeds)
        sources, masks = D.make_eval_set(spec, seeds)
        return cls(spec, seeds, sources, truth_directions(spec, sources, masks),
                   S.initial_noise(seeds, spec.data_dim))


def _edit(base, semantic: LoraAdapter, ev: EvalSet, cfg: S.SampleConfig, scale: float,
          content: LoraAdapter | None = None) -> tuple[np.ndarray, np.ndarray]:
    fixed = [StackEntry(content)] if content is not None else []
    original = S.edit_sources(base, fixed, ev.sources, replace(cfg, scale=0.0), x1=ev.noise)
    if scale == 0.0:
        return original, original.copy()
    stack = [*fixed, StackEntry(semantic, semantic=True)]
    return original, S.edit_sources(base, stack, ev.sources, replace(cfg, scale=scale), x1=ev.noise)


def scale_sweep(base: DenoiserParams, semantic: LoraAdapter, ev: EvalSet, scales: Iterable[float] = SWEEP_SCALES,
                cfg: S.SampleConfig = S.SampleConfig(), method: str = "full", name: str | None = None,
                content: LoraAdapter | None = None) -> EditReport:
    """Edit every held-out source at each scale; one row per (scale, seed)."""
    name = name or ev.spec.semantic
    rows = []
    for s in scales:
        o, e = _edit(base, semantic, ev, cfg, float(s), content)
        rows += score_edits(name, method, s, ev.seeds, o, e, ev.directions)
    return EditReport(rows).sorted()


def monotone_fraction(report: EditReport, scales: Sequence[float]) -> float:
    """Share of seeds whose projection strictly increases across ``scales``."""
    seeds = sorted({r.seed for r in report.rows})
    ok = 0
    for seed in seeds:
        proj = [report.select(seed=seed, scale=float(s))[0].projection for s in scales]
        ok += all(b > a for a, b in zip(proj, proj[1:]))
    return ok / len(seeds)


@dataclass
class MethodResult:
    method: str
    content: LoraAdapter | None
    semantic: LoraAdapter


def _mean_at(base, res: MethodResult, ev: EvalSet, cfg: S.SampleConfig, scale: float):
    o, e = _edit(base, res.semantic, ev, cfg, scale)
    rows = score_edits(ev.spec.semantic, res.method, scale, ev.seeds, o, e, ev.directions)
    return rows, float(np.mean([r.projection for r in rows]))


def match_scale(base, res: MethodResult, ev: EvalSet, cfg: S.SampleConfig, target: float,
                grid: Sequence[float] = _MATCH_GRID) -> tuple[float, bool]:
    """Smallest scale whose mean projection reaches ``target`` (linear interpolation on ``grid``).

    If no grid interval brackets the target, the grid scale with the closest projection is
    returned with ``False``.
    """
    prev_s, prev_p = None, None
    best = (np.inf, float(grid[0]))
    for s in grid:
        s = float(s)
        _, p = _mean_at(base, res, ev, cfg, s)
        if prev_p is not None and p >= target > prev_p:
            return prev_s + (s - prev_s) * (target - prev_p) / (p - prev_p), True
        best = min(best, (abs(p - target), s))
        prev_s, prev_p = s, p
    return best[1], False


def ablation_table(base: DenoiserParams, pairs: D.PairSet, cfg: TrainConfig, ev: EvalSet,
                   sample_cfg: S.SampleConfig = S.SampleConfig(), methods: Sequence[str] = METHODS,
                   name: str | None = None) -> EditReport:
    """Train every method on the same pairs and seed, then compare at matched edit magnitude.

    The full method is evaluated at scale 1; every other method at the scale where its mean
    projection onto the ground truth equals the full method's. One row per method holding
    the means over the eval set (``seed`` is the training seed).
    """
    name = name or pairs.spec.semantic
    results = [MethodResult(m, *train_pairedit(base, pairs.x0A, pairs.x0B, cfg, method=m)) for m in methods]
    full = next(r for r in results if r.method == "full")
    _, target = _mean_at(base, full, ev, sample_cfg, 1.0)
    rows = []
    for res in results:
        if res.method == "full":
            scale, matched = 1.0, True
        else:
            scale, matched = match_scale(base, res, ev, sample_cfg, target)
        per_seed, _ = _mean_at(base, res, ev, sample_cfg, scale)
        rows.append(EditRow(name, res.method, float(scale), int(cfg.seed),
                            float(np.mean([r.identity_drift for r in per_seed])),
                            float(np.mean([r.alignment for r in per_seed])),
                            float(np.mean([r.projection for r in per_seed])),
                            "" if matched else "unmatched"))
    return EditReport(rows).sorted()


def fusion_compare(base: DenoiserParams, rec: LoraAdapter, sem: LoraAdapter, gammas: Sequence[float],
                   x_real: np.ndarray, g: np.ndarray, seeds: Sequence[int] = EVAL_SEEDS,
                   cfg: S.SampleConfig = S.SampleConfig(), name: str = "fusion", outputs: dict | None = None) -> EditReport:
    """Guidance-style fusion versus linear weight merging, both applied on top of a
    reconstruction adapter for ``x_real``. ``g`` is the ground-truth direction for ``x_real``.

    ``outputs`` (if given) receives the raw samples keyed ``"original"`` and ``(method, gamma)``.
    """
    x1 = S.initial_noise(seeds, base.dim)
    original = S.generate_fused(base, rec, [sem], [0.0], cfg, x1=x1)
    if outputs is not None:
        outputs["original"] = original
    directions = np.tile(np.asarray(g, dtype=np.float64), (len(seeds), 1))
    rows = []
    for gamma in gammas:
        fused = S.generate_fused(base, rec, [sem], [gamma], cfg, x1=x1)
        merged = S.generate_merged(base, rec, S.linear_merge(rec, sem, gamma), cfg, x1=x1)
        rows += score_edits(name, "fusion", gamma, seeds, original, fused, directions)
        rows += score_edits(name, "linear", gamma, seeds, original, merged, directions)
        if outputs is not None:
            outputs[("fusion", gamma)] = fused
            outputs[("linear", gamma)] = merged
    return EditReport(rows).sorted()
