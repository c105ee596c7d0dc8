"""Fast invariant suite behind ``pairedit verify``: schedule algebra, gradients, no-op adapters,
stop-gradient, delayed activation and fusion endpoints."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from pairedit import losses as L
from pairedit import sampler as S
from pairedit.netmodel import DenoiserParams, LoraAdapter, StackEntry, init_adapter, init_base, predict_noise
from pairedit.schedule import STANDARD, content_preserving, paired_delta
from pairedit.tensorcore import Rng, finite_diff_grad, rel_err
from pairedit.trainer import Adam

LOSS_KINDS = ("content", "semantic", "A", "B", "C")


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail}"


def random_adapter(rng: Rng, base: DenoiserParams, rank: int) -> LoraAdapter:
    """Adapter with both factors random (a fresh one has B = 0, which hides dA errors)."""
    ad = init_adapter(rng.child(0), base, rank, init_scale=0.5)
    return LoraAdapter(ad.A, [0.5 * rng.child(1 + l).normal(b.shape) for l, b in enumerate(ad.B)], ad.scale)


def random_batch(rng: Rng, n: int, dim: int) -> L.PairedBatch:
    x0A = rng.child(0).normal((n, dim))
    x0B = x0A + rng.child(1).normal((n, dim))
    t = 0.05 + 0.9 * rng.child(3).uniform((n,))
    return L.PairedBatch(x0A, x0B, rng.child(2).normal((n, dim)), t)


def loss_fn(kind: str, base: DenoiserParams, content: LoraAdapter, batch: L.PairedBatch,
            cfg: L.LossConfig) -> Callable[[LoraAdapter], tuple[float, tuple]]:
    """The loss ``kind`` as a function of the adapter it trains."""
    if kind == "content":
        return lambda ad: L.content_loss(base, ad, batch, cfg)
    if kind == "semantic":
        return lambda ad: L.semantic_loss(base, ad, batch, cfg, content=content)
    if kind == "A":
        return lambda ad: L.variant_a_loss(base, ad, batch, cfg)
    if kind == "B":
        return lambda ad: L.variant_b_loss(base, ad, batch, cfg)
    if kind == "C":
        return lambda ad: L.variant_c_loss(base, content, ad, batch, cfg)
    raise ValueError(f"unknown loss kind {kind!r}")


def gradient_rel_err(kind: str, seed: int, dim: int = 4, width: int = 16, rank: int = 2, n: int = 3) -> float:
    """Max-norm relative error between analytic and central-difference adapter gradients."""
    rng = Rng(seed)
    base = init_base(rng.child(0), dim, (width, width))
    content = random_adapter(rng.child(1), base, rank)
    adapter = random_adapter(rng.child(2), base, rank)
    batch = random_batch(rng.child(3), n, dim)
    cfg = L.LossConfig(beta=1.5)
    f = loss_fn(kind, base, content, batch, cfg)
    _, (dA, dB) = f(adapter)
    analytic = np.concatenate([g.reshape(-1) for g in (*dA, *dB)])
    numeric = finite_diff_grad(lambda v: f(adapter.with_vector(v))[0], adapter.to_vector())
    return rel_err(analytic, numeric)


def check_schedule_algebra(n_grid: int = 10, n_pairs: int = 10, seed: int = 0) -> CheckResult:
    rng = Rng(seed)
    worst = 0.0
    for p in range(n_pairs):
        r = rng.child(p)
        x0A, x0B, eps = r.normal((3, 8))
        beta = 0.5 + 3.0 * float(r.uniform((1,))[0])
        for t in np.linspace(0.1, 1.0, n_grid):
            for dt in np.linspace(0.01, 0.1, n_grid):
                cp = paired_delta(x0A, x0B, eps, t, dt, content_preserving(beta))
                st = paired_delta(x0A, x0B, eps, t, dt, STANDARD)
                worst = max(worst, float(np.max(np.abs(cp - (x0A - x0B)))),
                            float(np.max(np.abs(st - (1.0 - t + dt) * (x0A - x0B)))))
    return CheckResult("schedule_algebra", worst < 1e-12, f"max abs err {worst:.3g}")


def check_noop(seed: int = 0) -> CheckResult:
    rng = Rng(seed)
    base = init_base(rng.child(0), 8, (16, 16))
    x, t = rng.child(1).normal((5, 8)), rng.child(2).uniform((5,))
    ref = predict_noise(base, [], x, t)
    fresh = init_adapter(rng.child(3), base, 2)
    trained = random_adapter(rng.child(4), base, 2)
    d1 = float(np.max(np.abs(predict_noise(base, [StackEntry(fresh)], x, t) - ref)))
    d2 = float(np.max(np.abs(predict_noise(base, [StackEntry(trained, scale=0.0)], x, t) - ref)))
    return CheckResult("lora_noop", d1 == 0.0 and d2 == 0.0, f"fresh {d1:.3g}, scale-0 {d2:.3g}")


def check_gradients(points: int = 2) -> CheckResult:
    worst = max(gradient_rel_err(k, s) for k in LOSS_KINDS for s in range(points))
    return CheckResult("gradients", worst < 1e-4, f"max rel err {worst:.3g} over {len(LOSS_KINDS) * points} points")


def check_stop_gradient(steps: int = 10, seed: int = 0) -> CheckResult:
    rng = Rng(seed)
    base = init_base(rng.child(0), 4, (16, 16))
    content = random_adapter(rng.child(1), base, 2)
    semantic = init_adapter(rng.child(2), base, 2)
    before = content.to_vector().copy()
    opt = Adam(semantic.params(), 1e-2)
    cfg = L.LossConfig()
    for i in range(steps):
        _, (dA, dB) = L.semantic_loss(base, semantic, random_batch(rng.child(10 + i), 4, 4), cfg, content=content)
        opt.step([*dA, *dB])
    same = np.array_equal(before, content.to_vector())
    return CheckResult("stop_gradient", same, f"content unchanged after {steps} semantic steps: {same}")


def check_delayed_activation(seed: int = 0) -> CheckResult:
    rng = Rng(seed)
    base = init_base(rng.child(0), 4, (16, 16))
    sem = random_adapter(rng.child(1), base, 2)
    cfg = S.SampleConfig(num_steps=8, off_steps=4, scale=1.0, seed=seed)
    on, off = S.Trajectory([], []), S.Trajectory([], [])
    S.generate(base, [StackEntry(sem, semantic=True)], cfg, n=3, trajectory=on)
    S.generate(base, [StackEntry(sem, semantic=True)], S.SampleConfig(8, 4, 0.0, seed=seed), n=3, trajectory=off)
    k = cfg.off_steps
    same = all(np.array_equal(a, b) for a, b in zip(on.x[:k + 1], off.x[:k + 1]))
    never = S.generate(base, [StackEntry(sem, semantic=True)], S.SampleConfig(8, 8, 1.0, seed=seed), n=3)
    plain = S.generate(base, [], S.SampleConfig(8, 8, 0.0, seed=seed), n=3)
    ok = same and np.array_equal(never, plain) and not np.array_equal(on.x[-1], off.x[-1])
    return CheckResult("delayed_activation", ok, f"first {k} steps identical: {same}")


def check_fusion(seed: int = 0) -> CheckResult:
    rng = Rng(seed)
    base = init_base(rng.child(0), 4, (16, 16))
    rec, sem = random_adapter(rng.child(1), base, 2), random_adapter(rng.child(2), base, 2)
    x, t = rng.child(3).normal((5, 4)), 0.4
    e_rec = predict_noise(base, [StackEntry(rec)], x, t)
    e_both = predict_noise(base, [StackEntry(rec), StackEntry(sem)], x, t)
    ends = np.array_equal(S.fused_noise(base, rec, sem, x, t, 0.0), e_rec) and \
        np.array_equal(S.fused_noise(base, rec, sem, x, t, 1.0), e_both)
    affine = max(float(np.max(np.abs(S.fused_noise(base, rec, sem, x, t, g) - ((1 - g) * e_rec + g * e_both))))
                 for g in (0.1, 0.3, 0.5, 0.75, 0.9))
    return CheckResult("fusion_endpoints", ends and affine == 0.0, f"endpoints exact: {ends}, affine err {affine:.3g}")


ALL_CHECKS = (check_schedule_algebra, check_noop, check_gradients, check_stop_gradient,
              check_delayed_activation, check_fusion)


def run_all() -> list[CheckResult]:
    return [c() for c in ALL_CHECKS]
