"""Acceptance criteria 1-10, each at its stated tolerance and runtime budget.

Run alone with ``python3 -m pytest tests/test_acceptance.py -v``; the terminal summary ends
with one PASS/FAIL line per criterion.
"""

import json
import time
from pathlib import Path

import numpy as np

from pairedit import cli
from pairedit import datagen as D
from pairedit import evaluation as E
from pairedit import losses as L
from pairedit import sampler as S
from pairedit.checks import LOSS_KINDS, gradient_rel_err, random_adapter, random_batch
from pairedit.netmodel import StackEntry, init_adapter, init_base, predict_noise
from pairedit.schedule import STANDARD, content_preserving, paired_delta
from pairedit.tensorcore import Rng
from pairedit.trainer import Adam, PretrainConfig, TrainConfig, default_pretrain, pretrain_base, train_pairedit

REFERENCE = json.loads((Path(__file__).parent / "reference" / "v1_reference.json").read_text())


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_1_schedule_algebra(acceptance):
    with Timer() as tm:
        worst_cp = worst_std = 0.0
        grid = [(t, dt) for t in np.linspace(0.1, 1.0, 10) for dt in np.linspace(0.005, 0.1, 10)]
        for p in range(10):
            x0A, x0B, eps = Rng(p).normal((3, 8))
            beta = 0.5 + 2.5 * Rng(100 + p).uniform((1,))[0]
            for t, dt in grid:
                cp = paired_delta(x0A, x0B, eps, t, dt, content_preserving(beta))
                st = paired_delta(x0A, x0B, eps, t, dt, STANDARD)
                worst_cp = max(worst_cp, float(np.max(np.abs(cp - (x0A - x0B)))))
                worst_std = max(worst_std, float(np.max(np.abs(st - (1.0 - t + dt) * (x0A - x0B)))))
    ok = worst_cp < 1e-12 and worst_std < 1e-12 and tm.seconds < 1.0
    acceptance(1, ok, f"cp err {worst_cp:.2e}, standard err {worst_std:.2e}, {tm.seconds:.2f}s")


def test_2_lora_noop(acceptance):
    with Timer() as tm:
        base = init_base(Rng(0), 8, (64, 64))
        x, t = Rng(1).normal((32, 8)), Rng(2).uniform((32,))
        ref = predict_noise(base, [], x, t)
        fresh = init_adapter(Rng(3), base, 4)
        trained = random_adapter(Rng(4), base, 4)
        d_fresh = float(np.max(np.abs(predict_noise(base, [StackEntry(fresh, scale=7.0)], x, t) - ref)))
        d_zero = float(np.max(np.abs(predict_noise(base, [StackEntry(trained, scale=0.0)], x, t) - ref)))
    ok = d_fresh == 0.0 and d_zero == 0.0 and tm.seconds < 1.0
    acceptance(2, ok, f"fresh delta {d_fresh}, scale-0 delta {d_zero}, {tm.seconds:.2f}s")


def test_3_gradient_correctness(acceptance):
    with Timer() as tm:
        errs = {k: max(gradient_rel_err(k, 1000 + s, width=16, rank=2) for s in range(20)) for k in LOSS_KINDS}
    worst = max(errs.values())
    ok = worst < 1e-4 and tm.seconds < 30.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    acceptance(3, ok, f"max rel err per loss: {detail}; {tm.seconds:.1f}s")


def test_4_stop_gradient(acceptance):
    with Timer() as tm:
        base = init_base(Rng(0), 8, (64, 64))
        content = random_adapter(Rng(1), base, 4)
        semantic = init_adapter(Rng(2), base, 4)
        before = [p.tobytes() for p in content.params()]
        opt = Adam(semantic.params(), 2e-3)
        for step in range(50):
            _, (dA, dB) = L.semantic_loss(base, semantic, random_batch(Rng(10 + step), 16, 8), L.LossConfig(),
                                          content=content)
            opt.step([*dA, *dB])
        same = before == [p.tobytes() for p in content.params()]
        moved = semantic.norm() > 0
    ok = same and moved and tm.seconds < 10.0
    acceptance(4, ok, f"content bitwise unchanged: {same}, semantic moved: {moved}, {tm.seconds:.2f}s")


def test_5_base_pretraining(acceptance):
    with Timer() as tm:
        spec = D.SUITES["V1"]
        cfg = PretrainConfig(steps=2000, seed=0)
        data = D.make_pretrain_set(spec, cfg.n_samples, cfg.seed)
        base = pretrain_base(data, cfg)
        x = S.generate(base, [], S.SampleConfig(seed=0), n=4096)
    mean_err = float(np.linalg.norm(x.mean(0) - data.mean(0)) / np.linalg.norm(data.mean(0)))
    ratio = x.var(0) / data.var(0)
    ok = mean_err <= 0.10 and np.all(np.abs(ratio - 1.0) <= 0.20) and tm.seconds < 180.0
    acceptance(5, ok, f"mean rel err {mean_err:.3f}, variance ratio {ratio.min():.3f}..{ratio.max():.3f}, "
                      f"{tm.seconds:.1f}s")


def test_6_semantic_learning(acceptance, v1_base):
    with Timer() as tm:
        ev = E.EvalSet.build(D.SUITES["V1"])
        got = {}
        for n in (3, 1):
            pairs = D.make_pairs(D.PairSpec(n_pairs=n))
            _, sem = train_pairedit(v1_base, pairs.x0A, pairs.x0B, TrainConfig(steps=500))
            rep = E.scale_sweep(v1_base, sem, ev, scales=(1.0,))
            got[n] = (rep.mean("alignment"), rep.mean("identity_drift"))
    tau3 = REFERENCE["runs"]["pairs_3"]["identity_drift"]
    tau1 = REFERENCE["runs"]["pairs_1"]["identity_drift"]
    ok = (got[3][0] >= 0.9 and got[3][1] <= tau3 and got[1][0] >= 0.8 and got[1][1] <= tau1
          and tm.seconds < 300.0)
    acceptance(6, ok, f"3 pairs: alignment {got[3][0]:.4f}, drift {got[3][1]:.4f} (tau {tau3:.4f}); "
                      f"1 pair: alignment {got[1][0]:.4f}, drift {got[1][1]:.4f} (tau {tau1:.4f}); {tm.seconds:.1f}s")


def test_7_monotone_editing(acceptance, v1_base):
    with Timer() as tm:
        pairs = D.make_pairs(D.SUITES["V1"])
        _, sem = train_pairedit(v1_base, pairs.x0A, pairs.x0B, TrainConfig())
        scales = (0.0, 0.5, 1.0, 1.5)
        rep = E.scale_sweep(v1_base, sem, E.EvalSet.build(D.SUITES["V1"]), scales)
        frac = E.monotone_fraction(rep, scales)
    ok = frac >= 0.95 and len({r.seed for r in rep.rows}) == 64 and tm.seconds < 120.0
    means = ", ".join(f"{rep.mean('projection', scale=s):.3f}" for s in scales)
    acceptance(7, ok, f"{frac:.1%} of 64 seeds strictly increasing (mean projections {means}), {tm.seconds:.1f}s")


def test_8_ablation_ordering(acceptance, v1_base):
    with Timer() as tm:
        outcome, parts = True, []
        for name in ("V1", "I1"):
            spec = D.SUITES[name]
            if spec.mode == "vector":
                base = v1_base
            else:
                pcfg = default_pretrain(spec.mode)
                base = pretrain_base(D.make_pretrain_set(spec, pcfg.n_samples, 0), pcfg)
            cfg = TrainConfig(seed=0).with_loss(beta=D.SUITE_BETA[name])
            rep = E.ablation_table(base, D.make_pairs(spec), cfg, E.EvalSet.build(spec), name=name)
            print(rep.to_csv())
            full = rep.select(method="full")[0]
            for m in ("B", "C"):
                v = rep.select(method=m)[0]
                matched = full.alignment >= v.alignment - 0.05
                ok = full.identity_drift < v.identity_drift and matched
                outcome &= ok
                parts.append(f"{name} full {full.identity_drift:.3f} vs {m} {v.identity_drift:.3f} "
                             f"(align {full.alignment:.2f}/{v.alignment:.2f}) {'ok' if ok else 'VIOLATED'}")
            a = rep.select(method="A")[0]
            parts.append(f"{name} A drift {a.identity_drift:.3f} align {a.alignment:.2f} (not asserted)")
    acceptance(8, outcome and tm.seconds < 900.0, "; ".join(parts) + f"; {tm.seconds:.1f}s")


def test_9_fusion_endpoints(acceptance):
    with Timer() as tm:
        base = init_base(Rng(0), 8, (64, 64))
        rec, sem = random_adapter(Rng(1), base, 4), random_adapter(Rng(2), base, 4)
        x, t = Rng(3).normal((16, 8)), 0.55
        e_rec = predict_noise(base, [StackEntry(rec)], x, t)
        e_both = predict_noise(base, [StackEntry(rec), StackEntry(sem)], x, t)
        ends = (S.fused_noise(base, rec, sem, x, t, 0.0).tobytes() == e_rec.tobytes()
                and S.fused_noise(base, rec, sem, x, t, 1.0).tobytes() == e_both.tobytes())
        affine = max(float(np.max(np.abs(S.fused_noise(base, rec, sem, x, t, g) - ((1 - g) * e_rec + g * e_both))))
                     for g in (0.1, 0.25, 0.5, 0.75, 0.9))
    ok = ends and affine < 1e-12 and tm.seconds < 1.0
    acceptance(9, ok, f"endpoints exact: {ends}, affine err {affine:.1e} at 5 points, {tm.seconds:.2f}s")


def _pipeline(d: Path) -> list[Path]:
    d.mkdir()
    (d / "v1.kv").write_text("mode=vector\nsemantic=offset\nn_pairs=3\nseed=0\n")
    steps = [
        ["pretrain", "--spec", d / "v1.kv", "--out", d / "base.pfck"],
        ["make-pairs", "--spec", d / "v1.kv", "--out", d / "pairs.pfds"],
        ["train", "--base", d / "base.pfck", "--pairs", d / "pairs.pfds", "--out-content", d / "content.pfck",
         "--out-semantic", d / "semantic.pfck", "--log", d / "train.csv"],
        ["edit", "--base", d / "base.pfck", "--semantic", d / "semantic.pfck", "--seed", 7, "-n", 16,
         "--out", d / "edit.pft"],
        ["sweep", "--base", d / "base.pfck", "--pairs", d / "pairs.pfds", "--semantic", d / "semantic.pfck",
         "--out-report", d / "sweep.csv"],
    ]
    for argv in steps:
        assert cli.main([str(a) for a in argv]) == 0
    return sorted(p for p in d.iterdir() if p.suffix != ".kv")


def test_10_determinism(acceptance, tmp_path):
    with Timer() as tm:
        first = _pipeline(tmp_path / "run1")
        second = _pipeline(tmp_path / "run2")
    names = [p.name for p in first]
    same = names == [p.name for p in second] and all(a.read_bytes() == b.read_bytes() for a, b in zip(first, second))
    ok = same and tm.seconds < 600.0
    acceptance(10, ok, f"{len(first)} artifacts byte-identical: {same} ({', '.join(names)}), {tm.seconds:.1f}s")
