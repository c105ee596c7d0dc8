"""``pairedit`` command line: every stage of the workflow as a batch subcommand.

Config-bearing commands accept ``--config F`` (flat key=value) and one flag per config key;
flags override file values. Exit status is 0 on success, 1 on a runtime error (one-line
diagnostic on stderr) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import fields
from typing import Sequence

import numpy as np

from pairedit import checks
from pairedit import datagen as D
from pairedit import evaluation as E
from pairedit import formats as F
from pairedit import losses as L
from pairedit import sampler as S
from pairedit.netmodel import StackEntry
from pairedit.trainer import (METHODS, PretrainConfig, StepLog, TrainConfig, default_pretrain,
                              fit_reconstruction_lora, pretrain_base, train_pairedit)

log = logging.getLogger("pairedit")


class CliError(Exception):
    pass


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_key_flags(p: argparse.ArgumentParser, classes, skip: Sequence[str] = ()) -> None:
    seen = set(skip)
    for cls in classes:
        for f in fields(cls):
            if f.name in seen or f.name == "loss":
                continue
            seen.add(f.name)
            p.add_argument(_flag(f.name), dest=f"key_{f.name}", metavar="V", default=None,
                           help=f"override config key {f.name}")


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}


def _merged(path: str | None, args: argparse.Namespace) -> dict[str, str]:
    values = F.read_kv(path) if path else {}
    values.update(_overrides(args))
    return values


def _train_config(args) -> TrainConfig:
    return TrainConfig.from_mapping(_merged(args.config, args))


def _sample_config(args) -> S.SampleConfig:
    return S.SampleConfig(num_steps=args.steps, off_steps=args.off_steps, scale=getattr(args, "scale", 1.0),
                          gamma_real=getattr(args, "gamma", 0.75), seed=args.seed)


def _write_samples(args, x: np.ndarray) -> None:
    F.save_tensor(args.out, x)
    if args.pgm:
        side = math.isqrt(x.shape[1])
        if side * side != x.shape[1]:
            raise CliError(f"cannot write PGM: sample size {x.shape[1]} is not a square image")
        F.save_pgm(args.pgm, F.image_grid(D.to_unit_range(x), side, side))
    print(f"wrote {args.out} ({x.shape[0]} x {x.shape[1]})")


def _add_sampling(p: argparse.ArgumentParser, scale: bool = True) -> None:
    if scale:
        p.add_argument("--scale", type=float, default=1.0, help="semantic adapter scale")
    p.add_argument("--seed", type=int, default=0, help="initial-noise seed")
    p.add_argument("--steps", type=int, default=28, help="sampler steps")
    p.add_argument("--off-steps", type=int, default=14, help="steps before the semantic adapter switches on")
    p.add_argument("-n", "--num-samples", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", help="also write the samples as a PGM grid (image data only)")


def cmd_pretrain(args) -> None:
    spec = D.PairSpec.from_mapping(F.read_kv(args.spec))
    values = default_pretrain(spec.mode).to_mapping()
    values.update(_merged(args.config, args))
    cfg = PretrainConfig.from_mapping(values)
    data = D.make_pretrain_set(spec, cfg.n_samples, cfg.seed)
    losses: list[float] = []
    base = pretrain_base(data, cfg, losses)
    F.save_base(args.out, base, cfg.seed, {"config": cfg.to_mapping(), "spec": spec.to_mapping()})
    print(f"wrote {args.out}: final loss {losses[-1]:.5f}")


def cmd_make_pairs(args) -> None:
    values = F.read_kv(args.spec) if args.spec else {}
    values.update(_overrides(args))
    pairs = D.make_pairs(D.PairSpec.from_mapping(values))
    F.save_pairs(args.out, pairs)
    note = "" if pairs.has_direction else " (degenerate: no direction)"
    print(f"wrote {args.out}: {pairs.x0A.shape[0]} pairs{note}")


def _write_log(path: str, rows: list[StepLog]) -> None:
    lines = ["step,l_content,l_semantic,l_total"]
    lines += [f"{r.step},{r.l_content!r},{r.l_semantic!r},{r.l_total!r}" for r in rows]
    F.atomic_write(path, ("\n".join(lines) + "\n").encode())


def cmd_train(args) -> None:
    base = F.load_base(args.base)
    pairs = F.load_pairs(args.pairs)
    cfg = _train_config(args)
    rows: list[StepLog] = []
    content, semantic = train_pairedit(base, pairs.x0A, pairs.x0B, cfg, method=args.method, log_rows=rows)
    extra = {"config": {k: v for k, v in cfg.to_mapping().items()}, "method": args.method}
    F.save_adapter(args.out_semantic, semantic, cfg.seed, {**extra, "role": "semantic"})
    if content is not None and args.out_content:
        F.save_adapter(args.out_content, content, cfg.seed, {**extra, "role": "content"})
    elif content is None and args.out_content:
        log.warning("method %s trains no content adapter; %s not written", args.method, args.out_content)
    if args.log:
        _write_log(args.log, rows)
    print(f"wrote {args.out_semantic}: final semantic loss {rows[-1].l_semantic:.5f}")


def cmd_edit(args) -> None:
    base = F.load_base(args.base)
    sem = F.load_adapter(args.semantic)
    stack = [StackEntry(F.load_adapter(args.content))] if args.content else []
    stack.append(StackEntry(sem, semantic=True))
    x = S.generate(base, stack, _sample_config(args), n=args.num_samples)
    _write_samples(args, x)


def cmd_recon(args) -> None:
    base = F.load_base(args.base)
    x_real = np.atleast_2d(F.load_tensor(args.input))
    if x_real.shape[-1] != base.dim:
        raise CliError(f"input has {x_real.shape[-1]} features, base expects {base.dim}")
    cfg = _train_config(args)
    rec = fit_reconstruction_lora(base, x_real.reshape(-1, base.dim), cfg)
    F.save_adapter(args.out, rec, cfg.seed, {"config": cfg.to_mapping(), "role": "reconstruction"})
    print(f"wrote {args.out}: adapter norm {rec.norm():.5f}")


def cmd_fuse_edit(args) -> None:
    base = F.load_base(args.base)
    rec, sem = F.load_adapter(args.recon), F.load_adapter(args.semantic)
    x = S.generate_fused(base, rec, [sem], [args.gamma], _sample_config(args), n=args.num_samples)
    _write_samples(args, x)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_compose(args) -> None:
    base = F.load_base(args.base)
    rec = F.load_adapter(args.recon)
    sems = [F.load_adapter(p) for p in args.semantic.split(",") if p]
    gammas = _floats(args.gammas)
    if len(gammas) != len(sems):
        raise CliError(f"{len(sems)} semantic adapters but {len(gammas)} gammas")
    x = S.generate_fused(base, rec, sems, gammas, _sample_config(args), n=args.num_samples)
    _write_samples(args, x)


def _eval_set(spec: D.PairSpec, args) -> E.EvalSet:
    start = args.eval_seed
    return E.EvalSet.build(spec, range(start, start + args.eval_count))


def cmd_ablate(args) -> None:
    pairs = F.load_pairs(args.pairs)
    cfg = _train_config(args)
    if args.base:
        base = F.load_base(args.base)
    else:
        data = D.make_pretrain_set(pairs.spec, default_pretrain(pairs.spec.mode).n_samples, 0)
        base = pretrain_base(data, default_pretrain(pairs.spec.mode))
    report = E.ablation_table(base, pairs, cfg, _eval_set(pairs.spec, args), S.SampleConfig(args.sample_steps, args.off_steps))
    F.atomic_write(args.out_report, report.to_csv().encode())
    for r in report.rows:
        print(f"{r.method:>4}  scale {r.scale:.3f}  drift {r.identity_drift:.4f}  alignment {r.alignment:.4f}"
              f"  projection {r.projection:.4f} {r.flag}")


def cmd_sweep(args) -> None:
    base = F.load_base(args.base)
    pairs = F.load_pairs(args.pairs)
    sem = F.load_adapter(args.semantic)
    content = F.load_adapter(args.content) if args.content else None
    scales = _floats(args.scales)
    report = E.scale_sweep(base, sem, _eval_set(pairs.spec, args), scales, S.SampleConfig(args.sample_steps, args.off_steps),
                           content=content)
    F.atomic_write(args.out_report, report.to_csv().encode())
    for s in scales:
        print(f"scale {s:g}: projection {report.mean('projection', scale=s):.4f}"
              f"  drift {report.mean('identity_drift', scale=s):.4f}")
    print(f"monotone seeds: {E.monotone_fraction(report, scales):.1%}")


def cmd_verify(args) -> int:
    results = checks.run_all()
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairedit", description="Paired-example semantic editing with dual adapters.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("pretrain", help="pretrain the frozen base on unpaired data")
    q.add_argument("--spec", required=True)
    q.add_argument("--config")
    q.add_argument("--out", required=True)
    _add_key_flags(q, [PretrainConfig])
    q.set_defaults(func=cmd_pretrain)

    q = sub.add_parser("make-pairs", help="write a synthetic paired dataset")
    q.add_argument("--spec")
    q.add_argument("--out", required=True)
    _add_key_flags(q, [D.PairSpec])
    q.set_defaults(func=cmd_make_pairs)

    q = sub.add_parser("train", help="train content and semantic adapters")
    q.add_argument("--base", required=True)
    q.add_argument("--pairs", required=True)
    q.add_argument("--config")
    q.add_argument("--method", choices=METHODS, default="full")
    q.add_argument("--out-content")
    q.add_argument("--out-semantic", required=True)
    q.add_argument("--log", help="per-step loss CSV")
    _add_key_flags(q, [TrainConfig, L.LossConfig])
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("edit", help="generate with the semantic adapter")
    q.add_argument("--base", required=True)
    q.add_argument("--semantic", required=True)
    q.add_argument("--content")
    _add_sampling(q)
    q.set_defaults(func=cmd_edit)

    q = sub.add_parser("recon", help="fit a reconstruction adapter to an input tensor")
    q.add_argument("--base", required=True)
    q.add_argument("--input", required=True)
    q.add_argument("--config")
    q.add_argument("--out", required=True)
    _add_key_flags(q, [TrainConfig])
    q.set_defaults(func=cmd_recon)

    q = sub.add_parser("fuse-edit", help="sample with reconstruction + semantic fusion")
    q.add_argument("--base", required=True)
    q.add_argument("--recon", required=True)
    q.add_argument("--semantic", required=True)
    q.add_argument("--gamma", type=float, default=0.75)
    _add_sampling(q, scale=False)
    q.set_defaults(func=cmd_fuse_edit)

    q = sub.add_parser("compose", help="fuse several semantic adapters")
    q.add_argument("--base", required=True)
    q.add_argument("--recon", required=True)
    q.add_argument("--semantic", required=True, help="comma-separated adapter files")
    q.add_argument("--gammas", required=True, help="comma-separated weights, one per adapter")
    _add_sampling(q, scale=False)
    q.set_defaults(func=cmd_compose)

    for name, fn, hlp in (("ablate", cmd_ablate, "train all methods and compare at matched projection"),
                          ("sweep", cmd_sweep, "edit held-out sources over several scales")):
        q = sub.add_parser(name, help=hlp)
        q.add_argument("--pairs", required=True)
        q.add_argument("--base", required=(name == "sweep"))
        q.add_argument("--out-report", required=True)
        q.add_argument("--sample-steps", type=int, default=28, help="sampler steps")
        q.add_argument("--off-steps", type=int, default=14)
        q.add_argument("--eval-seed", type=int, default=E.EVAL_SEEDS[0])
        q.add_argument("--eval-count", type=int, default=len(E.EVAL_SEEDS))
        if name == "ablate":
            q.add_argument("--config")
            _add_key_flags(q, [TrainConfig, L.LossConfig])
        else:
            q.add_argument("--semantic", required=True)
            q.add_argument("--content")
            q.add_argument("--scales", default="0,0.5,1,1.5")
        q.set_defaults(func=fn)

    q = sub.add_parser("verify", help="run the invariant suite")
    q.set_defaults(func=cmd_verify)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        rc = args.func(args)
    except (CliError, ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"pairedit: error: {msg}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
