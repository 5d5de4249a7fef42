"""``ugc`` command line: gen-data | train | refine | eval | bench | verify.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import cost_model, emit_report
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config
from .data import MSEQFormatError, MotionDataset, SyntheticConfig, gen_synthetic, load_mseq, mpjpe, save_mseq, zero_velocity
from .model import build_model, build_refine
from .training import TrainingDiverged, policy_stats, train_loop

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
VAL_OFFSET = 10**6

log = logging.getLogger("ugc")


def load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def synthetic_config(cfg: RunConfig) -> SyntheticConfig:
    return SyntheticConfig(family=cfg.family, joints=cfg.joints, channels=cfg.channels,
                           t_hist=cfg.t_hist, t_fut=cfg.t_fut, noise_std=cfg.noise_std, seed=cfg.seed)


def datasets(cfg: RunConfig) -> tuple[MotionDataset, MotionDataset]:
    syn = synthetic_config(cfg)
    train = load_mseq(cfg.train_data) if cfg.train_data else gen_synthetic(syn, cfg.n_train)
    val = load_mseq(cfg.val_data) if cfg.val_data else gen_synthetic(syn, cfg.n_val, start=VAL_OFFSET)
    for name, ds in (("train_data", train), ("val_data", val)):
        if (ds.t_hist, ds.t_fut, ds.joints, ds.channels) != (cfg.t_hist, cfg.t_fut, cfg.joints, cfg.channels):
            raise ConfigError(f"{name}: dataset dims do not match the config", key=name)
    return train, val


def _metrics_path(args) -> Path:
    return Path(args.metrics) if args.metrics else Path(str(args.out) + ".metrics.csv")


def cmd_gen_data(args) -> int:
    cfg = load_config(args)
    syn = synthetic_config(cfg)
    if args.split == "train":
        ds = gen_synthetic(syn, cfg.n_train)
    else:
        ds = gen_synthetic(syn, cfg.n_val, start=VAL_OFFSET)
    save_mseq(ds, args.out)
    print(f"wrote {len(ds)} {args.split} samples to {args.out}")
    return EXIT_OK


def _train_and_save(model, cfg, args) -> int:
    train, val = datasets(cfg)
    model, metrics = train_loop(model, train, val, cfg)
    save_checkpoint(model, args.out, getattr(model, "optimizer", None))
    _metrics_path(args).write_text(metrics.to_csv())
    print(f"final validation MPJPE {metrics.final_val:.3f} mm")
    print(f"checkpoint {args.out}, metrics {_metrics_path(args)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    model = build_model(cfg, np.random.default_rng(cfg.seed))
    return _train_and_save(model, cfg, args)


def cmd_refine(args) -> int:
    cfg = load_config(args)
    base, _ = load_checkpoint(args.base)
    if base.mode != "static":
        raise ConfigError("--base must be a static (single-kind) GCN checkpoint", key="base")
    cfg = cfg.replace(static_kind=base.config.static_kind, static_tied=base.config.static_tied,
                      layers=base.config.layers, residual=base.config.residual,
                      t_hist=base.t_hist, t_fut=base.t_fut, joints=base.joints, channels=base.channels)
    model = build_refine(base, cfg, np.random.default_rng([cfg.seed, 2]))
    return _train_and_save(model, cfg, args)


def cmd_eval(args) -> int:
    if args.data:
        data = load_mseq(args.data)
    else:
        cfg = load_checkpoint(args.ckpt)[0].config if args.ckpt else load_config(args)
        data = datasets(cfg)[1]
    if args.baseline == "zero-velocity":
        pred = zero_velocity(data.history, data.t_fut)
        label = "zero-velocity"
        routes = None
    elif args.ckpt:
        model, _ = load_checkpoint(args.ckpt)
        pred = model.predict(data.history)
        label = f"{model.mode} model"
        routes = policy_stats(model, data) if any(l.selector for l in model.layers) else None
    else:
        raise ConfigError("eval needs --ckpt or --baseline zero-velocity")
    per_frame = mpjpe(pred, data.future, mode="per-frame")
    print(f"MPJPE ({label}, {len(data)} samples, mm)")
    print("frame " + " ".join(f"{k + 1:>8d}" for k in range(len(per_frame))))
    print("mpjpe " + " ".join(f"{v:8.3f}" for v in per_frame))
    print(f"average {per_frame.mean():.3f}")
    if routes is not None:
        print("policy (rows: layers, columns: candidates)")
        for l, row in enumerate(routes):
            print(f"layer {l:3d} " + " ".join(f"{v:6.3f}" for v in row))
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.ckpt:
        model, _ = load_checkpoint(args.ckpt)
    else:
        cfg = load_config(args)
        model = build_model(cfg, np.random.default_rng(cfg.seed))
    report = cost_model(model)
    text = emit_report(report, args.out)
    print(text, end="")
    print(f"model totals: params {report.params}, train FLOPs {report.train_flops}, "
          f"inference FLOPs {report.infer_flops}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    ok = True
    for result in run_all():
        status = "PASS" if result.passed else "FAIL"
        print(f"[{status}] {result.name} ({result.seconds:.1f}s)")
        for line in result.lines:
            print(f"    {line}")
        if not result.passed:
            print(f"    first failure: {result.failure}")
            ok = False
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ugc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        if out:
            p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gen-data", help="write a synthetic MSEQ dataset")
    common(p)
    p.add_argument("--split", choices=("train", "val"), default="train")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from scratch")
    common(p)
    p.add_argument("--metrics", type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("refine", help="refine a static base GCN checkpoint")
    common(p)
    p.add_argument("--base", type=Path, required=True)
    p.add_argument("--metrics", type=Path)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="per-frame and average MPJPE")
    common(p, out=False)
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--baseline", choices=("zero-velocity",))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="analytic parameter and FLOP report")
    common(p)
    p.add_argument("--ckpt", type=Path)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the oracle and gradient suites")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, MSEQFormatError, CheckpointFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
