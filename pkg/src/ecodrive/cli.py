"""Command-line interface: train runs, stochastic evaluations, and plot-data
extraction from finished run directories."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import AGENT_KINDS, RunConfig, load_config, save_config
from .cycles import bundled_cycle_path


def _build_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "agent", None):
        overrides["agent"] = args.agent
    if getattr(args, "cycle", None):
        overrides["cycle"] = args.cycle
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "cycles_budget", None) is not None:
        overrides["train_cycles"] = args.cycles_budget
    if args.config:
        return load_config(args.config, **overrides)
    return RunConfig(**overrides)


def cmd_train(args) -> int:
    from .harness import Trainer

    cfg = _build_config(args)
    out = Path(args.out)
    trainer = Trainer(cfg, out)
    save_config(cfg, out / "config.cfg")
    ckpt = trainer.train()
    print(f"trained {cfg.agent} for {cfg.train_cycles} cycles -> {ckpt}")
    print(f"learning curve: {out / 'learning_curve.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    from .harness import evaluate
    from .nets import load_checkpoint

    _, meta = load_checkpoint(args.checkpoint)
    overrides = {"agent": str(meta.get("agent", "baseline"))}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, **overrides) if args.config \
        else RunConfig(**overrides)
    cycles = args.cycles or [str(bundled_cycle_path())]
    summary = evaluate(cfg, Path(args.checkpoint), cycles, args.reps,
                       Path(args.out))
    for row in summary["cycles"]:
        print(f"{row['cycle']}: MPG {row['mpg_mean']:.3f} ± "
              f"{row['mpg_std']:.3f}  accel RMSE {row['accel_rmse_mean']:.3f}"
              f"  shifts {row['shift_count_mean']:.0f}")
    print(f"metrics: {Path(args.out) / 'metrics.json'}")
    return 0


def cmd_plotdata(args) -> int:
    from .plotdata import export_plot_data

    written = export_plot_data([Path(r) for r in args.run], Path(args.out))
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ecodrive",
        description="Eco-driving powertrain control: baseline, from-scratch "
                    "RL, and residual-on-source training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train (or run) an agent on a cycle")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--agent", choices=AGENT_KINDS)
    p.add_argument("--cycle", help="drive-cycle CSV (default: bundled)")
    p.add_argument("--seed", type=int)
    p.add_argument("--cycles-budget", type=int, dest="cycles_budget",
                   help="override the training cycle count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="stochastic evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cycles", nargs="*", help="cycle CSVs (default: bundled)")
    p.add_argument("--reps", type=int, default=25)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plotdata", help="export CSV series for plots")
    p.add_argument("--run", nargs="+", required=True,
                   help="one or more finished run directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plotdata)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
