"""Command-line entry point: ``pqclab <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from pqclab.config import ExperimentConfig, dump_config, load_config, with_overrides


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


_TYPES = {"int": int, "float": float, "bool": _bool, "str": str}


def add_config_flags(p: argparse.ArgumentParser) -> None:
    """One ``--field-name`` flag per config field; unset flags keep file/default values."""
    p.add_argument("--config", help="key = value config file")
    g = p.add_argument_group("experiment config")
    for f in fields(ExperimentConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=_TYPES[f.type],
                       default=None, metavar=f.type.upper())


def config_from_args(args) -> ExperimentConfig:
    base = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(base, **{f.name: getattr(args, f.name) for f in fields(ExperimentConfig)})


def cmd_gen_scenes(args) -> None:
    from pqclab.harness import gen_scenes
    ids = gen_scenes(config_from_args(args))
    for which, lst in ids.items():
        print(f"{which}: {len(lst)} scenes")


def cmd_train(args) -> None:
    from pqclab.harness import cmd_train as run
    for d in run(config_from_args(args)):
        print(d)


def cmd_eval(args) -> None:
    from pqclab.harness import cmd_eval as run
    cfg = config_from_args(args)
    out = args.out or str(Path(args.checkpoint).parent / f"eval_{args.set}.csv")
    rep = run(cfg, args.checkpoint, args.set, args.episodes, out)
    print(f"{args.set}: success {rep.success_rate:.4f} collision {rep.collision_rate:.4f} "
          f"timeout {rep.timeout_rate:.4f} ({rep.episodes} episodes) -> {out}")


def cmd_sweep(args) -> None:
    from pqclab.harness import cmd_sweep_scenes
    print(cmd_sweep_scenes(config_from_args(args)))


def cmd_finetune(args) -> None:
    from pqclab.harness import cmd_finetune as run
    print(run(config_from_args(args), args.checkpoint, args.out))


def cmd_plot(args) -> None:
    from pqclab import plot
    from pqclab.harness import read_metrics
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.metrics is not None:
        rows = [r for p in args.metrics for r in read_metrics(p)]
        plot.plot_curves(rows, out / "curves.svg")
    if args.sweep:
        plot.plot_sweep(args.sweep, out / "sweep.svg")
    if args.finetune:
        plot.plot_finetune(args.finetune, out / "finetune.svg")
    print(out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pqclab", description="Planner cloning experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-scenes", help="write scene sets, expert dumps and observation caches")
    add_config_flags(s)
    s.set_defaults(func=cmd_gen_scenes)

    s = sub.add_parser("train", help="train the configured method once per seed")
    add_config_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint with the greedy policy")
    add_config_flags(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--set", default="holdout", choices=("train", "holdout", "finetune"))
    s.add_argument("--episodes", type=int, default=None, help="episodes per scene")
    s.add_argument("--out", default=None, help="CSV path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-scenes", help="BatchPQC success vs number of training scenes")
    add_config_flags(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("finetune", help="DQN finetuning with before/after reports")
    add_config_flags(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", default=None, help="output directory")
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("plot", help="render SVG charts")
    s.add_argument("--metrics", nargs="*", default=None, help="metrics.jsonl files")
    s.add_argument("--sweep", default=None, help="sweep_scenes.csv")
    s.add_argument("--finetune", nargs="*", default=None, help="finetune eval.csv files")
    s.add_argument("--out", default="plots")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("show-config", help="print the effective config")
    add_config_flags(s)
    s.set_defaults(func=lambda a: print(dump_config(config_from_args(a)), end=""))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # diagnostic line and nonzero exit for any failure
        print(f"pqclab {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
