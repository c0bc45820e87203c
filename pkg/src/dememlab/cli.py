"""Command-line entry point for the experiment pipeline.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 runtime/numeric error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .datasets import save_csv
from .errors import LabError
from .pipeline import run_attack, run_memorize, run_shadow
from .report import run_report, run_sweep
from .trainers import train


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", type=Path, required=config_required,
                        help="experiment config file (key=value lines)")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the base seed from the config")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel workers for ensemble training")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dememlab",
        description="Privacy-vs-robustness lab: adversarial training with a "
                    "loss-variance penalty, DP-SGD, memorization scoring, and "
                    "LiRA membership-inference audits.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset CSV")
    _add_common(p)

    p = sub.add_parser("train", help="train a single model")
    _add_common(p)

    p = sub.add_parser("shadow", help="train a shadow ensemble")
    _add_common(p)

    p = sub.add_parser("attack", help="run membership-inference attacks on a shadow run")
    _add_common(p, config_required=False)

    p = sub.add_parser("memorize", help="estimate memorization scores from a shadow run")
    _add_common(p, config_required=False)

    p = sub.add_parser("report", help="aggregate artifact directories into reports")
    p.add_argument("dirs", nargs="+", type=Path, help="completed artifact directories")
    p.add_argument("--out", type=Path, required=True, help="report output directory")
    p.add_argument("--param", default=None, help="sweep parameter (auto-detected if omitted)")

    p = sub.add_parser("sweep", help="run the pipeline across parameter values")
    _add_common(p)
    p.add_argument("--param", required=True, help="config key to sweep, e.g. train.demem_lambda")
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 0,0.2,1.0")
    return parser


def _cmd_gen_data(args) -> None:
    config = load_config(args.config, seed_override=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    dataset = config.dataset.load()
    path = args.out / "dataset.csv"
    save_csv(dataset, path)
    print(f"wrote {path} ({dataset.n} samples, {dataset.dim} features, "
          f"{dataset.n_classes} classes)")


def _cmd_train(args) -> None:
    config = load_config(args.config, seed_override=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    dataset = config.dataset.load()
    model, history = train(config.train, dataset, robust_eval=config.eval_attack)
    from .models import save_checkpoint
    save_checkpoint(model, args.out / "model.ckpt")
    history.write_csv(args.out / "history.csv")
    last = history.records[-1]
    print(f"trained {config.train.method} for {config.train.epochs} epochs: "
          f"loss {last.mean_loss:.4f}, psi {last.psi:.6f}, "
          f"nat_acc {last.nat_acc:.4f}, rob_acc "
          f"{'n/a' if last.rob_acc is None else f'{last.rob_acc:.4f}'}")
    print(f"wrote {args.out / 'model.ckpt'} and {args.out / 'history.csv'}")


def _cmd_shadow(args) -> None:
    config = load_config(args.config, seed_override=args.seed)
    out = run_shadow(config, args.out, workers=max(1, args.workers))
    print(f"shadow run complete: {config.n_models} models in {out}")


def _cmd_attack(args) -> None:
    path = run_attack(args.out)
    print(f"wrote {path} and {path.with_name('attack_summary.csv')}")


def _cmd_memorize(args) -> None:
    path = run_memorize(args.out)
    print(f"wrote {path}")


def _cmd_report(args) -> None:
    path = run_report(args.dirs, args.out, sweep_param=args.param)
    print(f"wrote report tables and figures under {path.parent}")


def _cmd_sweep(args) -> None:
    config = load_config(args.config, seed_override=args.seed)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    path = run_sweep(config, args.param, values, args.out,
                     workers=max(1, args.workers))
    print(f"sweep complete; report under {path.parent}")


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "shadow": _cmd_shadow,
    "attack": _cmd_attack,
    "memorize": _cmd_memorize,
    "report": _cmd_report,
    "sweep": _cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
