"""Command-line entry point: ``python -m superclass_attack <subcommand>``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

from .attacks import ALL
from .diffmodel import WeightFileError, load_weights, save_weights
from .harness import (
    AttackRow,
    DatasetFileError,
    load_dataset,
    report_csv,
    run_experiment,
    run_row,
    to_markdown,
)
from .losses import IllegalLossRow
from .taxonomy import TaxonomyError, read_taxonomy
from .training import DivergenceError, TrainConfig, train_fixture


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def number(text: str) -> float:
    """A decimal or a fraction such as ``8/255``."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number or fraction: {text!r}") from None


def budget(text: str):
    if text.lower() == "all":
        return ALL
    k = int(text)
    if k < 1:
        raise argparse.ArgumentTypeError("k must be >= 1 or 'all'")
    return k


def hidden_sizes(text: str) -> tuple[int, ...]:
    text = text.strip().lower()
    if text in ("", "linear"):
        return ()
    return tuple(int(w) for w in text.replace("x", ",").split(","))


def existing(text: str) -> Path:
    p = Path(text)
    if not p.exists():
        raise FileNotFoundError(text)
    return p


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="superclass-attack", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a fixture classifier")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", type=hidden_sizes, default=(32, 32), help="hidden widths, e.g. 32,32 or 'linear'")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--num-classes", type=int, default=0)
    t.add_argument("--adversarial", action="store_true")
    t.add_argument("--eps", type=number, default=8 / 255)
    t.add_argument("--alpha", type=number, default=2 / 255)
    t.add_argument("--steps", type=int, default=10)

    a = sub.add_parser("attack", help="attack every example of a dataset")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--taxonomy", required=True)
    a.add_argument("--method", required=True, choices=("standard", "iter-seq", "iter-sort", "max", "sum", "lse"))
    a.add_argument("--loss", required=True)
    a.add_argument("--steps", type=int, default=100)
    a.add_argument("--eps", type=number, default=8 / 255)
    a.add_argument("--alpha", type=number, default=2 / 255)
    a.add_argument("--k", type=budget, default=ALL)
    a.add_argument("--no-random-init", action="store_true")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True, help="report CSV")
    a.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    c = sub.add_parser("campaign", help="run every row of an experiment manifest")
    c.add_argument("--manifest", required=True)
    c.add_argument("--out", required=True, help="report CSV")
    c.add_argument("--markdown", action="store_true", help="also print a markdown table")
    c.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    k = sub.add_parser("taxonomy-check", help="validate a taxonomy file")
    k.add_argument("--file", required=True)
    return p


def cmd_train(args) -> int:
    ds = load_dataset(existing(args.data), args.num_classes)
    cfg = TrainConfig(epochs=args.epochs, batch=args.batch, lr=args.lr, adversarial=args.adversarial,
                      adv_steps=args.steps, adv_epsilon=args.eps, adv_alpha=args.alpha)
    model = train_fixture(ds.features, ds.labels, args.arch, cfg, args.seed, ds.num_classes)
    save_weights(model, args.out)
    print(f"OK: trained {len(ds)} examples -> {args.out}")
    return 0


def cmd_attack(args) -> int:
    model = load_weights(existing(args.model))
    taxonomy = read_taxonomy(existing(args.taxonomy))
    ds = load_dataset(existing(args.data), taxonomy.num_classes)
    row = AttackRow.build(args.method, args.loss, steps=args.steps, epsilon=args.eps, alpha=args.alpha,
                          k=args.k, random_init=not args.no_random_init)
    result = run_row(model, ds, taxonomy, row, args.seed, args.workers)
    text = report_csv([result])
    Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_campaign(args) -> int:
    report = run_experiment(existing(args.manifest), args.out, args.workers)
    text = Path(args.out).read_text()
    print(to_markdown(text) if args.markdown else text, end="\n" if args.markdown else "")
    return 1 if any(r.error for r in report) else 0


def cmd_taxonomy_check(args) -> int:
    t = read_taxonomy(existing(args.file))
    print(f"OK: {t.num_classes} classes, {t.num_superclasses} superclasses")
    return 0


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "campaign": cmd_campaign,
    "taxonomy-check": cmd_taxonomy_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc.args[0]}", file=sys.stderr)
    except IllegalLossRow as exc:
        print(f"error: {exc}", file=sys.stderr)
    except TaxonomyError as exc:
        print(f"error: invalid taxonomy: {exc}", file=sys.stderr)
    except (DatasetFileError, WeightFileError) as exc:
        print(f"error: bad input file: {exc}", file=sys.stderr)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
