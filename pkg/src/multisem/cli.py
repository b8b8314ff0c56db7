"""Command-line entry point: ``multisem <subcommand> [options]``.

Subcommands: ``gen-synth``, ``train``, ``eval``, ``ablate``, ``check-grad``.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional

from . import gradcheck, harness
from .checkpoint import load_checkpoint, save_checkpoint
from .data import generate_synthetic, write_dataset
from .errors import MultisemError

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="base random seed")
    p.add_argument("--episodes", type=int, help="episode count (training for 'train', evaluation otherwise)")
    p.add_argument("--out", help="output path")


def _protocol(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--query", type=int)
    p.add_argument("--branches", help='branch grammar, e.g. "l/l,d/v" ("-" for visual only)')
    p.add_argument("--branch-losses", choices=["on", "off"])
    p.add_argument("--lr", type=float)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--train-episodes", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--features")
    p.add_argument("--semantics", action="append", help="semantic vector file (repeatable)")
    p.add_argument("--split")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multisem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic dataset and a matching run config")
    _common(g)
    g.add_argument("--spec", help="config file with synth_* keys")
    g.add_argument("--classes", type=int)
    g.add_argument("--instances", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--sigma-c", type=float)
    g.add_argument("--sigma-v", type=float)
    g.add_argument("--modality", action="append", help="name:dim:rho (repeatable)")
    g.add_argument("--split-sizes", help="train/val/test class counts, e.g. 60/20/20")

    t = sub.add_parser("train", help="meta-train a model and save a checkpoint")
    _common(t)
    _protocol(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint (or a freshly trained model)")
    _common(e)
    _protocol(e)
    e.add_argument("--checkpoint")
    e.add_argument("--eval-split", default="test", choices=["train", "val", "test"])

    a = sub.add_parser("ablate", help="train and evaluate every cell of a branch grid")
    _common(a)
    _protocol(a)
    a.add_argument("--grid", help="grid file: '<label> <branches|-> <branch_losses>' per line "
                                  "(default: the ten published ablation rows)")

    c = sub.add_parser("check-grad", help="finite-difference check of all model gradients")
    _common(c)
    return parser


def _config_from_args(args, training: bool) -> harness.RunConfig:
    config = harness.load_config(args.config) if getattr(args, "config", None) else harness.RunConfig()
    changes = {}
    for key in ("way", "shot", "query", "lr", "embed_dim", "train_episodes", "eval_episodes",
                "features", "split", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "semantics", None):
        changes["semantics"] = args.semantics
    if getattr(args, "branches", None) is not None:
        changes["branches"] = "" if args.branches == "-" else args.branches
    if getattr(args, "branch_losses", None) is not None:
        changes["branch_losses"] = args.branch_losses == "on"
    if args.episodes is not None:
        changes["train_episodes" if training else "eval_episodes"] = args.episodes
    return config.replace(**changes)


def _cmd_gen_synth(args, out) -> int:
    config = harness.load_config(args.spec) if args.spec else harness.RunConfig()
    changes = {"synth_classes": args.classes if args.classes is not None else (config.synth_classes or 100)}
    for arg, key in (("instances", "synth_instances"), ("dim", "synth_dim"), ("sigma_c", "synth_sigma_c"),
                     ("sigma_v", "synth_sigma_v"), ("modality", "synth_modality"),
                     ("split_sizes", "synth_split"), ("seed", "synth_seed")):
        value = getattr(args, arg)
        if value is not None:
            changes[key] = value
    if not (changes.get("synth_modality") or config.synth_modality):
        changes["synth_modality"] = ["label:32:0.9", "description:32:0.9"]
    config = config.replace(**changes)
    spec = config.synth_spec()
    directory = args.out or "synth"
    paths = write_dataset(generate_synthetic(spec), directory)
    run = config.replace(features=os.path.abspath(paths["features"]),
                         semantics=[os.path.abspath(p) for p in paths["semantics"]],
                         split=os.path.abspath(paths["split"]), synth_classes=None,
                         synth_modality=[], synth_split=None)
    cfg_path = os.path.join(directory, "run.cfg")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        fh.write(harness.format_config(run))
    out(f"wrote {spec.n_classes} classes x {spec.instances_per_class} instances "
        f"(split {'/'.join(map(str, spec.split))}, modalities {', '.join(sorted(spec.modalities))}) "
        f"to {directory}; run config {cfg_path}")
    return EXIT_OK


def _cmd_train(args, out) -> int:
    config = _config_from_args(args, training=True)
    dataset = harness.load_run_dataset(config)
    model, trace = harness.train(config, dataset)
    path = args.out or "model.ckpt"
    save_checkpoint(model, path, config.echo())
    n = len(trace)
    if n:
        k = max(1, n // 10)
        out(f"TRAIN episodes={n} first_loss={trace[:k].mean():.6f} last_loss={trace[-k:].mean():.6f}")
    else:
        out("TRAIN episodes=0 (model left at initialisation)")
    out(f"saved checkpoint {path}")
    return EXIT_OK


def _print_report(out, report: harness.EvalReport, tag: str, config: harness.RunConfig, split: str) -> None:
    out(f"protocol: {config.way}-way {config.shot}-shot, {config.query} queries/class, "
        f"{report.n} {split} episodes, branches={report.config['branches'] or '-'} "
        f"branch_losses={report.config['branch_losses']}, seed={config.seed}")
    out(report.summary())
    out(report.result_line(tag))


def _cmd_eval(args, out) -> int:
    config = _config_from_args(args, training=False)
    dataset = harness.load_run_dataset(config)
    if args.checkpoint:
        # only a --branches flag is checked against the checkpoint; a config
        # file's branches describe training, the checkpoint already records them
        explicit = args.branches is not None
        model = load_checkpoint(args.checkpoint, config.branches if explicit else None,
                                config.branch_losses if explicit else None)
        tag = os.path.splitext(os.path.basename(args.checkpoint))[0]
    else:
        model, _ = harness.train(config, dataset)
        tag = config.branches or "visual"
    report = harness.evaluate(model, dataset, args.eval_split, config)
    _print_report(out, report, tag, config, args.eval_split)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.result_line(tag) + "\n")
    return EXIT_OK


def _cmd_ablate(args, out) -> int:
    config = _config_from_args(args, training=False)
    grid = harness.load_grid(args.grid) if args.grid else list(harness.BRANCH_ABLATION_GRID)
    dataset = harness.load_run_dataset(config)
    rows = harness.ablate(config, dataset, grid)
    out(harness.ABLATION_HEADER)
    for row in rows:
        out(row.table_line())
    for row in rows:
        out(row.report.result_line(row.label))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(harness.ABLATION_HEADER + "\n")
            fh.writelines(row.table_line() + "\n" for row in rows)
    return EXIT_OK


def _cmd_check_grad(args, out) -> int:
    lines: List[str] = []

    def emit(line):
        lines.append(line)
        out(line)

    cases = gradcheck.run_suite(seed=args.seed or 0, out=emit)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.writelines(line + "\n" for line in lines)
    return EXIT_OK if all(c.passed for c in cases) else EXIT_ERROR


COMMANDS = {"gen-synth": _cmd_gen_synth, "train": _cmd_train, "eval": _cmd_eval,
            "ablate": _cmd_ablate, "check-grad": _cmd_check_grad}


def run_cli(argv: Optional[List[str]] = None, out=print) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args, out)
    except (MultisemError, OSError) as exc:
        print(f"multisem {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
