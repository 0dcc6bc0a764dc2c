"""Command-line entry point: gen-data, train, eval, ablate, inspect, gradcheck.

Every RunConfig field is also a flag (``--n-context-heads 4``); flags override
values read from ``--config FILE`` (flat ``key = value`` lines).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from .checkpoint import Checkpoint
from .config import RunConfig, load_config, parse_value
from .data import SyntheticConfig, generate_synthetic, load_examples, write_jsonl
from .harness import (ablate, evaluate, gradcheck, inspect, load_datasets, micro_config, tau_sweep,
                      train)

GRADCHECK_TOLERANCE = 1e-4


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    group = parser.add_argument_group("run config")
    for f in dataclasses.fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", default=None,
                           metavar=f.type.upper(), help=f"default {f.default!r}")


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for key, raw in vars(args).items():
        if key.startswith("cfg_") and raw is not None:
            name = key[4:]
            overrides[name] = parse_value(name, raw)
    return load_config(args.config, **overrides)


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, default=_json_default)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _json_default(o):
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(f"not serializable: {type(o)}")


def _dataset(args, config: RunConfig):
    if args.data:
        return load_examples(args.data)
    return load_datasets(config)[1]


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    cfg = SyntheticConfig(num_examples=args.num_examples, answerable_ratio=args.answerable_ratio,
                          context_facts_per_example=args.facts, rng_seed=args.seed)
    examples = generate_synthetic(cfg)
    write_jsonl(examples, args.out)
    print(f"wrote {len(examples)} examples ({sum(e.is_answerable for e in examples)} answerable) to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    seeds = args.seeds or [config.seed]
    train_ex, dev_ex = load_datasets(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for seed in seeds:
        path = out_dir / f"{args.name}_seed{seed}.ckpt"
        ckpt = train(config.replace(seed=seed), path, train_ex, dev_ex)
        metrics = evaluate(ckpt, dev_ex) if dev_ex else {}
        summary.append({"seed": seed, "checkpoint": str(path), "best_epoch": ckpt.epoch, "dev": metrics,
                        "history": ckpt.history})
        print(f"seed {seed}: best epoch {ckpt.epoch} {json.dumps(metrics)}", file=sys.stderr)
    _dump(summary, args.metrics)
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    data = _dataset(args, ckpt.config)
    if args.sweep:
        _dump(tau_sweep(ckpt, data, args.sweep), args.out)
    else:
        _dump(evaluate(ckpt, data, args.tau), args.out)
    return 0


def cmd_ablate(args) -> int:
    config = _config_from_args(args)
    report = ablate(config, args.heads, args.out_dir, args.seeds)
    print(report.table(), file=sys.stderr)
    _dump(report.rows, args.report)
    return 0


def cmd_inspect(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    examples = _dataset(args, ckpt.config)
    if args.ids:
        wanted = set(args.ids)
        examples = [e for e in examples if e.id in wanted]
    examples = examples[: args.limit]
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for ex in examples:
            for record in inspect(ckpt, ex, args.k):
                out.write(json.dumps(record) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck(micro_config(), step=args.step, seed=args.seed)
    worst = max(report.values())
    _dump({"max_relative_error": report, "tolerance": GRADCHECK_TOLERANCE, "pass": worst < GRADCHECK_TOLERANCE},
          None)
    return 0 if worst < GRADCHECK_TOLERANCE else 1


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relmod", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic answerability dataset as JSON lines")
    p.add_argument("--out", required=True)
    p.add_argument("--num-examples", type=int, default=2000)
    p.add_argument("--answerable-ratio", type=float, default=0.5)
    p.add_argument("--facts", type=int, default=4, help="facts per context")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model per seed and save best-dev checkpoints")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--name", default="model")
    p.add_argument("--metrics", help="write summary JSON here instead of stdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--data", help="SQuAD 2.0 JSON or synthetic JSONL; default: the checkpoint's dev split")
    p.add_argument("--tau", type=float)
    p.add_argument("--sweep", type=float, nargs="+", help="report metrics at each of these thresholds")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="head-count and baseline sweep")
    _add_config_flags(p)
    p.add_argument("--heads", type=int, nargs="+", default=[4, 16, 64])
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out-dir", default="ablation")
    p.add_argument("--report", help="write rows as JSON here instead of stdout")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="dump top-k attended tokens per head as JSON lines")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--ids", nargs="+")
    p.add_argument("--limit", type=int, default=5)
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
