"""Training, evaluation, ablation sweeps, attention inspection and gradient checks."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import substrate as sb
from .checkpoint import Checkpoint
from .config import RunConfig
from .data import (Example, SyntheticConfig, Vocab, batchify, encode_batch, generate_synthetic,
                   load_examples)
from .metrics import score
from .model import GROUPS, ModelParams, forward, init_params
from .reader import NO_ANSWER, predict_batch

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------- data


def load_datasets(config: RunConfig) -> tuple[list[Example], list[Example]]:
    if config.train_path:
        train = load_examples(config.train_path)
        dev = load_examples(config.dev_path) if config.dev_path else []
        return train, dev
    train = generate_synthetic(SyntheticConfig(
        num_examples=config.synthetic_train, answerable_ratio=config.answerable_ratio,
        context_facts_per_example=config.facts_per_example, rng_seed=config.data_seed))
    dev = generate_synthetic(SyntheticConfig(
        num_examples=config.synthetic_dev, answerable_ratio=config.answerable_ratio,
        context_facts_per_example=config.facts_per_example, rng_seed=config.data_seed + 10_000))
    return train, dev


# ---------------------------------------------------------------- model <-> checkpoint


def model_from_checkpoint(ckpt: Checkpoint) -> ModelParams:
    params = init_params(ckpt.config, len(ckpt.vocab), np.random.default_rng(0))
    params.load_state_dict(ckpt.params)
    return params


# ---------------------------------------------------------------- prediction / evaluation


@dataclass
class EvalResult:
    metrics: dict[str, float]
    loss: float
    predictions: dict[str, str]


def _score_batches(params: ModelParams, config: RunConfig, vocab: Vocab, examples: Sequence[Example]):
    """Forward every batch once: [(batch, start, end, loss)]."""
    scored = []
    with sb.no_grad():
        for batch in batchify(list(examples), config.batch_size, vocab):
            out = forward(params, batch, config)
            scored.append((batch, out.start.data, out.end.data, out.total.item()))
    return scored


def _decode(scored, tau: float, max_span_len: int) -> EvalResult:
    golds, preds, pred_map = [], [], {}
    loss_sum, count = 0.0, 0
    for batch, start, end, loss in scored:
        loss_sum += loss * len(batch)
        count += len(batch)
        for ex, span in zip(batch.examples, predict_batch(start, end, batch.context_lengths, tau, max_span_len)):
            text = "" if span is NO_ANSWER else " ".join(ex.context_tokens[span[0]:span[1] + 1])
            golds.append(ex.answer_text())
            preds.append(text)
            pred_map[ex.id] = text
    return EvalResult(metrics=score(golds, preds), loss=loss_sum / max(count, 1), predictions=pred_map)


def run_eval(params: ModelParams, config: RunConfig, vocab: Vocab, examples: Sequence[Example],
             tau: float | None = None) -> EvalResult:
    tau = config.tau if tau is None else tau
    return _decode(_score_batches(params, config, vocab, examples), tau, config.max_span_len)


def tau_sweep(checkpoint: Checkpoint, dataset: Sequence[Example], taus: Sequence[float]) -> list[dict]:
    """Metrics at each threshold, from a single forward pass over ``dataset``."""
    params = model_from_checkpoint(checkpoint)
    scored = _score_batches(params, checkpoint.config, Vocab(checkpoint.vocab), dataset)
    return [{"tau": float(t), **_decode(scored, t, checkpoint.config.max_span_len).metrics} for t in taus]


def evaluate(checkpoint: Checkpoint, dataset: Sequence[Example], tau: float | None = None) -> dict[str, float]:
    """EM, F1, NA_accuracy and answerable_accuracy (percent) of a checkpoint."""
    params = model_from_checkpoint(checkpoint)
    return run_eval(params, checkpoint.config, Vocab(checkpoint.vocab), dataset, tau).metrics


# ---------------------------------------------------------------- training


@dataclass
class PlateauSchedule:
    """Multiply lr by ``factor`` after ``patience`` epochs without improvement."""

    factor: float = 0.5
    patience: int = 3
    best: float = math.inf
    bad_epochs: int = 0

    def step(self, metric: float, lr: float) -> tuple[float, bool]:
        """Returns (new lr, improved)."""
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
            return lr, True
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.bad_epochs = 0
            return lr * self.factor, False
        return lr, False


def train(config: RunConfig, out_path: str | Path | None = None,
          train_examples: Sequence[Example] | None = None,
          dev_examples: Sequence[Example] | None = None,
          progress: Callable[[dict], None] | None = None) -> Checkpoint:
    """Adam on the joint loss; returns (and optionally saves) the best-dev checkpoint.

    Without a dev set the last epoch is kept and the train loss drives lr decay.
    """
    if train_examples is None:
        train_examples, loaded_dev = load_datasets(config)
        if dev_examples is None:
            dev_examples = loaded_dev
    train_examples = list(train_examples)
    dev_examples = list(dev_examples or [])
    if not train_examples:
        raise ValueError("train: no training examples")

    rng = np.random.default_rng(config.seed)
    vocab = Vocab.build(train_examples, config.min_count)
    params = init_params(config, len(vocab), rng)
    tensors = params.tensors()
    opt = sb.AdamState(lr=config.lr)
    schedule = PlateauSchedule(config.lr_decay, config.patience)
    history: list[dict] = []
    best_state, best_epoch = params.state_dict(), 0

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_examples))
        batches = batchify([train_examples[i] for i in order], config.batch_size, vocab)
        total = 0.0
        for bi, batch in enumerate(batches):
            out = forward(params, batch, config)
            loss = out.total.item()
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi} (first id {batch.ids[0]})")
            sb.backward(out.total)
            sb.adam_step(tensors, opt)
            total += loss * len(batch)
        record = {"epoch": epoch, "lr": opt.lr, "train_loss": total / len(train_examples)}
        if dev_examples:
            res = run_eval(params, config, vocab, dev_examples)
            record["dev_loss"] = res.loss
            record.update({f"dev_{k}": v for k, v in res.metrics.items()})
            watched = res.loss
        else:
            watched = record["train_loss"]
        new_lr, improved = schedule.step(watched, opt.lr)
        if improved or not dev_examples:
            best_state, best_epoch = params.state_dict(), epoch
        opt.lr = new_lr
        record["seconds"] = round(time.perf_counter() - t0, 3)
        history.append(record)
        log.info("epoch %d %s", epoch, {k: round(v, 4) if isinstance(v, float) else v for k, v in record.items()})
        if progress:
            progress(record)

    ckpt = Checkpoint(config=config, vocab=vocab.tokens, params=best_state, epoch=best_epoch, history=history)
    if out_path is not None:
        ckpt.save(out_path)
    return ckpt


# ---------------------------------------------------------------- ablation


def ablation_variants(config: RunConfig, head_counts: Sequence[int] = (4, 16, 64)) -> list[tuple[str, RunConfig]]:
    """Head-count rows of the full model, then the baselines.

    plausible_only  the relation module swapped for one projection of pooled C
                    (baseline_fc_na), plausible-answer layers kept
    no_augment      relation module fed C directly, no plausible-answer layers
    reader_fc_na    neither: the reader with a pooled-C no-answer projection
    """
    full = config.replace(baseline_fc_na=False, use_augment=True)
    rows = [(f"rm_heads_{n}", full.replace(n_context_heads=n)) for n in head_counts]
    rows.append(("plausible_only", full.replace(baseline_fc_na=True)))
    rows.append(("no_augment", full.replace(use_augment=False)))
    rows.append(("reader_fc_na", full.replace(baseline_fc_na=True, use_augment=False)))
    return rows


@dataclass
class AblationReport:
    rows: list[dict] = field(default_factory=list)

    def table(self) -> str:
        keys = ("EM", "F1", "NA_accuracy", "answerable_accuracy")
        lines = [f"{'variant':<16}{'seed':>6}" + "".join(f"{k:>21}" for k in keys)]
        for r in self.rows:
            lines.append(f"{r['variant']:<16}{r['seed']:>6}" + "".join(f"{r['metrics'][k]:>21.2f}" for k in keys))
        return "\n".join(lines)


def ablate(config: RunConfig, head_counts: Sequence[int] = (4, 16, 64), out_dir: str | Path | None = None,
           seeds: Sequence[int] | None = None, train_examples=None, dev_examples=None) -> AblationReport:
    if train_examples is None:
        train_examples, dev_examples = load_datasets(config)
    seeds = list(seeds) if seeds else [config.seed]
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    report = AblationReport()
    for name, cfg in ablation_variants(config, head_counts):
        for seed in seeds:
            cfg_s = cfg.replace(seed=seed)
            path = out / f"{name}_seed{seed}.ckpt" if out else None
            ckpt = train(cfg_s, path, train_examples, dev_examples)
            metrics = evaluate(ckpt, dev_examples)
            report.rows.append({"variant": name, "seed": seed, "checkpoint": str(path) if path else None,
                                "n_params": sum(a.size for a in ckpt.params.values()),
                                "relnet_params": sum(a.size for k, a in ckpt.params.items()
                                                     if k.startswith("relnet.")),
                                "metrics": metrics})
    return report


# ---------------------------------------------------------------- inspection


def inspect(checkpoint: Checkpoint, example: Example, k: int = 5) -> list[dict]:
    """Top-k tokens (position, token, weight) of every context and question head."""
    params = model_from_checkpoint(checkpoint)
    if params.relnet is None:
        raise ValueError("inspect: checkpoint has no object extractors (baseline_fc_na)")
    batch = encode_batch([example], Vocab(checkpoint.vocab))
    with sb.no_grad():
        out = forward(params, batch, checkpoint.config)
    records = []
    for side, att, tokens in (("context", out.context_attention, example.context_tokens),
                              ("question", out.question_attention, example.question_tokens)):
        A = att.data[0]
        for head in range(A.shape[0]):
            w = A[head, :len(tokens)]
            order = np.argsort(-w, kind="stable")[:k]
            records.append({
                "example_id": example.id, "side": side, "head": head,
                "top": [{"position": int(p), "token": tokens[p], "weight": float(w[p])} for p in order],
            })
    return records


# ---------------------------------------------------------------- gradient check


def micro_config(**overrides) -> RunConfig:
    base = dict(hidden=6, embed=4, n_context_heads=3, n_question_heads=2, d_g=5, d_r=5, d_f=5, d_z=5,
                precision="float64", batch_size=2)
    base.update(overrides)
    return RunConfig(**base)


def micro_batch(vocab_size: int = 10):
    """Two examples (one answerable, one unanswerable with a plausible span)
    with unequal lengths so padding is exercised."""
    toks = [f"w{i}" for i in range(vocab_size - 2)]
    exs = [
        Example("a", toks[0:3], toks[2:6], answer_span=(1, 2), is_answerable=True),
        Example("b", toks[4:6], toks[5:8], plausible_span=(0, 1), is_answerable=False),
    ]
    vocab = Vocab(["<pad>", "<unk>"] + toks)
    return encode_batch(exs, vocab), vocab


def gradcheck(config: RunConfig | None = None, step: float = 1e-5, seed: int = 0,
              scale: float = 0.5) -> dict[str, float]:
    """Max relative error of analytic vs central-difference gradients per parameter group.

    Parameters are redrawn from N(0, scale^2), biases included, so the check
    runs at a generic point rather than at near-symmetric initial values.
    """
    config = config or micro_config()
    if config.precision != "float64":
        raise ValueError("gradcheck needs float64")
    dims = [config.hidden, config.embed, config.n_context_heads, *config.dims().values()]
    if max(dims) > 8:
        raise ValueError("gradcheck is meant for micro-configs (all dims <= 8)")
    batch, vocab = micro_batch()
    rng = np.random.default_rng(seed)
    params = init_params(config, len(vocab), rng)
    tensors = params.tensors()
    for t in tensors:
        t.data = rng.normal(0.0, scale, size=t.shape)
        t.zero_grad()
    sb.backward(forward(params, batch, config).total)
    analytic = {id(t): t.grad.copy() for t in tensors}

    def loss() -> float:
        with sb.no_grad():
            return forward(params, batch, config).total.item()

    report = {}
    for group, named in params.groups().items():
        worst = 0.0
        for _, t in named:
            num = sb.numeric_grad(loss, t, step)
            worst = max(worst, sb.relative_error(analytic[id(t)], num))
        report[group] = worst
    return {g: report[g] for g in GROUPS if g in report}


# ---------------------------------------------------------------- directional comparison


def compare_na(config: RunConfig, seeds: Sequence[int] = (0, 1, 2), out_dir: str | Path | None = None,
               progress: Callable[[dict], None] | None = None) -> dict:
    """Relation-module model vs the pooled-context projection baseline, per seed.

    Both share the reader and the plausible-answer layers and see the same
    data; only the no-answer scorer differs. Returns per-seed rows plus means
    and the wall time.
    """
    train_examples, dev_examples = load_datasets(config)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = []
    for name, cfg in (("relation_module", config.replace(baseline_fc_na=False)),
                      ("baseline_fc_na", config.replace(baseline_fc_na=True))):
        for seed in seeds:
            path = out / f"{name}_seed{seed}.ckpt" if out else None
            ckpt = train(cfg.replace(seed=seed), path, train_examples, dev_examples)
            row = {"model": name, "seed": seed, "best_epoch": ckpt.epoch, **evaluate(ckpt, dev_examples)}
            rows.append(row)
            if progress:
                progress(row)
    means = {}
    for name in ("relation_module", "baseline_fc_na"):
        mine = [r for r in rows if r["model"] == name]
        means[name] = {k: float(np.mean([r[k] for r in mine]))
                       for k in ("EM", "F1", "NA_accuracy", "answerable_accuracy")}
    return {"rows": rows, "means": means, "seconds": time.perf_counter() - t0}
