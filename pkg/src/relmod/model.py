"""Full model: reader + plausible-answer augmentation + object extractors +
relation network, wired into one joint loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import substrate as sb
from .augment import AugmentParams, augment_context, plausible_hidden, plausible_span_loss
from .config import RunConfig
from .data import EncodedBatch
from .objects import ExtractorParams, extract_objects, orthogonality_penalty
from .reader import ReaderParams, encode, span_logits
from .relnet import (NAHeadParams, RelationOutput, RelNetParams, joint_loss, masked_mean, na_logit,
                     relation_forward)
from .substrate import DiffTensor

GROUPS = ("reader", "augment", "context_extractor", "question_extractor", "relnet", "na_head")


@dataclass
class ModelParams:
    reader: ReaderParams
    na_head: NAHeadParams
    augment: AugmentParams | None = None
    context_extractor: ExtractorParams | None = None
    question_extractor: ExtractorParams | None = None
    relnet: RelNetParams | None = None

    def named(self) -> list[tuple[str, DiffTensor]]:
        return sb.named_tensors(self)

    def tensors(self) -> list[DiffTensor]:
        return [t for _, t in self.named()]

    def groups(self) -> dict[str, list[tuple[str, DiffTensor]]]:
        out: dict[str, list[tuple[str, DiffTensor]]] = {}
        for name, t in self.named():
            out.setdefault(name.split(".", 1)[0], []).append((name, t))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = dict(self.named())
        if set(named) != set(state):
            missing, extra = set(named) - set(state), set(state) - set(named)
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in named.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} vs {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)


def init_params(config: RunConfig, vocab_size: int, rng: np.random.Generator) -> ModelParams:
    h, dt = config.hidden, config.dtype
    params = ModelParams(reader=ReaderParams.init(rng, vocab_size, config.embed, h, dt),
                         na_head=NAHeadParams.init(rng, h, dt))
    if config.use_augment:
        params.augment = AugmentParams.init(rng, h, bias=config.augment_bias, dtype=dt)
    if not config.baseline_fc_na:
        d = config.dims()
        params.context_extractor = ExtractorParams.init(rng, h, config.n_context_heads, config.activation, dt)
        params.question_extractor = ExtractorParams.init(rng, h, config.n_question_heads, config.activation, dt)
        params.relnet = RelNetParams.init(rng, h, d["d_g"], d["d_r"], d["d_f"], d["d_z"], dt)
        na_in = d["d_z"] + (h if config.use_pooled_summary else 0)
        params.na_head = NAHeadParams.init(rng, na_in, dt)
    return params


@dataclass
class ForwardOutput:
    start: DiffTensor
    end: DiffTensor
    na: DiffTensor
    losses: dict[str, DiffTensor]
    total: DiffTensor
    context_attention: DiffTensor | None = None
    question_attention: DiffTensor | None = None
    relation: RelationOutput | None = None


def span_targets(batch: EncodedBatch) -> tuple[np.ndarray, np.ndarray]:
    """True span for answerable rows; the no-answer slot (index Lc) otherwise."""
    slot = batch.context_ids.shape[1]
    start = np.where(batch.is_answerable, batch.answer_start, slot)
    end = np.where(batch.is_answerable, batch.answer_end, slot)
    return start, end


def forward(params: ModelParams, batch: EncodedBatch, config: RunConfig) -> ForwardOutput:
    B = len(batch)
    c_mask, q_mask = batch.context_mask, batch.question_mask
    Q, C = encode(batch, params.reader)

    zero = DiffTensor(np.zeros((), dtype=C.dtype))
    aux = zero
    X = C
    if params.augment is not None:
        S, E = plausible_hidden(C, params.augment)
        X = augment_context(C, S, E, params.augment)
        aux = plausible_span_loss(S, E, c_mask, batch.plausible_start, batch.plausible_end, params.augment)

    pen_c = pen_q = zero
    ctx_att = q_att = rel = None
    if params.relnet is None:
        na = na_logit(masked_mean(C, c_mask), None, params.na_head)
    else:
        ctx = extract_objects(X, c_mask, params.context_extractor)
        qo = extract_objects(Q, q_mask, params.question_extractor)
        rel = relation_forward(ctx.O, qo.O, params.relnet)
        pooled = masked_mean(C, c_mask) if config.use_pooled_summary else None
        na = na_logit(rel.z, pooled, params.na_head, config.use_pooled_summary)
        rel.na = na
        pen_c = sb.mean(orthogonality_penalty(ctx.A, config.alpha, config.squared_penalty))
        pen_q = sb.mean(orthogonality_penalty(qo.A, config.alpha, config.squared_penalty))
        ctx_att, q_att = ctx.A, qo.A

    start, end = span_logits(C, c_mask, params.reader, na)
    t_start, t_end = span_targets(batch)
    start_ce = sb.mean(sb.cross_entropy(start, t_start))
    end_ce = sb.mean(sb.cross_entropy(end, t_end))
    aux_mean = aux * (1.0 / B)
    total = joint_loss(start_ce, end_ce, aux_mean, pen_c, pen_q, config.lambda_aux)
    losses = {"start": start_ce, "end": end_ce, "aux": aux_mean,
              "penalty_context": pen_c, "penalty_question": pen_q}
    return ForwardOutput(start=start, end=end, na=na, losses=losses, total=total,
                         context_attention=ctx_att, question_attention=q_att, relation=rel)
