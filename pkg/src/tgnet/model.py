"""Title-guided encoder and generate-or-copy decoder.

The encoder reads the context (title + abstract) and the title separately,
lets every context position attend over the title, and merges the gathered
title information back into the context representation through a residual
bi-GRU, producing the memory bank the decoder attends to.  The decoder is a
single forward GRU with input feeding; its output distribution interpolates
between generating from the fixed vocabulary and copying source words via
the attention weights.

Functions accept single examples (rank-1 tensors) or padded batches
(rank 2); batches are required for practical training speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    concat,
    log,
    matmul,
    mul,
    sigmoid,
    slice_axis,
    smul,
    softmax,
    sum_all,
    tanh,
)
from .data import BOS_ID, UNK_ID, SPECIAL_TOKENS, Batch
from .layers import (
    AttentionParams,
    EmbeddingTable,
    GruParams,
    bigru_encode,
    bilinear_attention,
    dropout,
    gru_cell_step,
)

ABLATIONS = ("full", "no_title", "no_copy")

PROB_FLOOR = 1e-12


@dataclass
class Hyperparams:
    """Model and optimization settings; defaults follow the reference setup."""

    embed_dim: int = 100
    hidden_dim: int = 256
    residual_weight: float = 0.5
    vocab_size: int = 50_000
    dropout: float = 0.1
    batch_size: int = 64
    learning_rate: float = 0.001
    clip_norm: float = 1.0
    beam_size: int = 200
    max_depth: int = 6
    init_range: float = 0.1
    max_context_len: int = 400

    def validate(self) -> "Hyperparams":
        if self.hidden_dim <= 0 or self.hidden_dim % 2:
            raise ValueError("hidden_dim must be a positive even number (bi-GRU halves)")
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")
        # The residual weight nominally lives in (0, 1); 1.0 is allowed as the
        # degenerate setting that bypasses the merge path entirely.
        if not 0.0 < self.residual_weight <= 1.0:
            raise ValueError("residual_weight must be in (0, 1]")
        if self.vocab_size < len(SPECIAL_TOKENS):
            raise ValueError("vocab_size must cover at least the special tokens")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        for name in ("batch_size", "beam_size", "max_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("learning_rate", "clip_norm", "init_range"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_context_len < 1:
            raise ValueError("max_context_len must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d).validate()


@dataclass
class ModelParams:
    """Every learnable tensor of the network, by role.

    The merge bi-GRU and the title-matching attention are absent in the
    ``no_title`` ablation; the copy switch is absent in ``no_copy``.
    """

    embedding: EmbeddingTable
    ctx_fwd: GruParams
    ctx_bwd: GruParams
    title_fwd: GruParams
    title_bwd: GruParams
    merge_fwd: GruParams | None
    merge_bwd: GruParams | None
    match_attn: AttentionParams | None
    dec: GruParams
    dec_attn: AttentionParams
    merge_proj: Tensor  # (2d, d): projects [attended; hidden] to the attentional vector
    out_W: Tensor       # (d, |V|)
    out_b: Tensor       # (|V|,)
    copy_w: Tensor | None  # (d, 1)
    copy_b: Tensor | None  # scalar
    ablation: str = "full"

    @property
    def vocab_size(self) -> int:
        return self.out_b.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.dec.hidden_width

    @property
    def embed_dim(self) -> int:
        return self.embedding.weight.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        """All parameter tensors in a fixed, stable order."""
        out: dict[str, Tensor] = {"embedding": self.embedding.weight}
        out.update(self.ctx_fwd.tensors("ctx_fwd"))
        out.update(self.ctx_bwd.tensors("ctx_bwd"))
        out.update(self.title_fwd.tensors("title_fwd"))
        out.update(self.title_bwd.tensors("title_bwd"))
        if self.merge_fwd is not None:
            out.update(self.merge_fwd.tensors("merge_fwd"))
            out.update(self.merge_bwd.tensors("merge_bwd"))
        if self.match_attn is not None:
            out["match_attn.W"] = self.match_attn.W
        out.update(self.dec.tensors("dec"))
        out["dec_attn.W"] = self.dec_attn.W
        out["merge_proj"] = self.merge_proj
        out["out_W"] = self.out_W
        out["out_b"] = self.out_b
        if self.copy_w is not None:
            out["copy_w"] = self.copy_w
            out["copy_b"] = self.copy_b
        return out

    def watch_all(self, tape: Tape) -> None:
        for t in self.tensors().values():
            tape.watch(t)

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors().values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.tensors().items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        tensors = self.tensors()
        if set(values) != set(tensors):
            missing = set(tensors) ^ set(values)
            raise ValueError(f"parameter name mismatch: {sorted(missing)}")
        for name, t in tensors.items():
            if values[name].shape != t.values.shape:
                raise ValueError(f"shape mismatch for {name}")
            t.values = values[name].astype(t.values.dtype, copy=True)


def build_model(
    hp: Hyperparams,
    ablation: str = "full",
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> ModelParams:
    """Initialize all parameters uniformly in [-init_range, init_range]."""
    hp.validate()
    if ablation not in ABLATIONS:
        raise ValueError(f"ablation must be one of {ABLATIONS}, got {ablation!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    d_e, d, scale = hp.embed_dim, hp.hidden_dim, hp.init_range
    half = d // 2

    def draw(*shape):
        return Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype))

    embedding = EmbeddingTable.uniform(hp.vocab_size, d_e, rng, scale, dtype)
    ctx_fwd = GruParams.uniform(d_e, half, rng, scale, dtype)
    ctx_bwd = GruParams.uniform(d_e, half, rng, scale, dtype)
    title_fwd = GruParams.uniform(d_e, half, rng, scale, dtype)
    title_bwd = GruParams.uniform(d_e, half, rng, scale, dtype)
    if ablation == "no_title":
        merge_fwd = merge_bwd = None
        match_attn = None
    else:
        merge_fwd = GruParams.uniform(2 * d, half, rng, scale, dtype)
        merge_bwd = GruParams.uniform(2 * d, half, rng, scale, dtype)
        match_attn = AttentionParams.uniform(d, rng, scale, dtype)
    dec = GruParams.uniform(d_e + d, d, rng, scale, dtype)
    dec_attn = AttentionParams.uniform(d, rng, scale, dtype)
    merge_proj = draw(2 * d, d)
    out_W = draw(d, hp.vocab_size)
    out_b = draw(hp.vocab_size)
    if ablation == "no_copy":
        copy_w = copy_b = None
    else:
        copy_w = draw(d, 1)
        copy_b = Tensor(np.asarray(rng.uniform(-scale, scale), dtype=dtype))
    return ModelParams(
        embedding, ctx_fwd, ctx_bwd, title_fwd, title_bwd,
        merge_fwd, merge_bwd, match_attn, dec, dec_attn,
        merge_proj, out_W, out_b, copy_w, copy_b, ablation,
    )


@dataclass
class MemoryBank:
    """Per-position context vectors plus the decoder's initial state."""

    vectors: list[Tensor]
    dec_init: Tensor
    mask: list | None

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class DecoderState:
    """Recurrent decoder state with the input-feeding vector."""

    h: Tensor
    h_tilde: Tensor
    last_token: np.ndarray | None = None


def _columns(ids: np.ndarray) -> list[np.ndarray]:
    if ids.ndim == 1:
        return [np.asarray(i) for i in ids]
    return [ids[:, t] for t in range(ids.shape[1])]


def _mask_columns(mask: np.ndarray | None) -> list | None:
    if mask is None:
        return None
    mask = np.asarray(mask)
    if mask.ndim == 1:
        return [bool(m) for m in mask]
    return [mask[:, t] for t in range(mask.shape[1])]


def _embed_sequence(params, ids, hp, training, rng) -> list[Tensor]:
    out = []
    for col in _columns(np.asarray(ids)):
        e = params.embedding.lookup(col)
        out.append(dropout(e, hp.dropout, training, rng) if training else e)
    return out


def _halves_concat(first: Tensor, last: Tensor, d: int) -> Tensor:
    fwd_final = slice_axis(last, -1, 0, d // 2)
    bwd_first = slice_axis(first, -1, d // 2, d)
    return concat([fwd_final, bwd_first])


def encode_context(
    params: ModelParams,
    context_ids,
    title_ids,
    context_mask=None,
    title_mask=None,
    hp: Hyperparams | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> MemoryBank:
    """Build the title-guided memory bank for one document or batch.

    Context and title are encoded by separate bi-GRUs; every context
    position (title positions included) gathers title information through
    bilinear attention; a merge bi-GRU over [context; gathered] is combined
    with the context encoding through the weighted residual.  The decoder's
    initial state is the final forward and first backward merge states.
    """
    context_ids = np.asarray(context_ids)
    title_ids = np.asarray(title_ids)
    if context_ids.shape[-1] == 0:
        raise ValueError("encode_context: empty context")
    if title_ids.shape[-1] == 0:
        raise ValueError("encode_context: empty title")
    if hp is None:
        hp = Hyperparams(
            embed_dim=params.embed_dim,
            hidden_dim=params.hidden_dim,
            vocab_size=params.vocab_size,
        )
    d = params.hidden_dim
    ctx_cols = _mask_columns(context_mask)
    ctx_emb = _embed_sequence(params, context_ids, hp, training, rng)
    u = bigru_encode(params.ctx_fwd, params.ctx_bwd, ctx_emb, ctx_cols)

    if params.ablation == "no_title":
        dec_init = _halves_concat(u[0], u[-1], d)
        return MemoryBank(u, dec_init, ctx_cols)

    title_cols = _mask_columns(title_mask)
    title_emb = _embed_sequence(params, title_ids, hp, training, rng)
    v = bigru_encode(params.title_fwd, params.title_bwd, title_emb, title_cols)

    merge_inputs = []
    for u_i in u:
        c_i, _ = bilinear_attention(u_i, v, params.match_attn, title_cols)
        merge_inputs.append(concat([u_i, c_i]))
    m = bigru_encode(params.merge_fwd, params.merge_bwd, merge_inputs, ctx_cols)
    lam = hp.residual_weight
    bank = [smul(lam, u_i) + smul(1.0 - lam, m_i) for u_i, m_i in zip(u, m)]
    dec_init = _halves_concat(m[0], m[-1], d)
    return MemoryBank(bank, dec_init, ctx_cols)


def initial_decoder_state(params: ModelParams, bank: MemoryBank) -> DecoderState:
    h0 = bank.dec_init
    h_tilde0 = Tensor(np.zeros_like(h0.values))
    return DecoderState(h0, h_tilde0, None)


def decode_step(
    params: ModelParams,
    state: DecoderState,
    prev_embedding: Tensor,
    bank: MemoryBank,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.0,
) -> tuple[DecoderState, Tensor, Tensor]:
    """Advance the decoder one step.

    Returns the new state, the attention weights over the memory bank, and
    the generation logits over the fixed vocabulary.
    """
    if not bank.vectors:
        raise ValueError("decode_step: empty memory bank")
    if state.h.shape[-1] != params.dec.hidden_width:
        raise ValueError(
            f"decode_step: state width {state.h.shape[-1]} does not match decoder ({params.dec.hidden_width})"
        )
    x = concat([prev_embedding, state.h_tilde])
    h = gru_cell_step(params.dec, x, state.h)
    attended, weights = bilinear_attention(h, bank.vectors, params.dec_attn, bank.mask)
    h_tilde = tanh(matmul(concat([attended, h]), params.merge_proj))
    if training and dropout_rate > 0.0:
        h_tilde = dropout(h_tilde, dropout_rate, training, rng)
    logits = matmul(h_tilde, params.out_W) + params.out_b
    return DecoderState(h, h_tilde, None), weights, logits


def final_distribution(
    gen_logits: Tensor,
    attn_weights: Tensor,
    h_tilde: Tensor,
    copy_w: Tensor | None,
    copy_b: Tensor | None,
    context_ext_ids,
    oov_count: int,
) -> Tensor:
    """Mix the generation and copy distributions over the dynamic vocabulary.

    The output covers the fixed vocabulary plus ``oov_count`` extended slots
    for this document's out-of-vocabulary context words.  Generation
    probability is zero on extended slots; copy probability is zero for
    words absent from the context.  With ``copy_w`` None the copy path is
    disabled and the result is the padded generation distribution.
    """
    ext = np.asarray(context_ext_ids, dtype=np.int64)
    n_vocab = gen_logits.shape[-1]
    n_total = n_vocab + int(oov_count)
    if ext.size and (ext.min() < 0 or ext.max() >= n_total):
        raise ValueError(
            f"extended id out of range: max {int(ext.max())} for dynamic vocabulary of {n_total}"
        )
    p_vocab = softmax(gen_logits)
    if oov_count > 0:
        pad_shape = p_vocab.shape[:-1] + (int(oov_count),)
        p_vocab = concat([p_vocab, Tensor(np.zeros(pad_shape, dtype=p_vocab.values.dtype))])
    if copy_w is None:
        return p_vocab
    scatter = np.zeros((ext.size, n_total), dtype=attn_weights.values.dtype)
    scatter[np.arange(ext.size), ext] = 1.0
    copy_dist = matmul(attn_weights, Tensor(scatter))
    g = sigmoid(matmul(h_tilde, copy_w) + copy_b)
    one = Tensor(np.ones_like(g.values))
    return mul(one - g, p_vocab) + mul(g, copy_dist)


def _step_pick(dist: Tensor, target_col: np.ndarray) -> Tensor:
    """Row-gather dist[b, target[b]] as a column tensor."""
    n = dist.shape[-1]
    if dist.values.ndim == 1:
        onehot = np.zeros(n, dtype=dist.values.dtype)
        onehot[int(target_col)] = 1.0
    else:
        onehot = np.zeros((dist.shape[0], n), dtype=dist.values.dtype)
        onehot[np.arange(dist.shape[0]), target_col] = 1.0
    ones = Tensor(np.ones((n, 1), dtype=dist.values.dtype))
    return matmul(mul(dist, Tensor(onehot)), ones)


def nll_loss(
    step_distributions: Sequence[Tensor],
    target_ids: np.ndarray,
    target_mask: np.ndarray | None = None,
) -> Tensor:
    """Negative log likelihood of the targets under per-step distributions.

    Log probabilities are summed over unpadded steps and averaged over the
    batch rows.  Probabilities are floored at 1e-12 before the log.
    """
    target_ids = np.asarray(target_ids)
    if target_ids.ndim == 1:
        target_ids = target_ids[None, :]
        if target_mask is not None:
            target_mask = np.asarray(target_mask)[None, :]
    n_rows, n_steps = target_ids.shape
    if len(step_distributions) != n_steps:
        raise ValueError(
            f"nll_loss: {len(step_distributions)} distributions for {n_steps} target steps"
        )
    total = None
    for t, dist in enumerate(step_distributions):
        batched = dist.values.ndim == 2
        col = target_ids[:, t] if batched else target_ids[0, t]
        picked = _step_pick(dist, col)
        floor = Tensor(np.full_like(picked.values, PROB_FLOOR))
        step_ll = log(picked + floor)
        if target_mask is not None:
            m = np.asarray(target_mask[:, t], dtype=picked.values.dtype)
            step_ll = mul(step_ll, Tensor(m.reshape(-1, 1) if batched else m.reshape(())))
        total = step_ll if total is None else total + step_ll
    return smul(-1.0 / n_rows, sum_all(total))


@dataclass
class LossStats:
    """Bookkeeping from one loss evaluation."""

    tokens: int = 0
    total_nll: float = 0.0
    zero_prob_steps: int = 0

    @property
    def per_token_nll(self) -> float:
        return self.total_nll / max(self.tokens, 1)


def batch_loss(
    params: ModelParams,
    batch: Batch,
    hp: Hyperparams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, LossStats]:
    """Teacher-forced negative log likelihood of one batch.

    Equivalent to scoring each target under ``final_distribution`` and
    applying ``nll_loss``, but gathers the target's generation and copy
    probabilities directly so the full dynamic-vocabulary distribution is
    never materialized.
    """
    n_vocab = params.vocab_size
    bank = encode_context(
        params, batch.context_ids, batch.title_ids,
        batch.context_mask, batch.title_mask, hp, training, rng,
    )
    state = initial_decoder_state(params, bank)
    targets = batch.target_ids
    if params.ablation == "no_copy":
        targets = np.where(targets >= n_vocab, UNK_ID, targets)
    n_rows, n_steps = targets.shape
    dec_inputs = np.concatenate(
        [np.full((n_rows, 1), BOS_ID, dtype=targets.dtype), targets[:, :-1]], axis=1
    )
    dec_inputs = np.where(dec_inputs >= n_vocab, UNK_ID, dec_inputs)

    ones_v = Tensor(np.ones((n_vocab, 1), dtype=params.out_b.values.dtype))
    ones_l = Tensor(np.ones((batch.context_ids.shape[1], 1), dtype=params.out_b.values.dtype))
    stats = LossStats(tokens=int(batch.target_mask.sum()))
    total = None
    for t in range(n_steps):
        mask_col = batch.target_mask[:, t]
        if not mask_col.any():
            break
        emb = params.embedding.lookup(dec_inputs[:, t])
        if training:
            emb = dropout(emb, hp.dropout, training, rng)
        state, attn, logits = decode_step(
            params, state, emb, bank, training, rng, hp.dropout
        )
        p_vocab = softmax(logits)
        target_col = targets[:, t]
        in_vocab = target_col < n_vocab
        onehot = np.zeros((n_rows, n_vocab), dtype=p_vocab.values.dtype)
        rows = np.arange(n_rows)[in_vocab]
        onehot[rows, target_col[in_vocab]] = 1.0
        p_gen = matmul(mul(p_vocab, Tensor(onehot)), ones_v)
        if params.ablation == "no_copy":
            p_target = p_gen
        else:
            match = (batch.context_ext_ids == target_col[:, None]) & (batch.context_mask > 0)
            p_copy = matmul(mul(attn, Tensor(match.astype(attn.values.dtype))), ones_l)
            g = sigmoid(matmul(state.h_tilde, params.copy_w) + params.copy_b)
            one = Tensor(np.ones_like(g.values))
            p_target = mul(one - g, p_gen) + mul(g, p_copy)
        stats.zero_prob_steps += int(((p_target.values.reshape(-1) == 0.0) & (mask_col > 0)).sum())
        floor = Tensor(np.full_like(p_target.values, PROB_FLOOR))
        step_ll = mul(log(p_target + floor), Tensor(mask_col.reshape(-1, 1).astype(p_target.values.dtype)))
        total = step_ll if total is None else total + step_ll
    loss = smul(-1.0 / n_rows, sum_all(total))
    stats.total_nll = float(loss.values) * n_rows
    return loss, stats
