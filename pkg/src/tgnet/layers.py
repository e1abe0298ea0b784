"""Neural building blocks: embeddings, GRU cells, bi-GRU runner, bilinear
attention, and dropout.

All functions accept either single vectors (rank 1) or padded batches
(rank 2, rows = batch).  Sequences are Python lists of per-position tensors;
per-position masks are booleans (single) or 0/1 row vectors (batched).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, Tape, concat, gather, matmul, mul, sigmoid, slice_axis, softmax, tanh

MASK_PENALTY = -1e9


@dataclass
class GruParams:
    """Gate weights of one GRU cell.

    ``W_*`` map the input, ``U_*`` map the previous hidden state, and ``b_*``
    are gate biases.  The update convention is pinned as
    h' = (1 - z) * h_prev + z * h_cand.
    """

    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor
    input_width: int
    hidden_width: int

    @classmethod
    def zeros(cls, input_width: int, hidden_width: int, dtype=np.float32) -> "GruParams":
        def w():
            return Tensor(np.zeros((input_width, hidden_width), dtype=dtype))

        def u():
            return Tensor(np.zeros((hidden_width, hidden_width), dtype=dtype))

        def b():
            return Tensor(np.zeros(hidden_width, dtype=dtype))

        return cls(w(), u(), b(), w(), u(), b(), w(), u(), b(), input_width, hidden_width)

    @classmethod
    def uniform(
        cls,
        input_width: int,
        hidden_width: int,
        rng: np.random.Generator,
        scale: float,
        dtype=np.float32,
    ) -> "GruParams":
        def draw(*shape):
            return Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype))

        return cls(
            draw(input_width, hidden_width),
            draw(hidden_width, hidden_width),
            draw(hidden_width),
            draw(input_width, hidden_width),
            draw(hidden_width, hidden_width),
            draw(hidden_width),
            draw(input_width, hidden_width),
            draw(hidden_width, hidden_width),
            draw(hidden_width),
            input_width,
            hidden_width,
        )

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.W_z": self.W_z,
            f"{prefix}.U_z": self.U_z,
            f"{prefix}.b_z": self.b_z,
            f"{prefix}.W_r": self.W_r,
            f"{prefix}.U_r": self.U_r,
            f"{prefix}.b_r": self.b_r,
            f"{prefix}.W_h": self.W_h,
            f"{prefix}.U_h": self.U_h,
            f"{prefix}.b_h": self.b_h,
        }


@dataclass
class EmbeddingTable:
    """Shared word-embedding matrix; row 0 is the padding row."""

    weight: Tensor

    @classmethod
    def uniform(cls, vocab_size: int, dim: int, rng: np.random.Generator, scale: float, dtype=np.float32):
        return cls(Tensor(rng.uniform(-scale, scale, size=(vocab_size, dim)).astype(dtype)))

    def lookup(self, ids) -> Tensor:
        return gather(self.weight, ids)


@dataclass
class AttentionParams:
    """Bilinear score matrix; square, width = hidden size."""

    W: Tensor

    @classmethod
    def uniform(cls, dim: int, rng: np.random.Generator, scale: float, dtype=np.float32):
        return cls(Tensor(rng.uniform(-scale, scale, size=(dim, dim)).astype(dtype)))


def _check_widths(params: GruParams, x: Tensor, h_prev: Tensor) -> None:
    if x.shape[-1] != params.input_width:
        raise ValueError(
            f"gru_cell_step: input width {x.shape[-1]} does not match params ({params.input_width})"
        )
    if h_prev.shape[-1] != params.hidden_width:
        raise ValueError(
            f"gru_cell_step: hidden width {h_prev.shape[-1]} does not match params ({params.hidden_width})"
        )


def gru_cell_step(params: GruParams, x: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU step: h' = (1 - z) * h_prev + z * tanh-candidate."""
    _check_widths(params, x, h_prev)
    z = sigmoid(matmul(x, params.W_z) + matmul(h_prev, params.U_z) + params.b_z)
    r = sigmoid(matmul(x, params.W_r) + matmul(h_prev, params.U_r) + params.b_r)
    h_cand = tanh(matmul(x, params.W_h) + matmul(mul(r, h_prev), params.U_h) + params.b_h)
    one = Tensor(np.ones_like(z.values))
    return mul(one - z, h_prev) + mul(z, h_cand)


def _mask_array(mask_entry, batched: bool, dtype) -> np.ndarray | None:
    """Normalize one position's mask to None (keep), an all-pad marker, or a
    0/1 column for blending."""
    if mask_entry is None or mask_entry is True:
        return None
    if mask_entry is False:
        return np.zeros(1, dtype=dtype)
    arr = np.asarray(mask_entry, dtype=dtype)
    if arr.ndim == 0:
        return None if arr == 1.0 else np.zeros(1, dtype=dtype)
    if np.all(arr == 1.0):
        return None
    return arr.reshape(-1, 1) if batched else arr.reshape(-1)


def _masked_step(params: GruParams, x: Tensor, h_prev: Tensor, mask_entry) -> Tensor:
    """GRU step that carries the state through padded positions unchanged."""
    m = _mask_array(mask_entry, batched=x.values.ndim == 2, dtype=x.values.dtype)
    if m is not None and not m.any():
        return h_prev
    h_new = gru_cell_step(params, x, h_prev)
    if m is None:
        return h_new
    # Exact row selection: padded rows reproduce h_prev bit for bit.
    return mul(Tensor(m), h_new) + mul(Tensor(1.0 - m), h_prev)


def bigru_encode(
    fwd: GruParams,
    bwd: GruParams,
    inputs: list[Tensor],
    mask: list | None = None,
) -> list[Tensor]:
    """Run a bi-directional GRU over a sequence and concatenate directions.

    Initial states are zero vectors.  ``mask`` holds one entry per position
    (see module docstring); padded positions carry the state through
    unchanged so the last forward state belongs to the last real token.
    """
    if not inputs:
        raise ValueError("bigru_encode: empty sequence")
    if mask is None:
        mask = [True] * len(inputs)
    if len(mask) != len(inputs):
        raise ValueError("bigru_encode: mask length does not match inputs")
    first = inputs[0].values
    state_shape = first.shape[:-1] + (fwd.hidden_width,)
    h = Tensor(np.zeros(state_shape, dtype=first.dtype))
    fwd_states = []
    for x, m in zip(inputs, mask):
        h = _masked_step(fwd, x, h, m)
        fwd_states.append(h)
    h = Tensor(np.zeros(first.shape[:-1] + (bwd.hidden_width,), dtype=first.dtype))
    bwd_states: list[Tensor] = []
    for x, m in zip(reversed(inputs), reversed(mask)):
        h = _masked_step(bwd, x, h, m)
        bwd_states.append(h)
    bwd_states.reverse()
    return [concat([f, b]) for f, b in zip(fwd_states, bwd_states)]


def _attention_mask_penalty(mask, batched: bool, batch: int, dtype) -> np.ndarray | None:
    if mask is None:
        return None
    cols = []
    for entry in mask:
        if entry is None or entry is True:
            cols.append(np.ones(batch if batched else 1, dtype=dtype))
        elif entry is False:
            cols.append(np.zeros(batch if batched else 1, dtype=dtype))
        else:
            cols.append(np.asarray(entry, dtype=dtype).reshape(-1))
    valid = np.stack(cols, axis=-1) if batched else np.concatenate(cols)
    if not np.all(valid.max(axis=-1) > 0.0):
        raise ValueError("bilinear_attention: every query needs at least one unmasked key")
    if np.all(valid == 1.0):
        return None
    return ((1.0 - valid) * MASK_PENALTY).astype(dtype)


def bilinear_attention(
    query: Tensor,
    keys: list[Tensor],
    attn: AttentionParams,
    mask: list | None = None,
) -> tuple[Tensor, Tensor]:
    """Score keys with a bilinear form and return their weighted sum.

    Scores are query^T W key; masked keys get a -1e9 penalty before the
    softmax, which drives their weight to exactly zero.  Returns
    (context vector, attention weights over keys).
    """
    if not keys:
        raise ValueError("bilinear_attention: no keys")
    batched = query.values.ndim == 2
    batch = query.shape[0] if batched else 1
    q = matmul(query, attn.W)
    ones_col = Tensor(np.ones((q.shape[-1], 1), dtype=q.values.dtype))
    score_cols = [matmul(mul(q, k), ones_col) for k in keys]
    scores = concat(score_cols)
    penalty = _attention_mask_penalty(mask, batched, batch, q.values.dtype)
    if penalty is not None:
        scores = scores + Tensor(penalty)
    weights = softmax(scores)
    context = None
    for j, k in enumerate(keys):
        w_j = slice_axis(weights, -1, j, j + 1)
        term = mul(w_j, k)
        context = term if context is None else context + term
    return context, weights


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.values.dtype)
    return mul(x, Tensor(keep / (1.0 - rate)))
