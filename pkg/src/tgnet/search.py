"""Beam-search decoding over the dynamic vocabulary, plus the prediction
post-processing rules and the predictions file format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import BOS_ID, EOS_ID, PAD_ID, UNK_ID, UNK_TOKEN, Triplet, Vocabulary
from .model import (
    DecoderState,
    Hyperparams,
    ModelParams,
    decode_step,
    encode_context,
    final_distribution,
)

POST_MODES = ("train-domain", "transfer")


@dataclass
class BeamHypothesis:
    """A scored partial decode; completed iff the last token is EOS."""

    tokens: tuple[int, ...]
    log_prob: float

    @property
    def completed(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS_ID

    @property
    def content(self) -> tuple[int, ...]:
        return self.tokens[:-1] if self.completed else self.tokens


@dataclass
class Prediction:
    """Ranked keyphrases for one document."""

    phrases: list[list[str]] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.phrases)


def _ids_to_words(ids, vocab: Vocabulary, oov_words: list[str]) -> list[str]:
    out = []
    for i in ids:
        out.append(vocab.decode(i) if i < len(vocab) else oov_words[i - len(vocab)])
    return out


def beam_search(
    params: ModelParams,
    triplet: Triplet,
    vocab: Vocabulary,
    beam_size: int,
    max_depth: int,
    hp: Hyperparams | None = None,
    length_normalize: bool = False,
) -> Prediction:
    """Decode one document's ranked keyphrase candidates.

    Standard beam expansion over the mixed generate/copy distribution.
    Hypotheses that emit EOS are set aside as completed; every survivor at
    ``max_depth`` steps is incomplete.  Completed hypotheses are ranked by
    total log-probability (optionally length-normalized) and always ahead
    of incomplete ones.  PAD and the start token are never emitted.
    """
    if beam_size < 1 or max_depth < 1:
        raise ValueError("beam_size and max_depth must be >= 1")
    n_vocab = params.vocab_size
    n_total = n_vocab + len(triplet.oov_words)
    bank = encode_context(params, triplet.context_ids, triplet.title_ids, hp=hp)
    h0 = bank.dec_init.values[None, :]

    live: list[BeamHypothesis] = [BeamHypothesis((), 0.0)]
    states_h = h0.copy()
    states_ht = np.zeros_like(h0)
    completed: list[BeamHypothesis] = []

    for _ in range(max_depth):
        prev_ids = np.array(
            [h.tokens[-1] if h.tokens else BOS_ID for h in live], dtype=np.int64
        )
        prev_ids[prev_ids >= n_vocab] = UNK_ID
        emb = params.embedding.lookup(prev_ids)
        state = DecoderState(Tensor(states_h), Tensor(states_ht))
        new_state, weights, logits = decode_step(params, state, emb, bank)
        dist = final_distribution(
            logits, weights, new_state.h_tilde,
            params.copy_w, params.copy_b,
            triplet.context_ext_ids, len(triplet.oov_words),
        )
        with np.errstate(divide="ignore"):
            step_logp = np.log(dist.values)
        step_logp[:, PAD_ID] = -np.inf
        step_logp[:, BOS_ID] = -np.inf
        scores = np.array([h.log_prob for h in live])[:, None] + step_logp
        flat = scores.reshape(-1)
        order = np.argsort(-flat, kind="stable")

        next_live: list[BeamHypothesis] = []
        next_rows: list[int] = []
        for rank, idx in enumerate(order):
            if rank >= beam_size and len(next_live) >= beam_size:
                break
            score = flat[idx]
            if score == -np.inf:
                break
            row, tok = divmod(int(idx), n_total)
            hyp = BeamHypothesis(live[row].tokens + (tok,), float(score))
            if tok == EOS_ID:
                if rank < beam_size:
                    completed.append(hyp)
            elif len(next_live) < beam_size:
                next_live.append(hyp)
                next_rows.append(row)
        if not next_live:
            live = []
            break
        live = next_live
        rows = np.array(next_rows)
        states_h = new_state.h.values[rows]
        states_ht = new_state.h_tilde.values[rows]

    def sort_key(h: BeamHypothesis):
        score = h.log_prob / len(h.tokens) if length_normalize else h.log_prob
        return (-score, h.tokens)

    ranked = sorted(completed, key=sort_key) + sorted(live, key=sort_key)
    pred = Prediction()
    for h in ranked:
        if not h.content:
            continue
        pred.phrases.append(_ids_to_words(h.content, vocab, triplet.oov_words))
        pred.scores.append(
            h.log_prob / len(h.tokens) if length_normalize else h.log_prob
        )
    return pred


def postprocess(pred: Prediction, mode: str) -> Prediction:
    """Apply the evaluation-time filtering rules.

    Duplicate token sequences keep their best-ranked copy and phrases
    containing the unknown-word token are removed.  Transfer mode
    additionally keeps only the first single-word phrase; train-domain mode
    keeps all of them.
    """
    if mode not in POST_MODES:
        raise ValueError(f"mode must be one of {POST_MODES}, got {mode!r}")
    out = Prediction()
    seen: set[tuple[str, ...]] = set()
    single_seen = False
    for phrase, score in zip(pred.phrases, pred.scores):
        key = tuple(phrase)
        if key in seen:
            continue
        if UNK_TOKEN in phrase:
            continue
        if len(phrase) == 1 and mode == "transfer":
            if single_seen:
                continue
            single_seen = True
        seen.add(key)
        out.phrases.append(list(phrase))
        out.scores.append(score)
    return out


def write_predictions(path, predictions: list[Prediction]) -> None:
    """One line per document: phrases joined by ';', tokens by spaces."""
    with open(path, "w", encoding="utf-8") as fh:
        for pred in predictions:
            fh.write(";".join(" ".join(p) for p in pred.phrases) + "\n")


def read_predictions(path) -> list[list[list[str]]]:
    """Parse a predictions file into per-document phrase token lists."""
    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                out.append([])
                continue
            out.append([phrase.split() for phrase in line.split(";") if phrase.strip()])
    return out
