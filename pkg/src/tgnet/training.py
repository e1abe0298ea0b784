"""Optimization loop: Adam with gradient clipping, validation-perplexity
driven learning-rate halving and early stopping, and a JSONL training log."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward, grad_for
from .data import Batch, Triplet, make_batches
from .model import Hyperparams, ModelParams, batch_loss

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus step count and current LR."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, lr: float, **kw) -> "AdamState":
        tensors = params.tensors()
        return cls(
            m={n: np.zeros_like(t.values) for n, t in tensors.items()},
            v={n: np.zeros_like(t.values) for n, t in tensors.items()},
            step=0,
            lr=lr,
            **kw,
        )


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm is <= max_norm.

    Returns the pre-clip global norm.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adam_step(
    params: ModelParams, grads: dict[str, np.ndarray], state: AdamState
) -> bool:
    """One bias-corrected Adam update in place.

    A non-finite gradient skips the whole update (the batch is dropped) and
    returns False.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            logger.warning("non-finite gradient in %s; skipping batch", name)
            return False
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, tensor in params.tensors().items():
        g = grads[name].astype(state.m[name].dtype, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        tensor.values -= update.astype(tensor.values.dtype, copy=False)
    return True


@dataclass
class TrainSchedule:
    """Evaluation cadence and the halving/early-stopping policy."""

    max_epochs: int = 10
    eval_every: int | None = None  # batches between validations; None = each epoch
    decay_factor: float = 0.5
    patience: int = 3
    min_improvement: float = 1e-4

    def validate(self) -> "TrainSchedule":
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must be in (0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be >= 1 when set")
        return self


def evaluate_perplexity(
    params: ModelParams, batches: list[Batch], hp: Hyperparams
) -> float:
    """exp(total NLL / total target tokens) over a corpus, dropout off."""
    total_nll = 0.0
    total_tokens = 0
    for batch in batches:
        _, stats = batch_loss(params, batch, hp, training=False)
        total_nll += stats.total_nll
        total_tokens += stats.tokens
    if total_tokens == 0:
        raise ValueError("perplexity over zero target tokens")
    return math.exp(total_nll / total_tokens)


@dataclass
class EarlyStopping:
    """Halve the LR on every non-improving validation; stop after
    ``patience`` consecutive ones."""

    decay_factor: float
    patience: int
    min_improvement: float
    best: float = math.inf
    streak: int = 0

    def observe(self, perplexity: float, state: AdamState) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if perplexity < self.best - self.min_improvement:
            self.best = perplexity
            self.streak = 0
            return True, False
        self.streak += 1
        state.lr *= self.decay_factor
        return False, self.streak >= self.patience


@dataclass
class TrainResult:
    best_values: dict[str, np.ndarray]
    best_perplexity: float
    opt_state: AdamState
    log: list[dict] = field(default_factory=list)
    epochs_run: int = 0


def train_loop(
    params: ModelParams,
    train_triplets: list[Triplet],
    val_triplets: list[Triplet],
    hp: Hyperparams,
    schedule: TrainSchedule,
    rng: np.random.Generator,
    log_path=None,
) -> TrainResult:
    """Optimize ``params`` in place; returns the best-validation snapshot.

    Batch composition reshuffles per epoch from ``rng``; with a fixed seed
    and a single thread the run is reproducible.
    """
    if not train_triplets or not val_triplets:
        raise ValueError("train and validation corpora must be nonempty")
    schedule.validate()
    opt = AdamState.fresh(params, lr=hp.learning_rate)
    stopper = EarlyStopping(schedule.decay_factor, schedule.patience, schedule.min_improvement)
    val_batches = make_batches(val_triplets, hp.batch_size)
    result = TrainResult(best_values=params.copy_values(), best_perplexity=math.inf, opt_state=opt)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    def emit(record: dict) -> None:
        result.log.append(record)
        if log_fh:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

    def validate_now(step: int, epoch: int) -> bool:
        ppl = evaluate_perplexity(params, val_batches, hp)
        if not math.isfinite(ppl):
            raise RuntimeError(f"validation perplexity is not finite at step {step}")
        improved, stop = stopper.observe(ppl, opt)
        if improved:
            result.best_values = params.copy_values()
            result.best_perplexity = ppl
        emit({
            "type": "validation", "step": step, "epoch": epoch,
            "perplexity": ppl, "improved": improved, "lr": opt.lr,
            "wall_time": time.time(),
        })
        return stop

    t0 = time.time()
    step = 0
    stop = False
    try:
        for epoch in range(1, schedule.max_epochs + 1):
            result.epochs_run = epoch
            batches = make_batches(train_triplets, hp.batch_size, rng)
            for batch in batches:
                tape = Tape()
                params.watch_all(tape)
                loss, _ = batch_loss(params, batch, hp, training=True, rng=rng)
                grad_map = backward(tape, loss)
                grads = {n: grad_for(grad_map, t) for n, t in params.tensors().items()}
                norm = clip_gradients(grads, hp.clip_norm)
                applied = adam_step(params, grads, opt)
                step += 1
                emit({
                    "type": "step", "step": step, "epoch": epoch,
                    "loss": float(loss.values), "grad_norm": norm,
                    "lr": opt.lr, "applied": applied,
                    "wall_time": time.time() - t0,
                })
                if schedule.eval_every is not None and step % schedule.eval_every == 0:
                    if validate_now(step, epoch):
                        stop = True
                        break
            if stop:
                break
            if schedule.eval_every is None:
                if validate_now(step, epoch):
                    break
    finally:
        if log_fh:
            log_fh.close()
    return result
