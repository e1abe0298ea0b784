"""Binary checkpoint format: bit-exact round trip of every tensor.

Layout: 4-byte magic ``TGN1``, little-endian u32 format version, u64 header
length, a UTF-8 JSON header (hyperparameters, ablation flag, vocabulary,
tensor manifest, optional optimizer manifest, best-perplexity record), then
the raw little-endian float32 tensor payloads in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import SPECIAL_TOKENS, Vocabulary
from .model import Hyperparams, ModelParams, build_model
from .training import AdamState

MAGIC = b"TGN1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, corrupt, or incompatible checkpoint files."""


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: Vocabulary
    hp: Hyperparams
    opt_state: AdamState | None
    best_perplexity: float | None

    @property
    def ablation(self) -> str:
        return self.params.ablation


def _manifest(tensors: dict[str, np.ndarray]) -> list[dict]:
    return [{"name": n, "shape": list(a.shape)} for n, a in tensors.items()]


def save_checkpoint(
    path,
    params: ModelParams,
    vocab: Vocabulary,
    hp: Hyperparams,
    opt_state: AdamState | None = None,
    best_perplexity: float | None = None,
) -> None:
    tensors = {n: t.values for n, t in params.tensors().items()}
    header: dict = {
        "hyperparams": hp.to_dict(),
        "ablation": params.ablation,
        "vocab": vocab.id_to_word[len(SPECIAL_TOKENS):],
        "tensors": _manifest(tensors),
        "optimizer": None,
        "best_perplexity": best_perplexity,
    }
    payload_parts = [tensors[m["name"]].astype("<f4", copy=False).tobytes() for m in header["tensors"]]
    if opt_state is not None:
        header["optimizer"] = {
            "step": opt_state.step,
            "lr": opt_state.lr,
            "beta1": opt_state.beta1,
            "beta2": opt_state.beta2,
            "eps": opt_state.eps,
            "m": _manifest(opt_state.m),
            "v": _manifest(opt_state.v),
        }
        payload_parts += [opt_state.m[m["name"]].astype("<f4", copy=False).tobytes()
                          for m in header["optimizer"]["m"]]
        payload_parts += [opt_state.v[m["name"]].astype("<f4", copy=False).tobytes()
                          for m in header["optimizer"]["v"]]
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for part in payload_parts:
            fh.write(part)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: expected {n} bytes of {what}")
    return data


def _read_tensors(fh, manifest: list[dict]) -> dict[str, np.ndarray]:
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = _read_exact(fh, 4 * count, f"tensor {entry['name']}")
        out[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return out


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        try:
            hp = Hyperparams.from_dict(header["hyperparams"])
            ablation = header["ablation"]
            vocab = Vocabulary(header["vocab"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"invalid checkpoint header: {exc}") from exc
        tensors = _read_tensors(fh, header["tensors"])
        params = build_model(hp, ablation)
        try:
            params.load_values(tensors)
        except ValueError as exc:
            raise CheckpointError(f"checkpoint tensors do not fit the model: {exc}") from exc
        opt_state = None
        if header.get("optimizer"):
            meta = header["optimizer"]
            opt_state = AdamState(
                m=_read_tensors(fh, meta["m"]),
                v=_read_tensors(fh, meta["v"]),
                step=meta["step"],
                lr=meta["lr"],
                beta1=meta["beta1"],
                beta2=meta["beta2"],
                eps=meta["eps"],
            )
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(params, vocab, hp, opt_state, header.get("best_perplexity"))
