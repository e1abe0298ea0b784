"""Corpus ingestion, normalization, vocabulary, and triplet encoding.

Input corpora are JSON Lines files with ``title``, ``abstract``, and
``keyphrases`` fields.  Each document becomes one (context, title, keyphrase)
triplet per keyphrase, with a document-local extended id space for
out-of-vocabulary context words.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

logger = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
DIGIT_ID = 4

PAD_TOKEN = "⟨pad⟩"
UNK_TOKEN = "⟨unk⟩"
BOS_TOKEN = "⟨bos⟩"
EOS_TOKEN = "⟨eos⟩"
DIGIT_TOKEN = "⟨digit⟩"

SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN, DIGIT_TOKEN)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_DIGIT_RE = re.compile(r"\d+")


def tokenize_and_normalize(text: str) -> list[str]:
    """Lowercase, split off punctuation, and collapse digit runs.

    Words and punctuation marks become separate tokens; every maximal digit
    run inside a token is replaced by the digit placeholder symbol.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    return [_DIGIT_RE.sub(DIGIT_TOKEN, tok) for tok in tokens]


@dataclass
class Document:
    """One normalized document: title and abstract tokens plus keyphrases."""

    title: list[str]
    abstract: list[str]
    keyphrases: list[list[str]]

    @classmethod
    def from_raw(cls, title: str, abstract: str, keyphrases) -> "Document":
        if isinstance(keyphrases, str):
            keyphrases = [p for p in keyphrases.split(";")]
        phrases = [tokenize_and_normalize(p) for p in keyphrases]
        return cls(tokenize_and_normalize(title), tokenize_and_normalize(abstract), phrases)

    @property
    def context(self) -> list[str]:
        return self.title + self.abstract


class Vocabulary:
    """Bidirectional word/id map with fixed special tokens.

    Ids are dense; the five specials occupy ids 0..4 and are never displaced
    by corpus words.
    """

    def __init__(self, words: Iterable[str]):
        self.id_to_word: list[str] = list(SPECIAL_TOKENS)
        for w in words:
            if w in SPECIAL_TOKENS:
                raise ValueError(f"special token {w!r} cannot be a vocabulary word")
            self.id_to_word.append(w)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise ValueError("duplicate words in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def encode(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def decode(self, idx: int) -> str:
        return self.id_to_word[idx]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.id_to_word[len(SPECIAL_TOKENS) :]:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocab(docs: Iterable[Document], cap: int) -> Vocabulary:
    """Count context and keyphrase tokens, keep the most frequent.

    ``cap`` bounds the total vocabulary size including specials.  Frequency
    ties are broken lexicographically.
    """
    if cap <= len(SPECIAL_TOKENS):
        raise ValueError(f"vocabulary cap must exceed the {len(SPECIAL_TOKENS)} specials")
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in docs:
        n_docs += 1
        counts.update(doc.context)
        for phrase in doc.keyphrases:
            counts.update(phrase)
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(w for w, _ in ranked[: cap - len(SPECIAL_TOKENS)])


@dataclass
class Triplet:
    """Id-encoded (context, title, keyphrase) training example."""

    context_ids: np.ndarray
    title_ids: np.ndarray
    target_ids: np.ndarray
    context_ext_ids: np.ndarray
    oov_words: list[str]
    doc_index: int = -1

    @property
    def context_len(self) -> int:
        return len(self.context_ids)


def encode_document(
    doc: Document,
    vocab: Vocabulary,
    max_context_len: int | None = None,
    doc_index: int = -1,
) -> Triplet:
    """Encode a document's context/title with an empty target.

    Context words outside the vocabulary get extended ids ``len(vocab) + k``
    in first-occurrence order.  The context tail is truncated to
    ``max_context_len`` but the title is never truncated.
    """
    if not doc.title:
        raise ValueError("document title is empty")
    context = doc.context
    if max_context_len is not None and len(context) > max_context_len:
        context = context[: max(max_context_len, len(doc.title))]
    n_vocab = len(vocab)
    oov_index: dict[str, int] = {}
    ctx_ids = np.empty(len(context), dtype=np.int32)
    ext_ids = np.empty(len(context), dtype=np.int32)
    for i, tok in enumerate(context):
        idx = vocab.encode(tok)
        ctx_ids[i] = idx
        if idx != UNK_ID:
            ext_ids[i] = idx
        else:
            if tok not in oov_index:
                oov_index[tok] = len(oov_index)
            ext_ids[i] = n_vocab + oov_index[tok]
    title_ids = ctx_ids[: len(doc.title)].copy()
    return Triplet(
        ctx_ids, title_ids, np.empty(0, dtype=np.int32), ext_ids, list(oov_index), doc_index
    )


def encode_triplets(
    doc: Document,
    vocab: Vocabulary,
    max_context_len: int | None = None,
    doc_index: int = -1,
) -> list[Triplet]:
    """Encode one document into one triplet per keyphrase.

    Target tokens use their vocabulary id, their extended id when they occur
    in the context, and UNK otherwise; EOS is appended.  Keyphrases that are
    empty after normalization are dropped with a warning.
    """
    base = encode_document(doc, vocab, max_context_len, doc_index)
    n_vocab = len(vocab)
    oov_index = {w: i for i, w in enumerate(base.oov_words)}
    triplets = []
    for phrase in doc.keyphrases:
        if not phrase:
            logger.warning("dropping empty keyphrase in document %d", doc_index)
            continue
        target = np.empty(len(phrase) + 1, dtype=np.int32)
        for j, tok in enumerate(phrase):
            idx = vocab.encode(tok)
            if idx == UNK_ID and tok in oov_index:
                idx = n_vocab + oov_index[tok]
            target[j] = idx
        target[-1] = EOS_ID
        triplets.append(
            Triplet(base.context_ids, base.title_ids, target, base.context_ext_ids,
                    base.oov_words, doc_index)
        )
    return triplets


def load_corpus(path) -> Iterator[Document]:
    """Stream normalized documents from a JSON Lines file.

    Malformed lines (bad JSON, missing fields, empty title) are counted,
    logged, and skipped; an unreadable file is fatal.
    """
    path = Path(path)
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                doc = Document.from_raw(raw["title"], raw["abstract"], raw["keyphrases"])
                if not doc.title:
                    raise ValueError("empty title")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
                skipped += 1
                logger.warning("%s:%d: skipping malformed line (%s)", path, lineno, exc)
                continue
            yield doc
    if skipped:
        logger.info("%s: skipped %d malformed line(s)", path, skipped)


def save_triplet_cache(path, per_doc: list[list[Triplet]]) -> None:
    """Write encoded triplets, one JSON line per document."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_triplets in per_doc:
            if not doc_triplets:
                continue
            first = doc_triplets[0]
            fh.write(json.dumps({
                "ctx": first.context_ids.tolist(),
                "title_len": int(len(first.title_ids)),
                "ext": first.context_ext_ids.tolist(),
                "oov": first.oov_words,
                "targets": [t.target_ids.tolist() for t in doc_triplets
                            if len(t.target_ids)],
            }) + "\n")


def load_triplet_cache(path) -> list[list[Triplet]]:
    """Read a triplet cache back into per-document triplet lists.

    Documents cached without keyphrases come back as a single triplet with
    an empty target, which is what prediction needs.
    """
    per_doc: list[list[Triplet]] = []
    with open(path, encoding="utf-8") as fh:
        for doc_index, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            ctx = np.asarray(rec["ctx"], dtype=np.int32)
            ext = np.asarray(rec["ext"], dtype=np.int32)
            title = ctx[: rec["title_len"]].copy()
            targets = rec["targets"] or [[]]
            per_doc.append([
                Triplet(ctx, title, np.asarray(t, dtype=np.int32), ext,
                        list(rec["oov"]), doc_index)
                for t in targets
            ])
    return per_doc


@dataclass
class Batch:
    """Padded arrays for one batch of triplets."""

    context_ids: np.ndarray      # (B, Lx) int32, PAD-padded
    context_ext_ids: np.ndarray  # (B, Lx) int32
    context_mask: np.ndarray     # (B, Lx) float32
    title_ids: np.ndarray        # (B, Lt) int32
    title_mask: np.ndarray       # (B, Lt) float32
    target_ids: np.ndarray       # (B, T) int32, EOS included, PAD-padded
    target_mask: np.ndarray      # (B, T) float32
    n_oov: np.ndarray            # (B,) int32 per-row OOV counts
    triplets: list[Triplet] = field(default_factory=list)

    def __len__(self) -> int:
        return self.context_ids.shape[0]


def _pad_rows(rows: list[np.ndarray], fill: int) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=np.int32)
    mask = np.zeros((len(rows), width), dtype=np.float32)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
        mask[i, : len(r)] = 1.0
    return out, mask


def collate(triplets: list[Triplet]) -> Batch:
    """Pad a list of triplets into one batch."""
    ctx, ctx_mask = _pad_rows([t.context_ids for t in triplets], PAD_ID)
    ext, _ = _pad_rows([t.context_ext_ids for t in triplets], PAD_ID)
    title, title_mask = _pad_rows([t.title_ids for t in triplets], PAD_ID)
    target, target_mask = _pad_rows([t.target_ids for t in triplets], PAD_ID)
    n_oov = np.array([len(t.oov_words) for t in triplets], dtype=np.int32)
    return Batch(ctx, ext, ctx_mask, title, title_mask, target, target_mask, n_oov, list(triplets))


def make_batches(
    triplets: list[Triplet],
    batch_size: int,
    rng: np.random.Generator | None = None,
) -> list[Batch]:
    """Bucket triplets by context length, pad, and optionally shuffle batches.

    Batch composition is a pure function of the input order and the rng
    state, so a fixed seed fixes the epoch exactly.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = sorted(range(len(triplets)), key=lambda i: (triplets[i].context_len, i))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        rng.shuffle(chunks)
    return [collate([triplets[i] for i in chunk]) for chunk in chunks]
