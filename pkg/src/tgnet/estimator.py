"""Scikit-learn style estimator facade.

``KeyphraseGenerator`` wraps the full pipeline (vocabulary, model, training,
beam search, post-processing) behind fit/predict/score with get_params /
set_params, so it drops into sklearn tooling such as ``clone`` and grid
search.  Documents are dicts with ``title``, ``abstract`` and (for fitting)
``keyphrases`` fields, mirroring the corpus file format.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Document, build_vocab, encode_document, encode_triplets
from .metrics import evaluate
from .model import ABLATIONS, Hyperparams, build_model
from .search import POST_MODES, beam_search, postprocess
from .training import TrainSchedule, train_loop


def _as_document(item) -> Document:
    if isinstance(item, Document):
        return item
    if isinstance(item, dict):
        return Document.from_raw(
            item.get("title", ""), item.get("abstract", ""), item.get("keyphrases", [])
        )
    raise TypeError(f"expected a dict or Document, got {type(item).__name__}")


class KeyphraseGenerator(BaseEstimator):
    """Title-guided keyphrase generation as a fit/predict estimator.

    Parameters mirror the model hyperparameters plus the training schedule
    and decoding settings.  ``fit`` builds the vocabulary from the training
    documents and optimizes the network; ``predict`` returns, per document,
    a ranked list of keyphrase strings.
    """

    def __init__(
        self,
        embed_dim: int = 100,
        hidden_dim: int = 256,
        residual_weight: float = 0.5,
        vocab_size: int = 50_000,
        dropout: float = 0.1,
        batch_size: int = 64,
        learning_rate: float = 0.001,
        clip_norm: float = 1.0,
        beam_size: int = 200,
        max_depth: int = 6,
        init_range: float = 0.1,
        max_context_len: int = 400,
        epochs: int = 10,
        patience: int = 3,
        eval_every: int | None = None,
        ablation: str = "full",
        post_mode: str = "train-domain",
        top_k: int | None = None,
        random_state: int = 1337,
    ):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.residual_weight = residual_weight
        self.vocab_size = vocab_size
        self.dropout = dropout
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.beam_size = beam_size
        self.max_depth = max_depth
        self.init_range = init_range
        self.max_context_len = max_context_len
        self.epochs = epochs
        self.patience = patience
        self.eval_every = eval_every
        self.ablation = ablation
        self.post_mode = post_mode
        self.top_k = top_k
        self.random_state = random_state

    def _hyperparams(self) -> Hyperparams:
        return Hyperparams(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            residual_weight=self.residual_weight,
            vocab_size=self.vocab_size,
            dropout=self.dropout,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            clip_norm=self.clip_norm,
            beam_size=self.beam_size,
            max_depth=self.max_depth,
            init_range=self.init_range,
            max_context_len=self.max_context_len,
        ).validate()

    def _validate_docs(self, X, need_targets: bool) -> list[Document]:
        docs = [_as_document(item) for item in X]
        if not docs:
            raise ValueError("X must contain at least one document")
        for i, doc in enumerate(docs):
            if not doc.title:
                raise ValueError(f"document {i} has an empty title")
        if need_targets and not any(p for d in docs for p in d.keyphrases):
            raise ValueError("fit needs documents with keyphrases (or pass y)")
        return docs

    def fit(self, X, y=None) -> "KeyphraseGenerator":
        """Train on documents; ``y`` optionally overrides their keyphrases."""
        hp = self._hyperparams()
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.post_mode not in POST_MODES:
            raise ValueError(f"post_mode must be one of {POST_MODES}")
        docs = [_as_document(item) for item in X]
        if y is not None:
            if len(y) != len(docs):
                raise ValueError("y must align with X")
            from .data import tokenize_and_normalize

            docs = [
                Document(d.title, d.abstract,
                         [tokenize_and_normalize(p) if isinstance(p, str) else list(p)
                          for p in phrases])
                for d, phrases in zip(docs, y)
            ]
        docs = self._validate_docs(docs, need_targets=True)
        self.vocab_ = build_vocab(docs, hp.vocab_size)
        hp.vocab_size = len(self.vocab_)
        self.hyperparams_ = hp
        rng = np.random.default_rng(self.random_state)
        self.model_ = build_model(hp, self.ablation, rng)
        triplets = [
            t for i, d in enumerate(docs)
            for t in encode_triplets(d, self.vocab_, hp.max_context_len, i)
        ]
        schedule = TrainSchedule(
            max_epochs=self.epochs, eval_every=self.eval_every, patience=self.patience
        ).validate()
        result = train_loop(self.model_, triplets, triplets, hp, schedule, rng)
        self.model_.load_values(result.best_values)
        self.best_perplexity_ = result.best_perplexity
        self.train_log_ = result.log
        return self

    def predict(self, X) -> list[list[str]]:
        """Ranked keyphrases (space-joined strings) for each document."""
        check_is_fitted(self, "model_")
        docs = self._validate_docs(X, need_targets=False)
        out = []
        for i, doc in enumerate(docs):
            triplet = encode_document(doc, self.vocab_, self.hyperparams_.max_context_len, i)
            pred = postprocess(
                beam_search(self.model_, triplet, self.vocab_,
                            self.beam_size, self.max_depth, hp=self.hyperparams_),
                self.post_mode,
            )
            phrases = [" ".join(p) for p in pred.phrases]
            out.append(phrases[: self.top_k] if self.top_k else phrases)
        return out

    def score(self, X, y=None) -> float:
        """Present-keyphrase F1@5 against the documents' own keyphrases."""
        check_is_fitted(self, "model_")
        docs = self._validate_docs(X, need_targets=True)
        predictions = [[p.split() for p in preds] for preds in self.predict(docs)]
        report = evaluate(docs, predictions, ks=(5,))
        return report.present["F1@5"]
