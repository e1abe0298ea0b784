"""Stemmed-match evaluation: F1@K / R@K, present/absent splits,
title-relatedness counts, and title-length-ratio buckets."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .data import Document
from .porter import porter_stem
from .stopwords import STOPWORDS

RATIO_BUCKET_LABELS = ("<3%", "3-6%", "6-9%", "9-12%", ">=12%")

# Percent thresholds between adjacent buckets; boundaries belong upward.
_RATIO_BOUNDS = (3, 6, 9, 12)


def stem_phrase(tokens: Sequence[str]) -> tuple[str, ...]:
    return tuple(porter_stem(t) for t in tokens)


def _is_subsequence(needle: tuple[str, ...], haystack: list[str]) -> bool:
    n = len(needle)
    if n == 0 or n > len(haystack):
        return False
    first = needle[0]
    for i in range(len(haystack) - n + 1):
        if haystack[i] == first and tuple(haystack[i : i + n]) == needle:
            return True
    return False


def split_present_absent(
    phrases: Iterable[Sequence[str]], context_tokens: Sequence[str]
) -> tuple[list[list[str]], list[list[str]]]:
    """Partition phrases by stemmed contiguous occurrence in the context."""
    stemmed_context = [porter_stem(t) for t in context_tokens]
    present, absent = [], []
    for phrase in phrases:
        phrase = list(phrase)
        if _is_subsequence(stem_phrase(phrase), stemmed_context):
            present.append(phrase)
        else:
            absent.append(phrase)
    return present, absent


def _doc_scores(predictions, targets, k: int) -> tuple[float, float, float]:
    """Precision, recall, F1 of one document's ranked predictions at k.

    Matching is stemmed exact sequence equality; a prediction is correct if
    it matches a target not already claimed by a higher-ranked prediction,
    so the shared numerator never exceeds either denominator.
    """
    top = [stem_phrase(p) for p in predictions[:k]]
    remaining = Counter(stem_phrase(t) for t in targets)
    correct = 0
    for p in top:
        if remaining.get(p, 0) > 0:
            remaining[p] -= 1
            correct += 1
    n_preds = len(top)
    n_targets = len(targets)
    precision = correct / min(k, n_preds) if n_preds else 0.0
    recall = correct / n_targets if n_targets else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def compute_metrics(
    predictions_per_doc: Sequence[Sequence[Sequence[str]]],
    targets_per_doc: Sequence[Sequence[Sequence[str]]],
    ks: Sequence[int] = (5, 10, 50),
) -> dict[str, float]:
    """Macro-averaged P@K / R@K / F1@K over documents with >= 1 target."""
    if len(predictions_per_doc) != len(targets_per_doc):
        raise ValueError("predictions and targets must align per document")
    sums = {k: [0.0, 0.0, 0.0] for k in ks}
    n_scored = 0
    for preds, targets in zip(predictions_per_doc, targets_per_doc):
        if not targets:
            continue
        n_scored += 1
        for k in ks:
            p, r, f1 = _doc_scores(preds, targets, k)
            acc = sums[k]
            acc[0] += p
            acc[1] += r
            acc[2] += f1
    out: dict[str, float] = {"documents_scored": float(n_scored)}
    for k in ks:
        p, r, f1 = sums[k]
        denom = max(n_scored, 1)
        out[f"P@{k}"] = p / denom
        out[f"R@{k}"] = r / denom
        out[f"F1@{k}"] = f1 / denom
    return out


@dataclass
class EvalReport:
    """Aggregated scores for the present and absent splits."""

    present: dict[str, float] = field(default_factory=dict)
    absent: dict[str, float] = field(default_factory=dict)
    bucket_f1_at_5: dict[str, float] = field(default_factory=dict)
    bucket_counts: dict[str, int] = field(default_factory=dict)
    n_documents: int = 0
    n_targets: int = 0
    n_predictions: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    def format_table(self) -> str:
        rows = [f"documents: {self.n_documents}  targets: {self.n_targets}  predictions: {self.n_predictions}"]
        for name, scores in (("present", self.present), ("absent", self.absent)):
            cells = "  ".join(f"{k}={v:.4f}" for k, v in sorted(scores.items()) if k != "documents_scored")
            rows.append(f"{name:8s} {cells}")
        if self.bucket_f1_at_5:
            rows.append("title-length-ratio buckets (present F1@5):")
            for label in RATIO_BUCKET_LABELS:
                if label in self.bucket_f1_at_5:
                    rows.append(
                        f"  {label:6s} n={self.bucket_counts.get(label, 0):4d}  "
                        f"F1@5={self.bucket_f1_at_5[label]:.4f}"
                    )
        return "\n".join(rows)


def evaluate(
    docs: Sequence[Document],
    predictions_per_doc: Sequence[Sequence[Sequence[str]]],
    ks: Sequence[int] = (5, 10, 50),
) -> EvalReport:
    """Split predictions and targets by presence, score, and bucket."""
    if len(docs) != len(predictions_per_doc):
        raise ValueError("one prediction list per document required")
    pres_preds, abs_preds, pres_targets, abs_targets = [], [], [], []
    for doc, preds in zip(docs, predictions_per_doc):
        ctx = doc.context
        tp, ta = split_present_absent([p for p in doc.keyphrases if p], ctx)
        pp, pa = split_present_absent(preds, ctx)
        pres_targets.append(tp)
        abs_targets.append(ta)
        pres_preds.append(pp)
        abs_preds.append(pa)
    report = EvalReport(
        present=compute_metrics(pres_preds, pres_targets, ks),
        absent=compute_metrics(abs_preds, abs_targets, ks),
        n_documents=len(docs),
        n_targets=sum(len(d.keyphrases) for d in docs),
        n_predictions=sum(len(p) for p in predictions_per_doc),
    )
    buckets = bucket_by_title_ratio(docs)
    for label in RATIO_BUCKET_LABELS:
        idx = [i for i, b in enumerate(buckets) if b == label]
        report.bucket_counts[label] = len(idx)
        if idx:
            scores = compute_metrics(
                [pres_preds[i] for i in idx], [pres_targets[i] for i in idx], ks=(5,)
            )
            report.bucket_f1_at_5[label] = scores["F1@5"]
    return report


@dataclass
class TitleRelatedStats:
    """Counts of target keyphrases sharing a non-stopword with the title."""

    present_total: int = 0
    present_related: int = 0
    absent_total: int = 0
    absent_related: int = 0

    @property
    def present_pct(self) -> float:
        return 100.0 * self.present_related / self.present_total if self.present_total else 0.0

    @property
    def absent_pct(self) -> float:
        return 100.0 * self.absent_related / self.absent_total if self.absent_total else 0.0

    def format_table(self) -> str:
        return (
            "split    keyphrases  title-related  %\n"
            f"present  {self.present_total:10d}  {self.present_related:13d}  {self.present_pct:5.2f}\n"
            f"absent   {self.absent_total:10d}  {self.absent_related:13d}  {self.absent_pct:5.2f}"
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "present": {"total": self.present_total, "title_related": self.present_related,
                            "pct": self.present_pct},
                "absent": {"total": self.absent_total, "title_related": self.absent_related,
                           "pct": self.absent_pct},
            },
            indent=2,
        )


def title_related_stats(
    docs: Iterable[Document], stopwords: frozenset[str] = STOPWORDS
) -> TitleRelatedStats:
    """Per split, count keyphrases sharing >= 1 non-stopword with the title."""
    stats = TitleRelatedStats()
    for doc in docs:
        title_words = {t for t in doc.title if t not in stopwords}
        phrases = [p for p in doc.keyphrases if p]
        present, absent = split_present_absent(phrases, doc.context)
        for split, phrase_list in (("present", present), ("absent", absent)):
            for phrase in phrase_list:
                related = any(t in title_words for t in phrase if t not in stopwords)
                if split == "present":
                    stats.present_total += 1
                    stats.present_related += int(related)
                else:
                    stats.absent_total += 1
                    stats.absent_related += int(related)
    return stats


def ratio_bucket(title_len: int, context_len: int) -> str:
    """Assign one document to its title-length-ratio bucket.

    Buckets are half-open; a ratio exactly on a boundary belongs to the
    upper bucket.  Comparison is exact integer arithmetic.
    """
    if context_len <= 0:
        raise ValueError("context length must be positive")
    for i, bound in enumerate(_RATIO_BOUNDS):
        if 100 * title_len < bound * context_len:
            return RATIO_BUCKET_LABELS[i]
    return RATIO_BUCKET_LABELS[-1]


def bucket_by_title_ratio(docs: Sequence[Document]) -> list[str]:
    return [ratio_bucket(len(d.title), len(d.context)) for d in docs]
