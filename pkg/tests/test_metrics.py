"""Evaluation tests: stemmer fixture, metric hand cases, stats, buckets."""

from pathlib import Path

import numpy as np
import pytest

import oracles
from tgnet.data import Document
from tgnet.metrics import (
    RATIO_BUCKET_LABELS,
    bucket_by_title_ratio,
    compute_metrics,
    evaluate,
    ratio_bucket,
    split_present_absent,
    title_related_stats,
)
from tgnet.porter import porter_stem

FIXTURE = Path(__file__).parent / "data" / "porter_fixture.txt"


class TestPorterStem:
    def test_reference_fixture_all_200(self):
        pairs = [line.split() for line in FIXTURE.read_text().splitlines() if line]
        assert len(pairs) == 200
        wrong = [(w, porter_stem(w), s) for w, s in pairs if porter_stem(w) != s]
        assert wrong == []

    def test_canonical_examples(self):
        assert porter_stem("caresses") == "caress"
        assert porter_stem("sky") == "sky"
        assert porter_stem("relational") == "relat"

    def test_non_alphabetic_pass_through(self):
        for tok in ("802", "-", "⟨digit⟩", "v1", "a.b", ""):
            assert porter_stem(tok) == tok

    def test_short_words_unchanged(self):
        for tok in ("a", "is", "as", "by"):
            assert porter_stem(tok) == tok

    def test_agrees_with_independent_transcription(self):
        rng = np.random.default_rng(99)
        alpha = "abcdefghijklmnopqrstuvwxyz"
        sufs = ["", "s", "ies", "ed", "ing", "ational", "ization", "ousness",
                "iviti", "icate", "ful", "ness", "ement", "ion", "e", "ll", "y"]
        for _ in range(3000):
            base = "".join(rng.choice(list(alpha)) for _ in range(int(rng.integers(1, 8))))
            word = base + sufs[int(rng.integers(0, len(sufs)))]
            assert porter_stem(word) == oracles.reference_porter(word), word


class TestSplitPresentAbsent:
    CONTEXT = ("relevance profiling and evaluation a study of task oriented "
               "comparative evaluations of retrieval systems").split()

    def test_prefix_is_present(self):
        present, absent = split_present_absent([["relevance", "profiling"]], self.CONTEXT)
        assert present == [["relevance", "profiling"]] and absent == []

    def test_unseen_token_is_absent(self):
        present, absent = split_present_absent([["relevance", "ranking"]], self.CONTEXT)
        assert present == [] and absent == [["relevance", "ranking"]]

    def test_figure_style_phrases(self):
        phrases = [["relevance", "profiling"], ["interactive", "information", "retrieval"]]
        present, absent = split_present_absent(phrases, self.CONTEXT)
        assert present == [["relevance", "profiling"]]
        assert absent == [["interactive", "information", "retrieval"]]

    def test_stemmed_matching(self):
        # "evaluations" in context matches target "evaluation" after stemming.
        present, _ = split_present_absent([["comparative", "evaluation"]], self.CONTEXT)
        assert present == [["comparative", "evaluation"]]

    def test_partition_property(self):
        rng = np.random.default_rng(3)
        words = [f"w{i}" for i in range(20)]
        for _ in range(50):
            ctx = [words[i] for i in rng.integers(0, 20, size=15)]
            phrases = [
                [words[i] for i in rng.integers(0, 20, size=rng.integers(1, 3))]
                for _ in range(6)
            ]
            present, absent = split_present_absent(phrases, ctx)
            assert len(present) + len(absent) == len(phrases)
            merged = sorted(map(tuple, present + absent))
            assert merged == sorted(map(tuple, phrases))


def _phr(*texts):
    return [t.split() for t in texts]


class TestComputeMetrics:
    def test_perfect_predictions(self):
        targets = _phr("neural nets", "deep learning")
        scores = compute_metrics([targets], [targets], ks=(5,))
        assert scores["F1@5"] == 1.0 and scores["R@5"] == 1.0

    def test_no_overlap(self):
        scores = compute_metrics([_phr("aaa")], [_phr("bbb")], ks=(5,))
        assert scores["F1@5"] == 0.0 and scores["P@5"] == 0.0

    def test_two_correct_of_four_targets(self):
        preds = _phr("good one", "bad", "good two", "worse", "worst")
        targets = _phr("good one", "good two", "miss one", "miss two")
        scores = compute_metrics([preds], [targets], ks=(5,))
        assert scores["P@5"] == pytest.approx(0.4)
        assert scores["R@5"] == pytest.approx(0.5)
        assert scores["F1@5"] == pytest.approx(0.4444, abs=1e-4)

    def test_precision_denominator_with_few_predictions(self):
        # Two predictions, one correct: P@5 = 1/min(5, 2) = 0.5.
        preds = _phr("hit", "miss")
        targets = _phr("hit", "other", "another")
        scores = compute_metrics([preds], [targets], ks=(5,))
        assert scores["P@5"] == pytest.approx(0.5)
        assert scores["R@5"] == pytest.approx(1 / 3)

    def test_macro_average_skips_target_free_docs(self):
        preds = [_phr("hit"), _phr("anything")]
        targets = [_phr("hit"), []]
        scores = compute_metrics(preds, targets, ks=(5,))
        assert scores["documents_scored"] == 1.0
        assert scores["F1@5"] == 1.0

    def test_stemmed_equality_matching(self):
        scores = compute_metrics([_phr("neural networks")], [_phr("neural network")], ks=(5,))
        assert scores["F1@5"] == 1.0

    def test_recall_monotone_in_k(self):
        rng = np.random.default_rng(8)
        words = [f"w{i}" for i in range(12)]
        for _ in range(40):
            preds = [[words[i]] for i in rng.integers(0, 12, size=10)]
            targets = [[words[i]] for i in rng.integers(0, 12, size=4)]
            scores = compute_metrics([preds], [targets], ks=(1, 3, 5, 10, 50))
            recalls = [scores[f"R@{k}"] for k in (1, 3, 5, 10, 50)]
            assert all(a <= b + 1e-12 for a, b in zip(recalls, recalls[1:]))

    def test_misaligned_inputs_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics([[]], [[], []])


class TestTitleRelatedStats:
    def _doc(self, title, abstract, phrases):
        return Document(title.split(), abstract.split(), _phr(*phrases))

    def test_stopword_overlap_does_not_count(self):
        doc = self._doc("the study", "we analyze things", ["the approach"])
        stats = title_related_stats([doc])
        assert stats.absent_total == 1 and stats.absent_related == 0

    def test_content_word_overlap_counts(self):
        doc = self._doc("profiling retrieval systems", "a b c", ["retrieval evaluation"])
        stats = title_related_stats([doc])
        assert stats.absent_related == 1

    def test_four_doc_fixture_hand_counts(self):
        docs = [
            # present related: "graph mining" in title and context.
            self._doc("graph mining methods", "we study graph mining", ["graph mining"]),
            # present unrelated: phrase in abstract only, no title overlap.
            self._doc("neural encoders", "uses beam search widely", ["beam search"]),
            # absent related: shares "encoders"; absent unrelated: "latent codes".
            self._doc("neural encoders", "study of models", ["sparse encoders", "latent codes"]),
            # present related via stopword-free overlap "ranking".
            self._doc("ranking with titles", "a ranking function", ["ranking"]),
        ]
        stats = title_related_stats(docs)
        assert (stats.present_total, stats.present_related) == (3, 2)
        assert (stats.absent_total, stats.absent_related) == (2, 1)
        assert stats.present_pct == pytest.approx(100 * 2 / 3)
        assert stats.absent_pct == pytest.approx(50.0)


class TestRatioBuckets:
    def test_five_percent_in_second_bucket(self):
        assert ratio_bucket(5, 100) == "3-6%"

    def test_boundary_goes_up(self):
        assert ratio_bucket(3, 100) == "3-6%"
        assert ratio_bucket(12, 100) == ">=12%"

    def test_high_ratio(self):
        assert ratio_bucket(13, 100) == ">=12%"

    def test_six_doc_fixture_spans_all_buckets(self):
        docs = [
            Document(["t"] * 2, ["a"] * 98, []),    # 2%
            Document(["t"] * 3, ["a"] * 97, []),    # 3%  -> second bucket
            Document(["t"] * 5, ["a"] * 95, []),    # 5%
            Document(["t"] * 7, ["a"] * 93, []),    # 7%
            Document(["t"] * 10, ["a"] * 90, []),   # 10%
            Document(["t"] * 20, ["a"] * 80, []),   # 20%
        ]
        assert bucket_by_title_ratio(docs) == [
            "<3%", "3-6%", "3-6%", "6-9%", "9-12%", ">=12%"]

    def test_every_doc_in_exactly_one_bucket(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            lt = int(rng.integers(1, 30))
            lx = lt + int(rng.integers(0, 300))
            assert ratio_bucket(lt, lx) in RATIO_BUCKET_LABELS

    def test_zero_context_rejected(self):
        with pytest.raises(ValueError):
            ratio_bucket(1, 0)


class TestEvaluate:
    def test_report_structure(self):
        docs = [
            Document("a b".split(), "c d e f g h i j k l m n o p q r s t".split(),
                     _phr("a b", "zz qq")),
        ]
        preds = [_phr("a b", "zz qq", "c d")]
        report = evaluate(docs, preds)
        assert report.present["F1@5"] > 0
        assert report.absent["R@10"] == 1.0
        assert report.n_documents == 1
        assert sum(report.bucket_counts.values()) == 1
        assert "present" in report.format_table()
