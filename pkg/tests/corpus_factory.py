"""Synthetic corpora for end-to-end tests.

Documents are built from a small closed vocabulary; keyphrases are snippets
copied out of each document's own text, so a model that learns to copy can
reach high present-keyphrase scores.
"""

import json

import numpy as np

from tgnet.data import Document


def _words(n):
    # Alphabetic only: digits would collapse to the digit placeholder when a
    # corpus round-trips through the tokenizer.
    return ["w" + chr(97 + i // 26) + chr(97 + i % 26) for i in range(n)]


def synthetic_docs(
    n_docs: int,
    seed: int,
    n_words: int = 40,
    title_len: tuple[int, int] = (3, 6),
    abstract_len: tuple[int, int] = (14, 24),
    n_keyphrases: tuple[int, int] = (2, 4),
    keyphrases_from_title: bool = False,
) -> list[Document]:
    """Documents whose keyphrases are bigrams of their own text.

    With ``keyphrases_from_title`` every keyphrase is a bigram of the title;
    otherwise keyphrases are drawn from anywhere in the context.
    """
    rng = np.random.default_rng(seed)
    lexicon = _words(n_words)
    docs = []
    for _ in range(n_docs):
        lt = int(rng.integers(title_len[0], title_len[1] + 1))
        la = int(rng.integers(abstract_len[0], abstract_len[1] + 1))
        title = [lexicon[i] for i in rng.integers(0, n_words, size=lt)]
        abstract = [lexicon[i] for i in rng.integers(0, n_words, size=la)]
        source = title if keyphrases_from_title else title + abstract
        n_kp = int(rng.integers(n_keyphrases[0], n_keyphrases[1] + 1))
        phrases = []
        for _ in range(n_kp):
            width = 2 if len(source) >= 2 else 1
            start = int(rng.integers(0, len(source) - width + 1))
            phrases.append(source[start : start + width])
        docs.append(Document(title, abstract, phrases))
    return docs


def write_corpus(path, docs: list[Document]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps({
                "title": " ".join(doc.title),
                "abstract": " ".join(doc.abstract),
                "keyphrases": [" ".join(p) for p in doc.keyphrases],
            }) + "\n")
