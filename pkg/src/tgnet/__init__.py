"""Title-guided keyphrase generation, implemented from scratch.

A compact encoder-decoder with a copy mechanism, trained with its own
reverse-mode autodiff engine, plus beam-search inference and the stemmed
F1/recall evaluation pipeline.  ``KeyphraseGenerator`` offers a
scikit-learn style fit/predict interface; the ``tgnet`` command line covers
preprocess/train/predict/eval/stats.
"""

from .autodiff import Tape, Tensor, backward, finite_difference_check
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    Document,
    Triplet,
    Vocabulary,
    build_vocab,
    encode_document,
    encode_triplets,
    load_corpus,
    tokenize_and_normalize,
)
from .estimator import KeyphraseGenerator
from .metrics import EvalReport, compute_metrics, evaluate, split_present_absent, title_related_stats
from .model import Hyperparams, ModelParams, build_model
from .porter import porter_stem
from .search import Prediction, beam_search, postprocess
from .training import TrainSchedule, train_loop

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "finite_difference_check",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "Document",
    "Triplet",
    "Vocabulary",
    "build_vocab",
    "encode_document",
    "encode_triplets",
    "load_corpus",
    "tokenize_and_normalize",
    "KeyphraseGenerator",
    "EvalReport",
    "compute_metrics",
    "evaluate",
    "split_present_absent",
    "title_related_stats",
    "Hyperparams",
    "ModelParams",
    "build_model",
    "porter_stem",
    "Prediction",
    "beam_search",
    "postprocess",
    "TrainSchedule",
    "train_loop",
    "__version__",
]
