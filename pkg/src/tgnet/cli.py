"""Command-line entry point: preprocess, train, predict, eval, stats.

Configuration is resolved as defaults < config file (key=value lines) <
command-line flags, and the resolved configuration is echoed into the run
log.  Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    Document,
    Vocabulary,
    build_vocab,
    encode_document,
    encode_triplets,
    load_corpus,
    load_triplet_cache,
    save_triplet_cache,
)
from .metrics import bucket_by_title_ratio, evaluate, title_related_stats
from .model import ABLATIONS, Hyperparams, build_model
from .search import POST_MODES, beam_search, postprocess, read_predictions, write_predictions
from .training import TrainSchedule, train_loop

logger = logging.getLogger(__name__)

DEFAULT_SEED = 1337

_HP_FIELDS = (
    "embed_dim", "hidden_dim", "residual_weight", "vocab_size", "dropout",
    "batch_size", "learning_rate", "clip_norm", "beam_size", "max_depth",
    "init_range", "max_context_len",
)

_EXTRA_DEFAULTS = {
    "seed": None,  # filled from TGNET_SEED or DEFAULT_SEED at resolution time
    "epochs": 10,
    "patience": 3,
    "eval_every": None,
    "decay_factor": 0.5,
    "ablation": "full",
    "post_mode": "train-domain",
    "length_normalize": False,
}

_BOOL_KEYS = {"length_normalize"}
_INT_KEYS = {
    "embed_dim", "hidden_dim", "vocab_size", "batch_size", "beam_size",
    "max_depth", "max_context_len", "seed", "epochs", "patience", "eval_every",
}
_FLOAT_KEYS = {"residual_weight", "dropout", "learning_rate", "clip_norm",
               "init_range", "decay_factor"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's default 2
        raise UsageError(message)


def _add_config_flags(p: _Parser) -> None:
    p.add_argument("--config", help="config file with key=value lines")
    p.add_argument("--seed", type=int)
    for name in _HP_FIELDS:
        flag = "--" + name.replace("_", "-")
        kind = int if name in _INT_KEYS else float
        p.add_argument(flag, type=kind, dest=name)


def _parse_config_file(path: str) -> dict:
    known = set(_HP_FIELDS) | set(_EXTRA_DEFAULTS)
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in _BOOL_KEYS:
            out[key] = value.lower() in ("1", "true", "yes")
        elif key in _INT_KEYS:
            out[key] = int(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
        else:
            out[key] = value
    return out


def resolve_config(args: argparse.Namespace, hp_base: Hyperparams | None = None) -> dict:
    """Defaults < config file < explicit flags; later wins.

    ``hp_base`` replaces the built-in hyperparameter defaults, e.g. with the
    values stored in a checkpoint.
    """
    base = hp_base or Hyperparams()
    config = {name: getattr(base, name) for name in _HP_FIELDS}
    config.update(_EXTRA_DEFAULTS)
    env_seed = os.environ.get("TGNET_SEED")
    config["seed"] = int(env_seed) if env_seed else DEFAULT_SEED
    if getattr(args, "config", None):
        config.update(_parse_config_file(args.config))
    for key in config:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _hyperparams(config: dict) -> Hyperparams:
    return Hyperparams(**{k: config[k] for k in _HP_FIELDS}).validate()


def build_parser() -> _Parser:
    parser = _Parser(prog="tgnet", description="Title-guided keyphrase generation")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("preprocess", help="build vocabulary and triplet caches")
    p.add_argument("--train", required=True, help="training corpus (JSON lines)")
    p.add_argument("--val", help="validation corpus (JSON lines)")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", help="directory produced by preprocess")
    p.add_argument("--train", help="training corpus (JSON lines)")
    p.add_argument("--val", help="validation corpus (JSON lines)")
    p.add_argument("--model", required=True, help="checkpoint output path")
    p.add_argument("--log", help="training log path (JSON lines)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--decay-factor", type=float, dest="decay_factor")
    p.add_argument("--ablation", choices=ABLATIONS)
    _add_config_flags(p)

    p = sub.add_parser("predict", help="generate ranked keyphrases")
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="corpus to decode (JSON lines)")
    p.add_argument("--data", help="preprocessed directory to decode")
    p.add_argument("--split", choices=("train", "val"), default="train",
                   help="which cached split to decode with --data")
    p.add_argument("--output", required=True, help="predictions file")
    p.add_argument("--post-mode", choices=POST_MODES, dest="post_mode")
    p.add_argument("--length-normalize", action="store_true", default=None,
                   dest="length_normalize")
    p.add_argument("--ablation", choices=ABLATIONS)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score predictions against a corpus")
    p.add_argument("--input", required=True, help="corpus with target keyphrases")
    p.add_argument("--predictions", required=True)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--ks", default="5,10,50", help="comma-separated cutoffs")
    _add_config_flags(p)

    p = sub.add_parser("stats", help="title-relatedness and ratio-bucket statistics")
    p.add_argument("--input", required=True)
    p.add_argument("--report", help="write the JSON report here")
    _add_config_flags(p)
    return parser


def _load_docs(path) -> list[Document]:
    docs = list(load_corpus(path))
    if not docs:
        raise ValueError(f"no usable documents in {path}")
    return docs


def cmd_preprocess(args) -> int:
    config = resolve_config(args)
    hp = _hyperparams(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_docs = _load_docs(args.train)
    vocab = build_vocab(train_docs, hp.vocab_size)
    vocab.save(out_dir / "vocab.txt")
    sets = [("train", train_docs)]
    if args.val:
        sets.append(("val", _load_docs(args.val)))
    for name, docs in sets:
        per_doc = [encode_triplets(d, vocab, hp.max_context_len, i)
                   for i, d in enumerate(docs)]
        save_triplet_cache(out_dir / f"{name}.triplets.jsonl", per_doc)
        n = sum(len(x) for x in per_doc)
        logger.info("%s: %d documents, %d triplets", name, len(docs), n)
    logger.info("vocabulary: %d entries -> %s", len(vocab), out_dir / "vocab.txt")
    return 0


def _training_data(args, hp) -> tuple[Vocabulary, list, list]:
    if args.data:
        data_dir = Path(args.data)
        vocab = Vocabulary.load(data_dir / "vocab.txt")
        train = [t for doc in load_triplet_cache(data_dir / "train.triplets.jsonl")
                 for t in doc if len(t.target_ids)]
        val_path = data_dir / "val.triplets.jsonl"
        if val_path.exists():
            val = [t for doc in load_triplet_cache(val_path) for t in doc if len(t.target_ids)]
        else:
            val = train
        return vocab, train, val
    if not args.train:
        raise UsageError("train needs --data or --train")
    train_docs = _load_docs(args.train)
    vocab = build_vocab(train_docs, hp.vocab_size)
    train = [t for i, d in enumerate(train_docs)
             for t in encode_triplets(d, vocab, hp.max_context_len, i)]
    if args.val:
        val_docs = _load_docs(args.val)
        val = [t for i, d in enumerate(val_docs)
               for t in encode_triplets(d, vocab, hp.max_context_len, i)]
    else:
        val = train
    return vocab, train, val


def cmd_train(args) -> int:
    config = resolve_config(args)
    hp = _hyperparams(config)
    vocab, train, val = _training_data(args, hp)
    if not train:
        raise ValueError("no training triplets")
    hp.vocab_size = len(vocab)
    schedule = TrainSchedule(
        max_epochs=config["epochs"],
        eval_every=config["eval_every"],
        decay_factor=config["decay_factor"],
        patience=config["patience"],
    ).validate()
    rng = np.random.default_rng(config["seed"])
    params = build_model(hp, config["ablation"], rng)
    log_path = args.log or (str(args.model) + ".log.jsonl")
    logger.info("resolved config: %s", json.dumps(config, sort_keys=True))
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "config", **config}, sort_keys=True) + "\n")
    tmp_log = log_path + ".steps"
    result = train_loop(params, train, val, hp, schedule, rng, log_path=tmp_log)
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(Path(tmp_log).read_text(encoding="utf-8"))
    os.remove(tmp_log)
    params.load_values(result.best_values)
    save_checkpoint(args.model, params, vocab, hp, result.opt_state, result.best_perplexity)
    logger.info("best validation perplexity %.4f -> %s", result.best_perplexity, args.model)
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.model)
    config = resolve_config(args, hp_base=ckpt.hp)
    if args.ablation is not None and args.ablation != ckpt.ablation:
        raise ValueError(
            f"checkpoint was trained with ablation {ckpt.ablation!r}; "
            f"refusing --ablation {args.ablation}"
        )
    hp = ckpt.hp
    beam_size = config["beam_size"]
    max_depth = config["max_depth"]
    if args.data:
        cache = Path(args.data) / f"{args.split}.triplets.jsonl"
        triplets = [doc[0] for doc in load_triplet_cache(cache)]
    elif args.input:
        docs = _load_docs(args.input)
        triplets = [encode_document(d, ckpt.vocab, hp.max_context_len, i)
                    for i, d in enumerate(docs)]
    else:
        raise UsageError("predict needs --input or --data")
    logger.info("decoding %d documents (beam=%d, depth=%d)", len(triplets), beam_size, max_depth)
    predictions = []
    for triplet in triplets:
        raw = beam_search(
            ckpt.params, triplet, ckpt.vocab, beam_size, max_depth,
            hp=hp, length_normalize=config["length_normalize"],
        )
        predictions.append(postprocess(raw, config["post_mode"]))
    write_predictions(args.output, predictions)
    logger.info("wrote %s", args.output)
    return 0


def cmd_eval(args) -> int:
    docs = _load_docs(args.input)
    predictions = read_predictions(args.predictions)
    if len(docs) != len(predictions):
        raise ValueError(
            f"{len(docs)} documents but {len(predictions)} prediction lines"
        )
    try:
        ks = tuple(int(k) for k in str(args.ks).split(","))
    except ValueError as exc:
        raise UsageError(f"bad --ks: {exc}") from exc
    report = evaluate(docs, predictions, ks)
    print(report.format_table())
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    docs = _load_docs(args.input)
    stats = title_related_stats(docs)
    print(stats.format_table())
    buckets = bucket_by_title_ratio(docs)
    counts = {label: buckets.count(label) for label in dict.fromkeys(buckets)}
    print("title-length-ratio buckets:")
    for label, count in counts.items():
        print(f"  {label:6s} {count}")
    if args.report:
        payload = json.loads(stats.to_json())
        payload["ratio_buckets"] = counts
        Path(args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return 0


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        # Resolve up front so config problems surface before any work runs.
        resolve_config(args)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (FileNotFoundError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
