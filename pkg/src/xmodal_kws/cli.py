"""Command-line pipeline: synthesize data, train, evaluate, verify.

One --seed flag per subcommand feeds every random stream; stage seeds are
derived with fixed offsets so the full chain run under a single seed is
reproducible end to end. Exit codes: 0 success, 1 validation problem,
2 I/O or file-format problem.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    build_episodes,
    episodes_to_pairs,
    read_corpus_manifest,
    read_pairs_tsv,
    synth_toy_corpus,
    write_corpus_manifest,
    write_pairs_tsv,
)
from .dsp import load_wav, log_mel, save_wav
from .embeddings import (
    EmbeddingLayerTag,
    load_embedding_store,
    read_embedding,
    synth_pseudo_embedding,
    write_embedding,
    write_manifest,
)
from .errors import (
    FormatError,
    InvalidArgumentError,
    MissingFeatureError,
    TrainingDivergedError,
    ValidationError,
)
from .metrics import ScoredPair, auc, build_report, report_to_csv, roc_points, serialize_report
from .model import KwsModel, ModelConfig
from .train import TrainConfig, evaluate_pairs, export_loss_log, train_model

SEED_OFFSET_CORPUS = 0
SEED_OFFSET_EMBEDDINGS = 1000
SEED_OFFSET_PAIRS = 2000
SEED_OFFSET_TRAIN = 3000


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits(2) on bad flags; route through exit code 1 instead
    def error(self, message):
        raise _UsageError("%s\n%s" % (message, self.format_usage()))


def _worker_count(deterministic: bool) -> int:
    if deterministic:
        return 1
    env = os.environ.get("XMODAL_KWS_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise InvalidArgumentError(
                "XMODAL_KWS_THREADS must be an integer, got %r" % (env,)
            ) from None
        if n < 1:
            raise InvalidArgumentError("XMODAL_KWS_THREADS must be >= 1, got %d" % (n,))
        return n
    return min(8, os.cpu_count() or 1)


def _load_mel_store(corpus_path, records, workers: int) -> dict:
    base = Path(corpus_path).parent

    def one(rec):
        return rec.utterance_id, log_mel(load_wav(base / rec.wav_path))

    if workers <= 1:
        items = [one(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            items = list(pool.map(one, records))
    return dict(items)


def _records_for_pairs(corpus_path, pair_lists, workers: int) -> dict:
    records = read_corpus_manifest(corpus_path)
    ids = {p.audio_id for pairs in pair_lists for p in pairs}
    known = {r.utterance_id for r in records}
    missing = sorted(ids - known)
    if missing:
        raise MissingFeatureError(
            "pair files reference audio ids missing from %s: %s"
            % (corpus_path, ", ".join(missing[:5]))
        )
    needed = [r for r in records if r.utterance_id in ids]
    return _load_mel_store(corpus_path, needed, workers)


def _parse_tag(text: str) -> EmbeddingLayerTag:
    return EmbeddingLayerTag.parse(text)


# ---- Subcommands ----


def _cmd_synth_corpus(args) -> int:
    records, waves = synth_toy_corpus(
        args.keywords, args.utterances, args.seed + SEED_OFFSET_CORPUS
    )
    out = Path(args.out)
    for rec in records:
        save_wav(waves[rec.utterance_id], out / rec.wav_path)
    write_corpus_manifest(records, out / "corpus.tsv")
    print("wrote %d utterances for %d keywords under %s" % (
        len(records), args.keywords, out))
    return 0


def _cmd_synth_embeddings(args) -> int:
    records = read_corpus_manifest(args.corpus)
    keywords = sorted({r.transcript for r in records})
    tags = [_parse_tag(t) for t in args.tags.split(",") if t]
    if not tags:
        raise InvalidArgumentError("--tags must name at least one tag")
    out = Path(args.out)
    seed = args.seed + SEED_OFFSET_EMBEDDINGS
    entries = []
    for kw in keywords:
        slug = kw.replace(" ", "-")
        for tag in tags:
            seq = synth_pseudo_embedding(kw, tag, seed)
            rel = "%s_%s.ttse" % (tag.name, slug)
            write_embedding(seq, out / rel)
            entries.append((kw, tag, rel))
    write_manifest(entries, out / "embeddings.tsv")
    print("wrote %d embedding files (%d keywords x %d tags) under %s" % (
        len(entries), len(keywords), len(tags), out))
    return 0


def _split_episodes(episodes, val_fraction: float):
    if not 0.0 <= val_fraction < 1.0:
        raise InvalidArgumentError("--val-fraction must be in [0, 1)")
    if val_fraction == 0.0:
        return list(episodes), []
    by_kw: dict = {}
    for ep in episodes:
        by_kw.setdefault(ep.anchor, []).append(ep)
    train_eps, val_eps = [], []
    for kw in sorted(by_kw):
        eps = by_kw[kw]
        n_val = int(round(len(eps) * val_fraction))
        n_val = max(1, min(len(eps) - 1, n_val)) if len(eps) >= 2 else 0
        train_eps.extend(eps[: len(eps) - n_val])
        val_eps.extend(eps[len(eps) - n_val :])
    return train_eps, val_eps


def _cmd_pairs(args) -> int:
    records = read_corpus_manifest(args.corpus)
    anchors = None
    if args.anchors:
        anchors = [a.strip() for a in args.anchors.split(",") if a.strip()]
    episodes = build_episodes(
        records,
        args.seed + SEED_OFFSET_PAIRS,
        hard_threshold=args.hard_threshold,
        episodes_per_keyword=args.episodes_per_keyword,
        anchor_keywords=anchors,
    )
    if args.val_out is None:
        write_pairs_tsv(episodes_to_pairs(episodes, oov=args.oov), args.out)
        print("wrote %d pairs from %d episodes to %s" % (
            6 * len(episodes), len(episodes), args.out))
        return 0
    train_eps, val_eps = _split_episodes(episodes, args.val_fraction)
    if not val_eps:
        raise InvalidArgumentError(
            "--val-out requires --val-fraction > 0 and 2+ episodes per keyword"
        )
    write_pairs_tsv(episodes_to_pairs(train_eps, oov=args.oov), args.out)
    write_pairs_tsv(episodes_to_pairs(val_eps, oov=args.oov), args.val_out)
    print("wrote %d train pairs to %s and %d val pairs to %s" % (
        6 * len(train_eps), args.out, 6 * len(val_eps), args.val_out))
    return 0


def _cmd_train(args) -> int:
    if args.config:
        cfg = TrainConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        cfg = TrainConfig()
    fields = dict(cfg.__dict__)
    for name in ("learning_rate", "batch_size", "max_epochs", "patience", "dropout_p"):
        value = getattr(args, name)
        if value is not None:
            fields[name] = value
    if args.tag is not None:
        fields["embedding_tag"] = args.tag
    fields["rng_seed"] = args.seed + SEED_OFFSET_TRAIN
    cfg = TrainConfig(**fields)

    tag = _parse_tag(cfg.embedding_tag)
    train_pairs = read_pairs_tsv(args.train_pairs)
    val_pairs = read_pairs_tsv(args.val_pairs)
    workers = _worker_count(args.deterministic)
    mel_store = _records_for_pairs(args.corpus, [train_pairs, val_pairs], workers)
    emb_store = load_embedding_store(args.embeddings, tag)

    model = KwsModel(ModelConfig(
        text_input_width=tag.width, rng_seed=cfg.rng_seed, dropout_p=cfg.dropout_p,
    ))
    result = train_model(model, train_pairs, val_pairs, mel_store, emb_store, cfg)
    save_checkpoint(model, args.out)
    if args.loss_log:
        export_loss_log(result.history, args.loss_log)
    print("trained %d epochs (best epoch %d, val AUC %.2f)%s; checkpoint %s" % (
        result.epochs_run, result.best_epoch, result.best_val_auc,
        " [early stop]" if result.stopped_early else "", args.out))
    return 0


def _format_metric(value) -> str:
    return "undefined" if value is None else "%.2f" % (value,)


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    tag = _parse_tag(args.tag)
    if tag.width != model.config.text_input_width:
        raise InvalidArgumentError(
            "checkpoint expects %d-wide text rows but tag %s is %d wide"
            % (model.config.text_input_width, tag.name, tag.width)
        )
    pairs = read_pairs_tsv(args.pairs)
    workers = _worker_count(args.deterministic)
    mel_store = _records_for_pairs(args.corpus, [pairs], workers)
    emb_store = load_embedding_store(args.embeddings, tag)

    _, scores = evaluate_pairs(model, pairs, mel_store, emb_store)
    scored = [ScoredPair(p, s) for p, s in zip(pairs, scores)]
    report = build_report(scored)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(serialize_report(report), encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report_to_csv(report), encoding="utf-8")
    if args.roc:
        labels = [p.label for p in pairs]
        lines = ["threshold,far,frr"]
        lines += ["%.9g,%.9g,%.9g" % pt for pt in roc_points(labels, scores)]
        Path(args.roc).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.scores:
        lines = ["audio_id\tkeyword\tlabel\tscore"]
        lines += ["%s\t%s\t%d\t%.9g" % (p.audio_id, p.keyword, p.label, s)
                  for p, s in zip(pairs, scores)]
        Path(args.scores).write_text("\n".join(lines) + "\n", encoding="utf-8")
    cell = report["overall"]
    print("scored %d pairs: AUC %s EER %s F1 %s; report %s" % (
        len(pairs), _format_metric(cell["auc"]), _format_metric(cell["eer"]),
        _format_metric(cell["f1"]), out))
    return 0


def _cmd_gradcheck(args) -> int:
    from .dsp import MelSpectrogram
    from .model import score_pair_graph
    from .numerics import grad_check

    model = KwsModel(ModelConfig(rng_seed=args.seed))
    rng = np.random.default_rng([args.seed, 77])
    mel = MelSpectrogram(values=rng.standard_normal((9, 80)))
    emb = synth_pseudo_embedding("on a", EmbeddingLayerTag.E1, rng_seed=args.seed)

    report = grad_check(
        lambda: score_pair_graph(mel, emb, model),
        model.parameters(),
        tolerance=1e-4,
        max_coords_per_tensor=args.coords,
        rng_seed=args.seed,
    )
    print("checked %d coordinates across %d tensors; max relative error %.3g" % (
        report.checked_coords, len(report.per_param), report.max_rel_error))
    if not report.passed:
        worst = max(report.per_param, key=report.per_param.get)
        print("worst tensor: %s" % (worst,), file=sys.stderr)
        return 1
    return 0


def _cmd_inspect_embedding(args) -> int:
    seq = read_embedding(args.path)
    values = seq.values
    print("file: %s" % (args.path,))
    print("keyword: %s" % (seq.keyword,))
    print("tag: %s (%s-aligned, width %d)" % (
        seq.tag.name, "char" if seq.tag.char_aligned else "frame", seq.tag.width))
    print("rows: %d" % (values.shape[0],))
    print("stats: min %.6g max %.6g mean %.6g" % (
        values.min(), values.max(), values.mean()))
    return 0


# ---- Parser ----


def _build_parser() -> _Parser:
    parser = _Parser(prog="xmodal-kws",
                     description="Open-vocabulary keyword spotting pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0,
                       help="master seed; stages derive theirs by fixed offsets")
        return p

    p = add("synth-corpus", _cmd_synth_corpus, "generate the sinusoid toy corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--keywords", type=int, default=8)
    p.add_argument("--utterances", type=int, default=12)

    p = add("synth-embeddings", _cmd_synth_embeddings,
            "generate pseudo text embeddings for every corpus keyword")
    p.add_argument("--corpus", required=True, help="corpus manifest TSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tags", default="E1", help="comma-separated tags E1..E7")

    p = add("pairs", _cmd_pairs, "build episode pairs from a corpus manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="pair TSV path")
    p.add_argument("--val-out", default=None, help="optional validation pair TSV")
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--hard-threshold", type=int, default=3)
    p.add_argument("--episodes-per-keyword", type=int, default=None)
    p.add_argument("--anchors", default=None,
                   help="comma-separated keywords allowed to anchor episodes")
    p.add_argument("--oov", action="store_true",
                   help="mark emitted pairs as out-of-vocabulary")

    p = add("train", _cmd_train, "train a model on pair files")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True, help="embedding manifest TSV")
    p.add_argument("--train-pairs", required=True)
    p.add_argument("--val-pairs", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-log", default=None, help="loss CSV path")
    p.add_argument("--config", default=None, help="TrainConfig JSON")
    p.add_argument("--tag", default=None, help="embedding tag (default from config)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--dropout", dest="dropout_p", type=float, default=None)
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded feature extraction")

    p = add("eval", _cmd_eval, "score a pair file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--tag", default="E3")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", default=None, help="report CSV path")
    p.add_argument("--roc", default=None, help="ROC points CSV path")
    p.add_argument("--scores", default=None, help="per-pair score TSV path")
    p.add_argument("--deterministic", action="store_true")

    p = add("gradcheck", _cmd_gradcheck,
            "finite-difference check of the full model gradient")
    p.add_argument("--coords", type=int, default=2,
                   help="coordinates sampled per tensor")

    p = add("inspect-embedding", _cmd_inspect_embedding,
            "print the header of an embedding file")
    p.add_argument("path")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print("error: %s" % (exc,), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (InvalidArgumentError, ValidationError, MissingFeatureError) as exc:
        print("error: %s" % (exc,), file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print("error: training diverged at epoch %d, batch %d" % (
            exc.epoch, exc.batch_index), file=sys.stderr)
        return 1
    except FormatError as exc:
        print("format error: %s" % (exc,), file=sys.stderr)
        return 2
    except OSError as exc:
        print("i/o error: %s" % (exc,), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
