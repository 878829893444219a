"""Acceptance gate: every release criterion as one pass/fail test.

Each test here restates its oracle from scratch rather than importing the
suite-internal helpers, so a bug in shared test code cannot hide a bug in the
library. Budgets (gradient-suite seconds, experiment wall clock) are asserted,
not just logged.
"""

import functools
import itertools
import json
import time

import numpy as np
import pytest

from xmodal_kws import cli
from xmodal_kws.data import levenshtein, synth_toy_corpus
from xmodal_kws.dsp import SAMPLE_RATE, MelSpectrogram, Waveform, log_mel
from xmodal_kws.embeddings import EmbeddingLayerTag, synth_pseudo_embedding
from xmodal_kws.experiment import ToyExperimentConfig, run_toy_experiment
from xmodal_kws.metrics import auc, eer, f1, roc_points
from xmodal_kws.model import (
    KwsModel,
    ModelConfig,
    cross_attend_batch,
    encode_audio_batch,
    encode_text_batch,
    score_batch,
    score_pair,
    score_pair_graph,
)
from xmodal_kws.numerics import (
    BatchNorm,
    GruParams,
    Tensor,
    bce_loss,
    bigru_forward,
    conv2d_forward,
    dense_forward,
    grad_check,
    masked_softmax,
)
from xmodal_kws.numerics import tensor as tz


def _rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


# ---- Gradient suite ----


def test_gradient_suite_under_budget():
    """Finite differences agree (rel err <= 1e-4) for every layer and the
    composed single-pair score; whole suite under 60 s."""
    t0 = time.monotonic()

    w = Tensor(_rand((3, 5), 1), requires_grad=True)
    b = Tensor(_rand((3,), 2), requires_grad=True)
    x = Tensor(_rand((5,), 3), requires_grad=True)
    rep = grad_check(lambda: tz.tensor_sum(tz.tanh(dense_forward(x, w, b))),
                     [("w", w), ("b", b), ("x", x)], tolerance=1e-4)
    assert rep.passed, rep.per_param

    xc = Tensor(_rand((2, 5, 4), 4), requires_grad=True)
    k = Tensor(_rand((3, 2, 3, 3), 5) * 0.5, requires_grad=True)
    bc = Tensor(_rand((3,), 6), requires_grad=True)
    rep = grad_check(lambda: tz.tensor_sum(tz.tanh(conv2d_forward(xc, k, bc, 2))),
                     [("x", xc), ("k", k), ("b", bc)], tolerance=1e-4)
    assert rep.passed, rep.per_param

    bn = BatchNorm(2)
    xb = Tensor(_rand((3, 2, 2, 3), 7), requires_grad=True)
    rep = grad_check(lambda: tz.tensor_sum(tz.tanh(bn(xb, "train"))),
                     [("x", xb), ("gamma", bn.gamma), ("beta", bn.beta)],
                     tolerance=1e-4)
    assert rep.passed, rep.per_param

    def gru_params(seed):
        p = GruParams.zeros(3, 4)
        rng = np.random.default_rng(seed)
        for _, t in p.named("g"):
            t.data = rng.standard_normal(t.shape) * 0.4
        return p

    pf, pb = gru_params(8), gru_params(9)
    xg = Tensor(_rand((4, 2, 3), 10), requires_grad=True)
    mask = np.ones((4, 2), dtype=bool)
    mask[3:, 1] = False
    rep = grad_check(lambda: tz.tensor_sum(tz.tanh(bigru_forward(xg, pf, pb, mask))),
                     [("x", xg)] + pf.named("fwd") + pb.named("bwd"),
                     tolerance=1e-4)
    assert rep.passed, rep.per_param

    xs = Tensor(_rand((3, 5), 11), requires_grad=True)
    smask = np.array([True, True, False, True, False])
    rep = grad_check(lambda: tz.tensor_sum(masked_softmax(xs, smask) ** 2.0),
                     [("x", xs)], tolerance=1e-4)
    assert rep.passed, rep.per_param

    logits = Tensor(_rand((6,), 12), requires_grad=True)
    y = (_rand((6,), 13) > 0).astype(float)
    rep = grad_check(lambda: bce_loss(tz.sigmoid(logits), y),
                     [("logits", logits)], tolerance=1e-4)
    assert rep.passed, rep.per_param

    # Composed model on a 4-frame x 3-character pair, every parameter tensor.
    model = KwsModel(ModelConfig(rng_seed=5))
    mel = MelSpectrogram(_rand((4, 80), 14))
    emb = synth_pseudo_embedding("ten", EmbeddingLayerTag.E1, 15)
    rep = grad_check(lambda: score_pair_graph(mel, emb, model),
                     model.named_parameters(), tolerance=1e-4,
                     max_coords_per_tensor=3, rng_seed=16)
    assert rep.passed, {n: e for n, e in rep.per_param.items()
                        if e > rep.tolerance}

    assert time.monotonic() - t0 < 60.0


# ---- Metric oracles ----


def _instances(n_instances, seed, distinct=False):
    """Random scored sets with both classes present.

    distinct=False quantizes scores to force ties; distinct=True keeps every
    score unique (integer rank plus a sub-unit fraction).
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_instances):
        n = int(rng.integers(4, 40))
        labels = (rng.random(n) < 0.4).astype(int)
        labels[0], labels[1] = 1, 0
        if distinct:
            scores = (rng.permutation(n) + rng.random(n)) / n
        else:
            scores = rng.integers(0, 8, size=n) / 7.0
        out.append((labels.tolist(), scores.tolist()))
    return out


def test_auc_matches_bruteforce_pairwise_oracle():
    for labels, scores in _instances(200, seed=100):
        pos = [s for s, l in zip(scores, labels) if l == 1]
        neg = [s for s, l in zip(scores, labels) if l == 0]
        wins = 0.0
        for p in pos:
            for q in neg:
                if p > q:
                    wins += 1.0
                elif p == q:
                    wins += 0.5
        oracle = 100.0 * wins / (len(pos) * len(neg))
        assert abs(auc(labels, scores) - oracle) < 1e-12


def _eer_sweep_oracle(labels, scores):
    """Recompute EER over scores, midpoints, and beyond-range sentinels."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    uniq = sorted(set(scores))
    cands = list(uniq) + [(a + b) / 2.0 for a, b in zip(uniq, uniq[1:])]
    cands += [uniq[0] - 1.0, uniq[-1] + 1.0]
    best = None
    for t in sorted(cands):
        far = sum(1 for s in neg if s >= t) / len(neg)
        frr = sum(1 for s in pos if s < t) / len(pos)
        key = (abs(far - frr), far + frr)
        if best is None or key < best[0]:
            best = (key, 100.0 * (far + frr) / 2.0)
    return best[1]


def _interpolated_crossing(labels, scores):
    """FAR=FRR value of the piecewise-linear ROC, in percent."""
    pts = [(far, frr) for _, far, frr in roc_points(labels, scores)]
    for (f0, r0), (f1, r1) in zip(pts, pts[1:]):
        g0, g1 = f0 - r0, f1 - r1
        if g0 >= 0.0 >= g1:
            if g0 == g1:
                return 100.0 * (f0 + r0) / 2.0
            lam = g0 / (g0 - g1)
            return 100.0 * (f0 + lam * (f1 - f0))
    raise AssertionError("ROC never crosses the diagonal")


def test_eer_matches_sweep_oracle_and_roc_crossing():
    # Exact sweep agreement must survive tie blocks; the granularity bound
    # against the linear ROC crossing only holds when scores are distinct
    # (a tie block moves FAR and FRR several samples in one threshold step).
    for labels, scores in _instances(200, seed=200):
        assert eer(labels, scores) == _eer_sweep_oracle(labels, scores)
    for labels, scores in _instances(200, seed=201, distinct=True):
        got = eer(labels, scores)
        assert got == _eer_sweep_oracle(labels, scores)
        n_pos, n_neg = sum(labels), len(labels) - sum(labels)
        bound = 100.0 / (2.0 * min(n_pos, n_neg))
        assert abs(got - _interpolated_crossing(labels, scores)) <= bound + 1e-12


def test_f1_matches_hand_counted_confusions():
    for labels, scores in _instances(50, seed=300):
        tp = fp = fn = 0
        for l, s in zip(labels, scores):
            pred = s >= 0.5
            if pred and l == 1:
                tp += 1
            elif pred and l == 0:
                fp += 1
            elif not pred and l == 1:
                fn += 1
        denom = 2.0 * tp + fp + fn
        oracle = 0.0 if denom == 0.0 else 100.0 * 2.0 * tp / denom
        assert f1(labels, scores) == oracle


# ---- Edit distance ----


@functools.cache
def _lev_rec(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        _lev_rec(a[1:], b) + 1,
        _lev_rec(a, b[1:]) + 1,
        _lev_rec(a[1:], b[1:]) + (a[0] != b[0]),
    )


def test_levenshtein_exhaustive_small_alphabet():
    words = [""]
    for n in range(1, 7):
        words += ["".join(p) for p in itertools.product("abc", repeat=n)]
    assert len(words) == 1093
    for a in words:
        for b in words:
            assert levenshtein(a, b) == _lev_rec(a, b)
    _lev_rec.cache_clear()


def test_levenshtein_pinned_example():
    assert levenshtein("madame", "modem") == 3


# ---- Shape and masking invariants ----


def test_score_grid_padding_invariance_attention_mass():
    """Every (frames, chars) in {1..60}x{1..12}: the pair scores, right
    padding moves the score < 1e-9, and attention rows sum to 1."""
    model = KwsModel(ModelConfig(rng_seed=21))
    rng = np.random.default_rng(22)
    letters = "abcdefghijkl"
    embs = {m: synth_pseudo_embedding(letters[:m], EmbeddingLayerTag.E1, 23)
            for m in range(1, 13)}
    for n in range(1, 61):
        mel_vals = rng.standard_normal((n, 80))
        mel = MelSpectrogram(mel_vals)
        for m in range(1, 13):
            e = embs[m]
            base = score_pair(mel, e, model)
            assert 0.0 <= base <= 1.0

            block = np.zeros((1, n + 7, 80))
            block[0, :n] = mel_vals
            mel_mask = np.zeros((1, n + 7), dtype=bool)
            mel_mask[0, :n] = True
            emb_block = np.zeros((1, m + 3, e.values.shape[1]))
            emb_block[0, :m] = e.values
            text_mask = np.zeros((1, m + 3), dtype=bool)
            text_mask[0, :m] = True

            text = encode_text_batch(model, emb_block, text_mask)
            audio, audio_mask = encode_audio_batch(model, block, mel_mask)
            _, weights = cross_attend_batch(model, text, audio, audio_mask)
            sums = weights.data[0, :m].sum(axis=1)
            np.testing.assert_allclose(sums, 1.0, rtol=0.0, atol=1e-12)
            assert (weights.data[0][:, ~audio_mask[0]] == 0.0).all()

            padded = float(
                score_batch(model, block, mel_mask, emb_block, text_mask).data[0]
            )
            assert abs(padded - base) < 1e-9


# ---- End-to-end toy experiment ----


@pytest.fixture(scope="module")
def toy_result():
    cfg = ToyExperimentConfig()
    # The release configuration, pinned.
    assert cfg.rng_seed == 7
    assert cfg.n_keywords == 8 and cfg.utterances_per_keyword == 20
    assert cfg.n_oov_keywords == 2
    assert cfg.embedding_tag is EmbeddingLayerTag.E1
    assert cfg.hard_threshold == 3
    assert cfg.batch_size == 32 and cfg.learning_rate == 1e-4
    assert cfg.max_epochs == 50 and cfg.patience == 10
    return run_toy_experiment(cfg)


def test_toy_corpus_spans_word_lengths():
    records, _ = synth_toy_corpus(8, 1, rng_seed=7)
    lengths = {r.word_length for r in records}
    assert lengths == {1, 2, 3, 4}


def test_toy_experiment_in_vocab_targets(toy_result):
    assert toy_result.in_vocab_auc >= 95.0
    assert toy_result.in_vocab_eer <= 10.0
    assert toy_result.train_result.epochs_run <= 50
    assert toy_result.wall_time_s < 900.0


def test_toy_experiment_oov_generalization(toy_result):
    assert toy_result.n_oov_pairs > 0
    assert toy_result.oov_auc >= 75.0


# ---- Determinism ----


def _run_pipeline(root, seed):
    corpus = root / "corpus"
    embs = root / "embs"
    run = root / "run"
    run.mkdir()
    assert cli.main(["synth-corpus", "--out", str(corpus), "--keywords", "3",
                     "--utterances", "6", "--seed", str(seed)]) == 0
    assert cli.main(["synth-embeddings", "--corpus", str(corpus / "corpus.tsv"),
                     "--out", str(embs), "--tags", "E1",
                     "--seed", str(seed)]) == 0
    assert cli.main(["pairs", "--corpus", str(corpus / "corpus.tsv"),
                     "--out", str(run / "train.tsv"),
                     "--val-out", str(run / "val.tsv"), "--val-fraction", "0.34",
                     "--seed", str(seed)]) == 0
    assert cli.main(["train", "--corpus", str(corpus / "corpus.tsv"),
                     "--embeddings", str(embs / "embeddings.tsv"),
                     "--train-pairs", str(run / "train.tsv"),
                     "--val-pairs", str(run / "val.tsv"),
                     "--tag", "E1", "--batch-size", "8", "--max-epochs", "2",
                     "--out", str(run / "model.npz"),
                     "--loss-log", str(run / "loss.csv"),
                     "--seed", str(seed), "--deterministic"]) == 0
    assert cli.main(["eval", "--corpus", str(corpus / "corpus.tsv"),
                     "--embeddings", str(embs / "embeddings.tsv"),
                     "--pairs", str(run / "val.tsv"),
                     "--checkpoint", str(run / "model.npz"), "--tag", "E1",
                     "--out", str(run / "report.json"),
                     "--seed", str(seed), "--deterministic"]) == 0
    return (run / "loss.csv").read_bytes(), (run / "report.json").read_bytes()


def test_deterministic_runs_are_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    a.mkdir()
    b.mkdir()
    loss_a, report_a = _run_pipeline(a, seed=5)
    loss_b, report_b = _run_pipeline(b, seed=5)
    assert loss_a == loss_b
    assert report_a == report_b
    json.loads(report_a.decode())  # valid JSON, not just equal bytes


# ---- Frame formula ----


def test_one_second_frame_counts():
    wav = Waveform(np.zeros(SAMPLE_RATE), SAMPLE_RATE)
    mel = log_mel(wav)
    assert mel.values.shape[0] == 98

    model = KwsModel(ModelConfig(rng_seed=31))
    block = mel.values[None, :, :]
    mask = np.ones((1, 98), dtype=bool)
    audio, audio_mask = encode_audio_batch(model, block, mask)
    assert audio.data.shape[1] == 49
    assert audio_mask.shape[1] == 49
    assert audio_mask.all()
