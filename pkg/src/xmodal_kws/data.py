"""Utterance records, episode construction, batching, and the toy corpus.

An episode pairs one anchor keyword with 3 positive utterances (audio of the
anchor) and 3 negatives (audio of other keywords). A negative is `hard` when
0 < levenshtein(anchor, other) <= hard_threshold, else `easy`. Episodes
flatten into labelled pairs for training and evaluation.

The toy corpus gives every keyword a spectral signature of three sine
frequencies derived from its first three non-space characters (cyclic), plus
a tiny keyword-unique offset that keeps all triples numerically disjoint.
Shared characters therefore light the same mel bands across keywords, which
is what makes held-out keywords decodable at all.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dsp import SAMPLE_RATE, Waveform
from .errors import InvalidArgumentError, MissingFeatureError, ValidationError

logger = logging.getLogger(__name__)

# ---- Records and pairs ----


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    wav_path: str
    transcript: str

    @property
    def word_length(self) -> int:
        return len(self.transcript.split())


@dataclass(frozen=True)
class PairExample:
    audio_id: str
    keyword: str
    label: int          # 1 positive, 0 negative
    difficulty: str     # "positive" | "easy" | "hard"
    word_length: int    # words in the anchor keyword
    oov: bool

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError("label must be 0 or 1, got %r" % (self.label,))
        if self.difficulty not in ("positive", "easy", "hard"):
            raise ValidationError("bad difficulty %r" % (self.difficulty,))
        if (self.label == 1) != (self.difficulty == "positive"):
            raise ValidationError(
                "label %d inconsistent with difficulty %r" % (self.label, self.difficulty)
            )


@dataclass(frozen=True)
class Episode:
    anchor: str
    positives: tuple  # 3 utterance ids of the anchor keyword
    negatives: tuple  # 3 (utterance id, difficulty) from other keywords


# ---- Edit distance ----


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance on lowercased strings, two-row DP."""
    a, b = a.lower(), b.lower()
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[len(b)]


# ---- Episode construction ----


def negative_difficulty(anchor: str, other: str, hard_threshold: int) -> str:
    d = levenshtein(anchor, other)
    return "hard" if 0 < d <= hard_threshold else "easy"


def build_episodes(records, rng_seed: int, hard_threshold: int = 3,
                   episodes_per_keyword: int | None = None,
                   anchor_keywords=None) -> list:
    """Group records by transcript and emit episodes per anchor keyword.

    Keywords with fewer than 3 utterances are skipped with a warning. By
    default each keyword yields floor(n_utterances / 3) episodes with no
    positive reuse; episodes_per_keyword overrides that count, reusing
    shuffled utterances cyclically when it exceeds the no-reuse budget.
    anchor_keywords restricts which keywords anchor episodes; negatives are
    still drawn from every eligible keyword in the records.
    """
    by_keyword: dict = {}
    for rec in records:
        by_keyword.setdefault(rec.transcript, []).append(rec)

    eligible = {}
    for kw, recs in sorted(by_keyword.items()):
        if len(recs) < 3:
            logger.warning("keyword %r has %d utterances (<3); skipped", kw, len(recs))
            continue
        eligible[kw] = sorted(recs, key=lambda r: r.utterance_id)
    if len(eligible) < 2:
        raise InvalidArgumentError(
            "need at least 2 keywords with 3+ utterances, got %d" % (len(eligible),)
        )
    if anchor_keywords is None:
        anchors = sorted(eligible)
    else:
        anchors = sorted(set(anchor_keywords))
        missing = [kw for kw in anchors if kw not in eligible]
        if missing:
            raise InvalidArgumentError(
                "anchor keywords not in the corpus with 3+ utterances: %r" % (missing,)
            )

    rng = np.random.default_rng([int(rng_seed), 101])
    episodes = []
    for kw in anchors:
        own = eligible[kw]
        others = [r for other_kw, recs in sorted(eligible.items()) if other_kw != kw
                  for r in recs]
        n_episodes = episodes_per_keyword
        if n_episodes is None:
            n_episodes = len(own) // 3
        order = [own[i] for i in rng.permutation(len(own))]
        for e in range(n_episodes):
            if (e + 1) * 3 > len(order):
                extra = [own[i] for i in rng.permutation(len(own))]
                order.extend(extra)
            pos = order[e * 3 : e * 3 + 3]
            neg = [others[i] for i in rng.choice(len(others), size=3, replace=False)]
            episodes.append(Episode(
                anchor=kw,
                positives=tuple(r.utterance_id for r in pos),
                negatives=tuple(
                    (r.utterance_id, negative_difficulty(kw, r.transcript, hard_threshold))
                    for r in neg
                ),
            ))
    return episodes


def episodes_to_pairs(episodes, oov: bool = False) -> list:
    pairs = []
    for ep in episodes:
        wl = len(ep.anchor.split())
        for uid in ep.positives:
            pairs.append(PairExample(uid, ep.anchor, 1, "positive", wl, oov))
        for uid, difficulty in ep.negatives:
            pairs.append(PairExample(uid, ep.anchor, 0, difficulty, wl, oov))
    return pairs


# ---- Batching ----


@dataclass
class PaddedBatch:
    mel: np.ndarray        # (B, n_max, 80) zero-filled past each length
    mel_mask: np.ndarray   # (B, n_max) bool
    emb: np.ndarray        # (B, m_max, D)
    text_mask: np.ndarray  # (B, m_max) bool
    labels: np.ndarray     # (B,) float64
    pairs: list


def batch_with_padding(pairs, mel_store, emb_store, batch_size: int) -> list:
    """Chunk pairs into right-padded batches; the tail batch may be short.

    mel_store maps utterance id -> MelSpectrogram; emb_store maps keyword ->
    TtsEmbeddingSequence. Unknown ids raise MissingFeatureError naming them.
    """
    if batch_size < 1:
        raise InvalidArgumentError("batch_size must be >= 1")
    pairs = list(pairs)
    for p in pairs:
        if p.audio_id not in mel_store:
            raise MissingFeatureError("no mel features for audio id %r" % (p.audio_id,))
        if p.keyword not in emb_store:
            raise MissingFeatureError("no embedding for keyword %r" % (p.keyword,))

    batches = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        mels = [np.asarray(mel_store[p.audio_id].values) for p in chunk]
        embs = [np.asarray(emb_store[p.keyword].values) for p in chunk]
        n_max = max(m.shape[0] for m in mels)
        m_max = max(e.shape[0] for e in embs)
        width = embs[0].shape[1]
        mel_block = np.zeros((len(chunk), n_max, mels[0].shape[1]))
        emb_block = np.zeros((len(chunk), m_max, width))
        mel_mask = np.zeros((len(chunk), n_max), dtype=bool)
        text_mask = np.zeros((len(chunk), m_max), dtype=bool)
        for i, (m, e) in enumerate(zip(mels, embs)):
            mel_block[i, : m.shape[0]] = m
            mel_mask[i, : m.shape[0]] = True
            emb_block[i, : e.shape[0]] = e
            text_mask[i, : e.shape[0]] = True
        labels = np.array([float(p.label) for p in chunk])
        batches.append(PaddedBatch(mel_block, mel_mask, emb_block, text_mask, labels, chunk))
    return batches


# ---- Toy corpus ----

# Fixed word list. The first eight span word lengths 1-4 and are engineered so
# the last two drawn ("notes", "no one ten") only use (char, slot) pairs that
# also occur in the first six; holding those two out for open-vocabulary
# evaluation still leaves every needed character band in training.
TOY_WORD_LIST = (
    "on",
    "one",
    "ten",
    "note",
    "tone on a net",
    "no one",
    "notes",
    "no one ten",
    "san",
    "stone",
    "east",
    "ante",
    "set one",
    "in on one",
    "nest on a tone",
    "ties on a note",
)

TONE_BASE_HZ = 250.0
TONE_CHAR_STEP_HZ = 150.0
TONE_SLOT_STEP_HZ = 45.0
TONE_KEYWORD_STEP_HZ = 0.13
MIN_DURATION_S = 0.52
MAX_DURATION_S = 1.0


def keyword_tone_frequencies(keyword: str, keyword_index: int) -> tuple:
    """Three sine frequencies from the first three non-space chars (cyclic)."""
    chars = [c for c in keyword.lower() if c != " "]
    if not chars:
        raise InvalidArgumentError("keyword %r has no characters" % (keyword,))
    if not all("a" <= c <= "z" for c in chars):
        raise InvalidArgumentError("toy keywords must be ascii letters: %r" % (keyword,))
    slots = [chars[j % len(chars)] for j in range(3)]
    delta = TONE_KEYWORD_STEP_HZ * (keyword_index + 1)
    return tuple(
        TONE_BASE_HZ + TONE_CHAR_STEP_HZ * (ord(c) - ord("a")) + TONE_SLOT_STEP_HZ * j + delta
        for j, c in enumerate(slots)
    )


def synth_toy_corpus(n_keywords: int, utterances_per_keyword: int, rng_seed: int):
    """-> (records, {utterance_id: Waveform}).

    Each utterance is 0.5-1.0 s of the keyword's three tones with random
    amplitude, small frequency jitter, random phases, and >= 20 dB SNR noise.
    Deterministic per seed.
    """
    if n_keywords < 2:
        raise InvalidArgumentError("need at least 2 keywords")
    if n_keywords > len(TOY_WORD_LIST):
        raise InvalidArgumentError(
            "n_keywords %d exceeds the fixed word list (%d)"
            % (n_keywords, len(TOY_WORD_LIST))
        )
    if utterances_per_keyword < 1:
        raise InvalidArgumentError("utterances_per_keyword must be >= 1")

    records = []
    waves = {}
    for k_idx in range(n_keywords):
        keyword = TOY_WORD_LIST[k_idx]
        freqs = keyword_tone_frequencies(keyword, k_idx)
        for u_idx in range(utterances_per_keyword):
            rng = np.random.default_rng([int(rng_seed), 7, k_idx, u_idx])
            duration = rng.uniform(MIN_DURATION_S, MAX_DURATION_S)
            n = int(round(duration * SAMPLE_RATE))
            t = np.arange(n) / SAMPLE_RATE
            amplitude = rng.uniform(0.3, 0.9)
            signal = np.zeros(n)
            for f in freqs:
                jitter = rng.uniform(-1.5, 1.5)
                phase = rng.uniform(0.0, 2.0 * np.pi)
                signal += np.sin(2.0 * np.pi * (f + jitter) * t + phase)
            signal *= amplitude / 3.0
            snr_db = rng.uniform(25.0, 35.0)  # comfortably >= 20 dB
            noise_rms = np.sqrt(np.mean(signal**2)) / (10.0 ** (snr_db / 20.0))
            signal = signal + rng.standard_normal(n) * noise_rms
            uid = "kw%02d_u%03d" % (k_idx, u_idx)
            records.append(UtteranceRecord(
                utterance_id=uid,
                wav_path="wav/%s.wav" % (uid,),
                transcript=keyword,
            ))
            waves[uid] = Waveform(samples=signal, sample_rate_hz=SAMPLE_RATE)
    return records, waves


# ---- Corpus manifest TSV ----


def write_corpus_manifest(records, path):
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write("%s\t%s\t%s\n" % (r.utterance_id, r.wav_path, r.transcript))


def read_corpus_manifest(path) -> list:
    from .errors import FormatError

    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    "corpus manifest line %d has %d fields, expected 3"
                    % (line_no, len(parts))
                )
            records.append(UtteranceRecord(*parts))
    return records


# ---- Pair TSV ----

PAIR_HEADER = ("audio_id", "keyword", "label", "difficulty", "word_length", "oov")


def write_pairs_tsv(pairs, path):
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(PAIR_HEADER) + "\n")
        for p in pairs:
            f.write("%s\t%s\t%d\t%s\t%d\t%d\n" % (
                p.audio_id, p.keyword, p.label, p.difficulty, p.word_length, int(p.oov)
            ))


def read_pairs_tsv(path) -> list:
    from .errors import FormatError

    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if header != list(PAIR_HEADER):
            raise FormatError("bad pair file header %r" % (header,))
        for line_no, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise FormatError(
                    "pair file line %d has %d fields, expected 6" % (line_no, len(parts))
                )
            try:
                pairs.append(PairExample(
                    audio_id=parts[0], keyword=parts[1], label=int(parts[2]),
                    difficulty=parts[3], word_length=int(parts[4]),
                    oov=bool(int(parts[5])),
                ))
            except ValidationError:
                raise
            except ValueError as exc:
                raise FormatError("pair file line %d: %s" % (line_no, exc)) from exc
    return pairs
