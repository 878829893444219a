"""TTS text-embedding sequences: binary file format, validation, synthesis.

A sequence is a (rows, width) float matrix for one keyword, produced by one of
seven capture points in a TTS synthesizer. E1..E3 are character-aligned
(one row per character of the lowercased keyword, spaces included) and 512
wide; E4..E6 are frame-aligned and 512 wide; E7 is frame-aligned and 80 wide.

On-disk layout (little endian), widening f32 payload to f64 in memory:

    magic   4 bytes  b"TTSE"
    version u8       1
    tag     u8       1..7 for E1..E7
    kw_len  u32      byte length of the UTF-8 keyword
    keyword kw_len bytes
    rows    u32
    cols    u32
    payload rows*cols f32, row-major

A manifest is a UTF-8 TSV with one `keyword<TAB>tag<TAB>relative path` row
per file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, ValidationError

MAGIC = b"TTSE"
FORMAT_VERSION = 1
FRAMES_PER_CHAR = 5  # expansion factor for the frame-aligned tags


class EmbeddingLayerTag(Enum):
    E1 = 1
    E2 = 2
    E3 = 3
    E4 = 4
    E5 = 5
    E6 = 6
    E7 = 7

    @property
    def width(self) -> int:
        return 80 if self is EmbeddingLayerTag.E7 else 512

    @property
    def char_aligned(self) -> bool:
        return self.value <= 3

    @classmethod
    def parse(cls, name: str) -> "EmbeddingLayerTag":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise InvalidArgumentError(
                "unknown embedding tag %r; expected E1..E7" % (name,)
            ) from None


def keyword_chars(keyword: str) -> list:
    """Character sequence the char-aligned tags align to: lowercased, spaces kept."""
    return list(keyword.lower())


@dataclass
class TtsEmbeddingSequence:
    keyword: str
    tag: EmbeddingLayerTag
    values: np.ndarray  # (rows, tag.width) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not self.keyword:
            raise ValidationError("keyword is empty")
        if self.values.ndim != 2:
            raise ValidationError("embedding values must be 2-D")
        if self.values.shape[0] < 1:
            raise ValidationError("embedding has no rows")
        if self.values.shape[1] != self.tag.width:
            raise ValidationError(
                "tag %s expects width %d, got %d"
                % (self.tag.name, self.tag.width, self.values.shape[1])
            )
        if self.tag.char_aligned:
            n_chars = len(keyword_chars(self.keyword))
            if self.values.shape[0] != n_chars:
                raise ValidationError(
                    "tag %s expects one row per character (%d), got %d"
                    % (self.tag.name, n_chars, self.values.shape[0])
                )
        if not np.isfinite(self.values).all():
            raise ValidationError("embedding contains non-finite values")


def write_embedding(seq: TtsEmbeddingSequence, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kw = seq.keyword.encode("utf-8")
    rows, cols = seq.values.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BB", FORMAT_VERSION, seq.tag.value))
        f.write(struct.pack("<I", len(kw)))
        f.write(kw)
        f.write(struct.pack("<II", rows, cols))
        f.write(seq.values.astype("<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError("embedding file truncated while reading %s" % (what,))
    return data


def read_embedding(path) -> TtsEmbeddingSequence:
    """Parse and fully validate one embedding file."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise FormatError("bad magic; not an embedding file")
        version, tag_byte = struct.unpack("<BB", _read_exact(f, 2, "header"))
        if version != FORMAT_VERSION:
            raise FormatError("unsupported format version %d" % (version,))
        try:
            tag = EmbeddingLayerTag(tag_byte)
        except ValueError:
            raise FormatError("unknown tag byte %d" % (tag_byte,)) from None
        (kw_len,) = struct.unpack("<I", _read_exact(f, 4, "keyword length"))
        try:
            keyword = _read_exact(f, kw_len, "keyword").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("keyword is not valid UTF-8: %s" % (exc,)) from exc
        rows, cols = struct.unpack("<II", _read_exact(f, 8, "shape"))
        payload = _read_exact(f, rows * cols * 4, "payload")
        if f.read(1):
            raise FormatError("trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(rows, cols)
    return TtsEmbeddingSequence(keyword=keyword, tag=tag, values=values)


# ---- Synthetic stand-in embeddings ----


def _char_rng(seed: int, tag: EmbeddingLayerTag, ch: str, sub: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag.value, ord(ch), sub])


def synth_pseudo_embedding(keyword: str, tag: EmbeddingLayerTag,
                           rng_seed: int) -> TtsEmbeddingSequence:
    """Deterministic pseudo-embedding keyed by character identity.

    Char-aligned tags emit one row per character; the row depends only on
    (seed, tag, character), so keywords sharing characters share rows.
    Frame-aligned tags expand each character to FRAMES_PER_CHAR rows, each
    derived from that character plus its within-character frame index.
    """
    if not keyword:
        raise InvalidArgumentError("keyword is empty")
    chars = keyword_chars(keyword)
    width = tag.width
    if tag.char_aligned:
        rows = [_char_rng(rng_seed, tag, ch, 0).standard_normal(width) for ch in chars]
    else:
        rows = [
            _char_rng(rng_seed, tag, ch, sub).standard_normal(width)
            for ch in chars
            for sub in range(FRAMES_PER_CHAR)
        ]
    return TtsEmbeddingSequence(keyword=keyword, tag=tag, values=np.stack(rows))


# ---- Manifest ----


def write_manifest(entries, path):
    """entries: iterable of (keyword, tag, relative_path)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for keyword, tag, rel in entries:
            if "\t" in keyword:
                raise ValidationError("keyword contains a tab: %r" % (keyword,))
            f.write("%s\t%s\t%s\n" % (keyword, tag.name, rel))


def read_manifest(path):
    """-> list of (keyword, EmbeddingLayerTag, relative_path)."""
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    "manifest line %d has %d fields, expected 3" % (line_no, len(parts))
                )
            entries.append((parts[0], EmbeddingLayerTag.parse(parts[1]), parts[2]))
    return entries


def load_embedding_store(manifest_path, tag: EmbeddingLayerTag) -> dict:
    """Read every manifest file with the given tag -> {keyword: sequence}."""
    manifest_path = Path(manifest_path)
    store = {}
    for keyword, file_tag, rel in read_manifest(manifest_path):
        if file_tag is not tag:
            continue
        seq = read_embedding(manifest_path.parent / rel)
        if seq.keyword != keyword or seq.tag is not file_tag:
            raise ValidationError(
                "manifest entry %r/%s does not match file contents %r/%s"
                % (keyword, file_tag.name, seq.keyword, seq.tag.name)
            )
        store[keyword] = seq
    return store
