"""Forward-hook capture of intermediate activations, one keyword at a time.

The seven exportable representations:

  E1 char embedding table output      rows = characters, width 512
  E2 encoder convolution stack output rows = characters, width 512
  E3 encoder Bi-LSTM output           rows = characters, width 512
  E4 attention context per frame      rows = decoder frames, width 512
  E5 prenet output per frame          rows = decoder frames, width 512
  E6 last 512-wide postnet activation rows = decoder frames, width 512
  E7 final mel output                 rows = decoder frames, width 80

Files are written with the keyword spotting package's own writer, so format
compatibility is by construction; shapes are still validated against the
table above before anything is written.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch

from xmodal_kws.embeddings import (
    EmbeddingLayerTag,
    TtsEmbeddingSequence,
    write_embedding,
    write_manifest,
)
from xmodal_kws.errors import InvalidArgumentError

from .model import Tacotron2Like, text_to_ids

logger = logging.getLogger(__name__)

# tag -> (dimension label, block name), the list-layers table
LAYER_TABLE = (
    ("E1", "T_a x 512", "CharEmbedding block output"),
    ("E2", "T_a x 512", "Convolution block output"),
    ("E3", "T_a x 512", "Bi-LSTM block output"),
    ("E4", "T_b x 512", "Attention block output"),
    ("E5", "T_b x 512", "Prenet block output"),
    ("E6", "T_b x 512", "Postnet block output"),
    ("E7", "T_b x 80", "Target Melspectrogram"),
)


@dataclass
class ExportJob:
    keywords: list
    tags: list  # of EmbeddingLayerTag
    out_dir: Path
    checkpoint: Path
    rng_seed: int = 0
    max_decoder_steps: int = 200

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.checkpoint = Path(self.checkpoint)
        if not self.keywords:
            raise InvalidArgumentError("keyword list is empty")
        if not self.tags:
            raise InvalidArgumentError("no layer tags requested")


class _Recorder:
    """Hook bundle; collects one inference pass worth of activations."""

    def __init__(self, model: Tacotron2Like):
        self.model = model
        self.static: dict = {}
        self.steps: dict = {"E4": [], "E5": []}
        self.handles = [
            model.embedding.register_forward_hook(self._static("E1")),
            model.encoder.convolutions[2].register_forward_hook(self._static("E2")),
            model.encoder.lstm.register_forward_hook(self._static("E3")),
            model.decoder.attention_layer.register_forward_hook(self._step("E4")),
            model.decoder.prenet.register_forward_hook(self._step("E5")),
            model.postnet.convolutions[3].register_forward_hook(self._static("E6")),
        ]

    def _static(self, name):
        def hook(_module, _inputs, output):
            self.static[name] = output
        return hook

    def _step(self, name):
        def hook(_module, _inputs, output):
            self.steps[name].append(output)
        return hook

    def close(self):
        for h in self.handles:
            h.remove()

    def arrays(self, mel_post: torch.Tensor) -> dict:
        """-> {tag name: (rows, width) float32 ndarray} for all seven tags."""
        out = {}
        out["E1"] = self.static["E1"][0]
        out["E2"] = self.static["E2"][0].transpose(0, 1)  # channel-first conv
        out["E3"] = self.static["E3"][0][0]  # lstm returns (output, state)
        out["E4"] = torch.cat([c for c, _w in self.steps["E4"]], dim=0)
        out["E5"] = torch.cat(self.steps["E5"], dim=0)
        out["E6"] = self.static["E6"][0].transpose(0, 1)
        out["E7"] = mel_post[0]
        return {k: v.detach().numpy().astype("float32") for k, v in out.items()}


_EXPECTED_WIDTH = {"E1": 512, "E2": 512, "E3": 512,
                   "E4": 512, "E5": 512, "E6": 512, "E7": 80}


def extract_keyword(model: Tacotron2Like, keyword: str, rng_seed: int) -> dict:
    """One free-running inference; returns all seven representations.

    The prenet keeps dropout on at inference (reference behaviour), so the
    pass is stochastic; seeding per (seed, keyword) makes re-runs and
    keyword-order changes reproducible.
    """
    ids = text_to_ids(keyword)
    torch.manual_seed((rng_seed * 1000003 + hash_keyword(keyword)) % (2**63))
    model.eval()
    rec = _Recorder(model)
    try:
        _mel, mel_post = model.infer(ids)
    finally:
        rec.close()
    arrays = rec.arrays(mel_post)

    t_a = len(keyword)
    t_b = arrays["E7"].shape[0]
    for name, arr in arrays.items():
        rows = t_a if EmbeddingLayerTag[name].char_aligned else t_b
        if arr.shape != (rows, _EXPECTED_WIDTH[name]):
            raise InvalidArgumentError(
                "tag %s produced shape %r, expected (%d, %d) for keyword %r"
                % (name, arr.shape, rows, _EXPECTED_WIDTH[name], keyword)
            )
    return arrays


def hash_keyword(keyword: str) -> int:
    """Stable small hash (process-independent, unlike built-in hash)."""
    h = 0
    for ch in keyword:
        h = (h * 131 + ord(ch)) % 1000000007
    return h


def _slug(keyword: str) -> str:
    return keyword.replace(" ", "-")


def export_embeddings(job: ExportJob, model: Tacotron2Like | None = None) -> list:
    """Run the job; returns manifest entries (keyword, tag, relative path)."""
    if model is None:
        model = Tacotron2Like(max_decoder_steps=job.max_decoder_steps)
        state = torch.load(job.checkpoint, map_location="cpu",
                           weights_only=True)
        model.load_state_dict(state)
    job.out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for keyword in job.keywords:
        arrays = extract_keyword(model, keyword, job.rng_seed)
        for tag in job.tags:
            seq = TtsEmbeddingSequence(keyword=keyword, tag=tag,
                                       values=arrays[tag.name])
            rel = "%s_%s.ttse" % (tag.name, _slug(keyword))
            write_embedding(seq, job.out_dir / rel)
            entries.append((keyword, tag, rel))
        logger.info("exported %r (%d tags)", keyword, len(job.tags))
    write_manifest(entries, job.out_dir / "embeddings.tsv")
    return entries
