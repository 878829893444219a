"""Versioned binary checkpoints: every model array, bitwise exact.

Layout (little endian):

    magic      4 bytes  b"XKWC"
    version    u8       1
    header_len u32
    header     header_len bytes of UTF-8 JSON:
               {"arch": {...}, "rng_seed": int,
                "arrays": [{"name": str, "shape": [int, ...]}, ...]}
    payload    concatenated f64 arrays, row-major, in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .model import KwsModel, ModelConfig

MAGIC = b"XKWC"
FORMAT_VERSION = 1


def save_checkpoint(model: KwsModel, path):
    arrays = model.state_arrays()
    header = {
        "arch": model.config.arch_dict(),
        "rng_seed": model.config.rng_seed,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BI", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError("checkpoint truncated while reading %s" % (what,))
    return data


def load_checkpoint(path, expect_arch: dict | None = None) -> KwsModel:
    """Rebuild a model from a checkpoint.

    expect_arch entries (e.g. {"text_input_width": 80}) are compared against
    the stored architecture; a mismatch raises ValidationError naming the
    constant.
    """
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise FormatError("bad magic; not a checkpoint file")
        version, header_len = struct.unpack("<BI", _read_exact(f, 5, "header size"))
        if version != FORMAT_VERSION:
            raise FormatError("unsupported checkpoint version %d" % (version,))
        try:
            header = json.loads(_read_exact(f, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError("checkpoint header is not valid JSON: %s" % (exc,)) from exc
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(f, count * 8, "array %r" % (entry["name"],))
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape)
        if f.read(1):
            raise FormatError("trailing bytes after payload")

    arch = header["arch"]
    if expect_arch:
        for key, expected in expect_arch.items():
            if arch.get(key) != expected:
                raise ValidationError(
                    "checkpoint %s=%r does not match expected %r"
                    % (key, arch.get(key), expected)
                )
    config = ModelConfig(
        text_input_width=int(arch["text_input_width"]),
        rng_seed=int(header["rng_seed"]),
        dropout_p=float(arch["dropout_p"]),
    )
    fixed = ModelConfig().arch_dict()
    for key in ("n_mels", "conv_channels", "kernel", "time_stride", "enc_hidden",
                "embed_dim", "disc_hidden"):
        if arch.get(key) != fixed[key]:
            raise ValidationError(
                "checkpoint %s=%r does not match this build's %r"
                % (key, arch.get(key), fixed[key])
            )
    model = KwsModel(config)
    model.load_state_arrays(arrays)
    return model
