"""Command line front end.

Exit codes: 0 success; 1 validation problem (empty keyword list, unknown tag,
unsupported characters, shape mismatch, usage errors); 2 unreadable inputs
(missing or malformed checkpoint, unreadable keyword file).
"""

from __future__ import annotations

import argparse
import logging
import pickle
import sys
from pathlib import Path

import torch

from xmodal_kws.embeddings import EmbeddingLayerTag
from xmodal_kws.errors import InvalidArgumentError, ValidationError

from .capture import LAYER_TABLE, ExportJob, export_embeddings
from .model import Tacotron2Like

logger = logging.getLogger(__name__)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _read_keywords(path: Path) -> list:
    lines = path.read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


def _parse_tags(arg: str) -> list:
    tags = []
    for part in arg.split(","):
        part = part.strip()
        if not part:
            continue
        tags.append(EmbeddingLayerTag.parse(part))
    return tags


def _cmd_list_layers(_args) -> int:
    print("tag  dimension  description")
    for tag, dim, desc in LAYER_TABLE:
        print("%-4s %-10s %s" % (tag, dim, desc))
    return 0


def _cmd_export(args) -> int:
    keywords = _read_keywords(Path(args.keywords))
    job = ExportJob(
        keywords=keywords,
        tags=_parse_tags(args.tags),
        out_dir=Path(args.out),
        checkpoint=Path(args.checkpoint),
        rng_seed=args.seed,
        max_decoder_steps=args.max_steps,
    )
    model = Tacotron2Like(max_decoder_steps=job.max_decoder_steps)
    try:
        state = torch.load(job.checkpoint, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    # torch.load surfaces corruption as UnpicklingError/EOFError, wrong
    # architecture as RuntimeError/KeyError, truncated zips as ValueError
    except (OSError, RuntimeError, KeyError, ValueError,
            EOFError, pickle.UnpicklingError) as exc:
        print("cannot load checkpoint %s: %s" % (job.checkpoint, exc),
              file=sys.stderr)
        return 2
    entries = export_embeddings(job, model=model)
    print("wrote %d files for %d keywords to %s"
          % (len(entries), len(keywords), job.out_dir))
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="tts-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("list-layers", help="print the exportable layer table")
    p.set_defaults(fn=_cmd_list_layers)

    p = sub.add_parser("export", help="extract activations for a keyword list")
    p.add_argument("--checkpoint", required=True, help="model state_dict path")
    p.add_argument("--keywords", required=True, help="text file, one per line")
    p.add_argument("--tags", default="E1,E3", help="comma-separated, E1..E7")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=200,
                   help="decoder step cap when the stop gate never fires")
    p.set_defaults(fn=_cmd_export)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (InvalidArgumentError, ValidationError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("io error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
