"""Layer-activation exporter for a Tacotron-2-shaped TTS model.

Runs free-running inference on keyword strings and captures seven
intermediate representations (E1..E7) as embedding files the keyword
spotting package can read directly.
"""

from .capture import LAYER_TABLE, ExportJob, export_embeddings, extract_keyword
from .model import Tacotron2Like, text_to_ids

__all__ = [
    "LAYER_TABLE",
    "ExportJob",
    "Tacotron2Like",
    "export_embeddings",
    "extract_keyword",
    "text_to_ids",
]
