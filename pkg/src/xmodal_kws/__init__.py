"""Open-vocabulary keyword spotting from TTS text embeddings."""

__version__ = "0.1.0"
