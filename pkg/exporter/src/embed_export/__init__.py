"""Offline export of sentence and token embeddings from a frozen encoder."""

from .encoders import EncoderLoadError, HashingEncoder, load_encoder
from .export import CorpusParseError, ExportJob, export

__all__ = [
    "CorpusParseError",
    "EncoderLoadError",
    "ExportJob",
    "HashingEncoder",
    "export",
    "load_encoder",
]
