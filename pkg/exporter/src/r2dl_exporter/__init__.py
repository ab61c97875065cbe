"""Checkpoint exporter producing r2dl bundle and frozen-model artifacts."""

__version__ = "0.1.0"

from .checkpoint import Checkpoint, CheckpointError, wordpiece_tokenize
from .export import ExportSpec, export_embeddings, export_frozen_head

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ExportSpec",
    "export_embeddings",
    "export_frozen_head",
    "wordpiece_tokenize",
]
