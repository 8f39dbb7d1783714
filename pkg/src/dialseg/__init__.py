"""Dialogue segmentation with embedding coherence, retrieval fusion and LLM prompting,
evaluated through dialogue-act label distributions."""

__version__ = "0.1.0"

from .coherence import DecodeParams, decode, segment_coherence
from .core import (
    BoundarySet,
    Codebook,
    Dialogue,
    EmbeddingSequence,
    Move,
    RaterLabels,
    Segmentation,
    Utterance,
    induce_segments,
    normalize_boundaries,
)
from .fusion import FusionParams, build_memory, build_move_table, fused_embeddings
from .kernels import BACKEND
from .metrics import EvalConfig, MetricsReport, evaluate_corpus

__all__ = [
    "BACKEND",
    "BoundarySet",
    "Codebook",
    "DecodeParams",
    "Dialogue",
    "EmbeddingSequence",
    "EvalConfig",
    "FusionParams",
    "MetricsReport",
    "Move",
    "RaterLabels",
    "Segmentation",
    "Utterance",
    "build_memory",
    "build_move_table",
    "decode",
    "evaluate_corpus",
    "fused_embeddings",
    "induce_segments",
    "normalize_boundaries",
    "segment_coherence",
    "__version__",
]
