"""Unsupervised boundary decoding from utterance embeddings.

The pipeline is adjacent cosine similarity, two-sided peak-relative depth
scores, then a greedy thresholded selection with spacing and count limits.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .core import BoundarySet, Dialogue, EmbeddingSequence, Segmentation, fingerprint
from .errors import ValidationError


@dataclass(frozen=True, slots=True)
class DecodeParams:
    window_size: int = 2
    alpha: float = 0.5
    pick_num: int | None = 4
    avg_seg_len: int | None = None
    min_gap: int = 3
    smooth_window: int | None = None

    def __post_init__(self):
        if self.window_size < 1:
            raise ValidationError("window_size must be >= 1")
        if self.pick_num is not None and self.pick_num < 1:
            raise ValidationError("pick_num must be >= 1")
        if self.avg_seg_len is not None and self.avg_seg_len < 2:
            raise ValidationError("avg_seg_len must be >= 2")
        if self.min_gap < 1:
            raise ValidationError("min_gap must be >= 1")
        if self.smooth_window is not None and self.smooth_window < 1:
            raise ValidationError("smooth_window must be >= 1")
        if not math.isfinite(self.alpha):
            raise ValidationError("alpha must be finite")

    def cap(self, T: int) -> int:
        """Maximum number of boundaries for a dialogue of length ``T``."""
        if self.avg_seg_len is not None:
            limit = math.ceil(T / self.avg_seg_len) - 1
        elif self.pick_num is not None:
            limit = self.pick_num
        else:
            limit = T - 1
        return max(0, min(limit, T - 1))

    def to_dict(self) -> dict:
        return asdict(self)


def adjacent_similarity(emb: EmbeddingSequence | np.ndarray) -> np.ndarray:
    vectors = emb.vectors if isinstance(emb, EmbeddingSequence) else np.asarray(emb, dtype=np.float64)
    if vectors.shape[0] < 2:
        raise ValidationError("adjacent similarity needs at least 2 utterances")
    sims = np.einsum("ij,ij->i", vectors[:-1], vectors[1:])
    return np.clip(sims, -1.0, 1.0)


def smooth(sims: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average, shrinking at the ends."""
    sims = np.asarray(sims, dtype=np.float64)
    n = sims.shape[0]
    csum = np.concatenate([[0.0], np.cumsum(sims)])
    lo = np.maximum(np.arange(n) - window, 0)
    hi = np.minimum(np.arange(n) + window + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def depth_scores(sims, window_size: int) -> np.ndarray:
    if window_size < 1:
        raise ValidationError("window_size must be >= 1")
    return kernels.depth_scores(np.asarray(sims, dtype=np.float64), int(window_size))


def selection_threshold(depths: np.ndarray, alpha: float) -> float:
    # population SD so a single candidate still has a defined threshold
    depths = np.asarray(depths, dtype=np.float64)
    if depths.size and np.all(depths == depths[0]):
        # the float mean of n copies of x can land below x; exactly, nothing exceeds it
        return float(depths[0])
    return float(depths.mean() + alpha * depths.std())


def select_boundaries(depths, params: DecodeParams, T: int) -> BoundarySet:
    depths = np.asarray(depths, dtype=np.float64)
    if depths.shape[0] != T - 1:
        raise ValidationError(f"expected {T - 1} depth values, got {depths.shape[0]}")
    if depths.shape[0] == 0:
        return BoundarySet((), T)
    thr = selection_threshold(depths, params.alpha)
    kept = kernels.greedy_select(depths, thr, int(params.min_gap), params.cap(T))
    return BoundarySet(tuple(int(i) for i in kept), T)


def decode(emb: EmbeddingSequence, params: DecodeParams) -> BoundarySet:
    sims = adjacent_similarity(emb)
    if params.smooth_window:
        sims = smooth(sims, params.smooth_window)
    return select_boundaries(depth_scores(sims, params.window_size), params, emb.T)


def segment_coherence(
    dialogue: Dialogue, emb: EmbeddingSequence, params: DecodeParams | None = None, method: str = "coherence"
) -> Segmentation:
    params = params or DecodeParams()
    if emb.T != dialogue.T:
        raise ValidationError(
            f"session {dialogue.session_id!r}: {emb.T} embeddings for {dialogue.T} utterances"
        )
    if dialogue.T < 2:
        raise ValidationError(f"session {dialogue.session_id!r}: T=1 has no candidate boundaries")
    boundaries = decode(emb, params)
    return Segmentation(
        session_id=dialogue.session_id,
        boundaries=boundaries,
        method=method,
        params_fingerprint=fingerprint({"method": method, "decode": params.to_dict()}),
    )
