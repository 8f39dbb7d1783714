"""Domain types and the boundary/segment algebra.

Boundaries are stored 0-indexed: boundary ``i`` means "cut after utterance
``i``", so valid values run over ``0..T-2`` and a set of ``n`` boundaries
induces ``n + 1`` contiguous segments.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import NormalizationError, ValidationError

NONE_CATEGORY = "none"


@dataclass(frozen=True, slots=True)
class Utterance:
    id: str
    index: int
    speaker: str
    text: str


@dataclass(frozen=True, slots=True)
class Dialogue:
    session_id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        if not self.utterances:
            raise ValidationError(f"dialogue {self.session_id!r} has no utterances")
        for pos, utt in enumerate(self.utterances):
            if utt.index != pos:
                raise ValidationError(
                    f"dialogue {self.session_id!r}: utterance at position {pos} has index {utt.index}"
                )

    @property
    def T(self) -> int:
        return len(self.utterances)

    def index_of(self) -> dict[str, int]:
        return {u.id: u.index for u in self.utterances}


@dataclass(frozen=True, slots=True)
class BoundarySet:
    """Strictly increasing cut positions valid for a dialogue of length ``T``."""

    indices: tuple[int, ...]
    T: int

    def __post_init__(self):
        check_boundaries(self.indices, self.T)

    @property
    def K(self) -> int:
        return len(self.indices) + 1

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


@dataclass(frozen=True, slots=True)
class Segmentation:
    session_id: str
    boundaries: BoundarySet
    method: str
    params_fingerprint: str
    meta: Mapping[str, object] = field(default_factory=dict, compare=False)

    @property
    def K(self) -> int:
        return self.boundaries.K


@dataclass(frozen=True, slots=True)
class Move:
    name: str
    definition: str = ""
    examples: tuple[str, ...] = ()


@dataclass(frozen=True, slots=True)
class Codebook:
    """Ordered move taxonomy.

    With ``none_category_enabled`` the reserved ``"none"`` category is appended
    after the moves and absorbs unlabeled utterances.
    """

    name: str
    moves: tuple[Move, ...]
    none_category_enabled: bool = True

    def __post_init__(self):
        seen = set()
        for move in self.moves:
            if not move.name or not move.name.strip():
                raise ValidationError(f"codebook {self.name!r}: empty move name")
            if move.name.lower() == NONE_CATEGORY:
                raise ValidationError(f"codebook {self.name!r}: move name {move.name!r} is reserved")
            if move.name in seen:
                raise ValidationError(f"codebook {self.name!r}: duplicate move {move.name!r}")
            seen.add(move.name)

    @property
    def move_names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.moves)

    @property
    def categories(self) -> tuple[str, ...]:
        names = self.move_names
        return names + (NONE_CATEGORY,) if self.none_category_enabled else names

    @property
    def C(self) -> int:
        return len(self.moves) + (1 if self.none_category_enabled else 0)

    def __contains__(self, move_name: str) -> bool:
        return move_name in self.move_names

    def move_index(self, move_name: str) -> int:
        try:
            return self.move_names.index(move_name)
        except ValueError:
            raise ValidationError(f"unknown move {move_name!r}; valid moves: {list(self.move_names)}") from None

    def with_none(self, enabled: bool) -> "Codebook":
        return Codebook(self.name, self.moves, enabled)


@dataclass(frozen=True, slots=True)
class RaterLabels:
    """Per-utterance labels of one rater over one dialogue; absent = unlabeled."""

    rater_id: str
    labels: Mapping[int, str]

    def __len__(self) -> int:
        return len(self.labels)

    def codes(self, T: int, codebook: Codebook) -> np.ndarray:
        """Category code per utterance.

        Unlabeled utterances map to the ``none`` code when the codebook enables
        it and to -1 otherwise.
        """
        fill = len(codebook.moves) if codebook.none_category_enabled else -1
        out = np.full(T, fill, dtype=np.int64)
        for idx, move in self.labels.items():
            if not 0 <= idx < T:
                raise ValidationError(f"rater {self.rater_id!r}: label index {idx} outside 0..{T - 1}")
            out[idx] = codebook.move_index(move)
        return out


@dataclass(frozen=True, slots=True, eq=False)
class EmbeddingSequence:
    """``T`` unit-norm vectors of dimension ``d``, one per utterance."""

    session_id: str
    vectors: np.ndarray

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 2:
            raise ValidationError(f"embeddings for {self.session_id!r} must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0][0])
            raise ValidationError(f"embeddings for {self.session_id!r}: non-finite value at utterance {bad}")

    @property
    def T(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


def check_boundaries(indices: Sequence[int], T: int) -> None:
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    prev = None
    for b in indices:
        if isinstance(b, bool) or not isinstance(b, (int, np.integer)):
            raise ValidationError(f"boundary index {b!r} is not an integer")
        if not 0 <= b <= T - 2:
            raise ValidationError(f"boundary index {b} outside 0..{T - 2} (T={T})")
        if prev is not None and b <= prev:
            raise ValidationError(f"boundary index {b} not strictly after {prev}")
        prev = b


def induce_segments(boundaries: BoundarySet | Sequence[int], T: int) -> list[range]:
    """Split ``0..T-1`` into the contiguous ranges induced by the cuts."""
    indices = boundaries.indices if isinstance(boundaries, BoundarySet) else tuple(boundaries)
    check_boundaries(indices, T)
    segments = []
    start = 0
    for b in indices:
        segments.append(range(start, b + 1))
        start = b + 1
    segments.append(range(start, T))
    return segments


def cut_points(segments: Sequence[range]) -> tuple[int, ...]:
    """Inverse of :func:`induce_segments`."""
    return tuple(seg.stop - 1 for seg in segments[:-1])


def normalize_boundaries(raw: Iterable[int], T: int, final_sentinel: bool = False) -> BoundarySet:
    """Sort and dedupe raw indices, optionally dropping the ``T-1`` sentinel."""
    if T < 1:
        raise NormalizationError(f"T must be >= 1, got {T}", raw=raw)
    raw = list(raw)
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise NormalizationError(f"non-integer boundary value {v!r}", raw=raw)
    values = sorted({int(v) for v in raw})
    if final_sentinel:
        values = [v for v in values if v != T - 1]
    bad = [v for v in values if not 0 <= v <= T - 2]
    if bad:
        raise NormalizationError(f"boundary values {bad} outside 0..{T - 2} (T={T})", raw=raw)
    return BoundarySet(tuple(values), T)


def fingerprint(obj) -> str:
    """Stable short hash of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def sha256_text(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return hashlib.sha256(text).hexdigest()
