"""Dialogue-act conditioned retrieval augmentation of utterance embeddings.

Each utterance embedding retrieves its nearest labeled neighbors from a memory
bank, turns their cosine similarities into temperature-softmax weights, sums
the corresponding move vectors and adds the result (scaled by ``alpha_fuse``)
to the embedding before renormalizing.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .core import Codebook, EmbeddingSequence, RaterLabels, fingerprint, sha256_text
from .errors import ValidationError
from .ingest import read_container, unit_rows, write_container

log = logging.getLogger(__name__)


class FusionWarning(UserWarning):
    pass


@dataclass(frozen=True, slots=True)
class FusionParams:
    K_ret: int = 5
    tau: float = 0.1
    alpha_fuse: float = 0.5
    seed: int = 0
    table_mode: str = "centroid"
    exclude_self: bool = True

    def __post_init__(self):
        if self.K_ret < 1:
            raise ValidationError("K_ret must be >= 1")
        if not self.tau > 0:
            raise ValidationError("tau must be > 0")
        if not self.alpha_fuse >= 0:
            raise ValidationError("alpha_fuse must be >= 0")
        if self.table_mode not in ("centroid", "random"):
            raise ValidationError(f"table_mode must be 'centroid' or 'random', got {self.table_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class MemoryBank:
    """Labeled unit embeddings; ``sources`` holds (session_id, index) per entry."""

    embeddings: np.ndarray
    moves: tuple[str, ...]
    sources: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.moves):
            raise ValidationError("memory bank embeddings and moves differ in length")
        if len(self.sources) != len(self.moves):
            raise ValidationError("memory bank sources and moves differ in length")

    def __len__(self) -> int:
        return len(self.moves)

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    def to_bytes(self, binary: bool = True) -> bytes:
        header = {"moves": list(self.moves), "sources": [list(s) for s in self.sources]}
        return write_container(self.embeddings, "memory_bank", header, binary=binary)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MemoryBank":
        head, m = read_container(data)
        if head.get("kind") != "memory_bank":
            raise ValidationError(f"expected kind 'memory_bank', got {head.get('kind')!r}")
        sources = tuple((str(s), int(i)) for s, i in head["sources"])
        return cls(unit_rows(m, "bank entry"), tuple(head["moves"]), sources)


@dataclass(frozen=True, eq=False)
class MoveEmbeddingTable:
    """One row per codebook move, in codebook order."""

    rows: np.ndarray
    moves: tuple[str, ...]
    mode: str
    seed: int

    def __post_init__(self):
        if self.rows.shape[0] != len(self.moves):
            raise ValidationError("move table rows and moves differ in length")
        if not np.all(np.isfinite(self.rows)):
            raise ValidationError("move table has non-finite entries")

    def row(self, move: str) -> np.ndarray:
        try:
            return self.rows[self.moves.index(move)]
        except ValueError:
            raise ValidationError(f"move {move!r} missing from move table") from None

    def to_bytes(self, binary: bool = True) -> bytes:
        header = {"moves": list(self.moves), "mode": self.mode, "seed": self.seed}
        return write_container(self.rows, "move_table", header, binary=binary)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MoveEmbeddingTable":
        head, m = read_container(data)
        if head.get("kind") != "move_table":
            raise ValidationError(f"expected kind 'move_table', got {head.get('kind')!r}")
        return cls(m, tuple(head["moves"]), head.get("mode", "centroid"), int(head.get("seed", 0)))


class Neighbor(NamedTuple):
    move: str
    similarity: float
    entry: int


def build_memory(
    labeled_corpus: Mapping[str, RaterLabels], embeddings: Mapping[str, EmbeddingSequence]
) -> MemoryBank:
    """One bank entry per labeled utterance, in session then index order.

    Session order follows ``embeddings``; labeled sessions missing there are an
    error.
    """
    missing = [sid for sid, lab in labeled_corpus.items() if len(lab) and sid not in embeddings]
    if missing:
        raise ValidationError(f"labeled sessions without embeddings: {missing}")
    rows, moves, sources = [], [], []
    for sid, emb in embeddings.items():
        lab = labeled_corpus.get(sid)
        if lab is None:
            continue
        for idx in sorted(lab.labels):
            if not 0 <= idx < emb.T:
                raise ValidationError(f"session {sid!r}: label index {idx} has no embedding")
            rows.append(emb.vectors[idx])
            moves.append(lab.labels[idx])
            sources.append((sid, idx))
    if not rows:
        raise ValidationError("fusion requires a non-empty memory")
    return MemoryBank(np.array(rows, dtype=np.float64), tuple(moves), tuple(sources))


def build_move_table(codebook: Codebook, bank: MemoryBank | None = None, mode: str = "centroid", seed: int = 0):
    """Construct move vectors.

    ``centroid``: normalized mean of the bank embeddings carrying each move
    (a zero row for moves absent from the bank). ``random``: seeded standard
    normal rows, unit-normalized.
    """
    names = codebook.move_names
    if mode == "random":
        if bank is None:
            raise ValidationError("random move table needs the bank dimension")
        rng = np.random.default_rng(seed)
        rows = rng.standard_normal((len(names), bank.d))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    elif mode == "centroid":
        if bank is None:
            raise ValidationError("centroid move table needs a memory bank")
        rows = np.zeros((len(names), bank.d))
        bank_moves = np.array(bank.moves, dtype=object)
        for i, name in enumerate(names):
            sel = bank_moves == name
            if sel.any():
                mean = bank.embeddings[sel].mean(axis=0)
                norm = np.linalg.norm(mean)
                if norm > 0:
                    rows[i] = mean / norm
    else:
        raise ValidationError(f"unknown move table mode {mode!r}")
    return MoveEmbeddingTable(rows, names, mode, seed)


def retrieve_topk(query: np.ndarray, bank: MemoryBank, K_ret: int, exclude: Sequence[int] = ()) -> list[Neighbor]:
    """Top ``K_ret`` bank entries by cosine, ties broken by bank order."""
    if len(bank) == 0:
        raise ValidationError("cannot retrieve from an empty memory bank")
    sims = bank.embeddings @ np.asarray(query, dtype=np.float64)
    allowed = np.ones(len(bank), dtype=bool)
    if len(exclude):
        allowed[list(exclude)] = False
    available = int(allowed.sum())
    if K_ret > available:
        warnings.warn(f"K_ret={K_ret} exceeds {available} available bank entries; clamped", FusionWarning, stacklevel=2)
    k = min(K_ret, available)
    cand = np.flatnonzero(allowed)
    order = cand[np.argsort(-sims[cand], kind="stable")][:k]
    return [Neighbor(bank.moves[j], float(sims[j]), int(j)) for j in order]


def attention_weights(similarities, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    s = np.asarray(similarities, dtype=np.float64)
    if s.size == 0:
        raise ValidationError("attention needs at least one similarity")
    z = np.exp((s - s.max()) / tau)
    return z / z.sum()


def aggregate_move_vector(neighbors: Sequence[Neighbor], weights, table: MoveEmbeddingTable) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if len(neighbors) != weights.shape[0]:
        raise ValidationError("neighbors and weights differ in length")
    r = np.zeros(table.rows.shape[1])
    for nb, a in zip(neighbors, weights):
        r += a * table.row(nb.move)
    return r


def fuse(h: np.ndarray, r: np.ndarray, alpha_fuse: float) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise ValidationError("move vector has non-finite entries")
    h = np.asarray(h, dtype=np.float64)
    if alpha_fuse == 0:
        return h.copy()
    v = h + alpha_fuse * r
    norm = np.linalg.norm(v)
    if norm == 0:
        warnings.warn("fused vector is zero; keeping the original embedding", FusionWarning, stacklevel=2)
        log.warning("fusion degeneracy: h + alpha*r is the zero vector")
        return h.copy()
    return v / norm


def fused_embeddings(
    emb: EmbeddingSequence,
    bank: MemoryBank,
    table: MoveEmbeddingTable,
    params: FusionParams | None = None,
) -> EmbeddingSequence:
    params = params or FusionParams()
    if len(bank) == 0:
        raise ValidationError("fusion requires a non-empty memory")
    if bank.d != emb.d or table.rows.shape[1] != emb.d:
        raise ValidationError(f"dimension mismatch: embeddings d={emb.d}, bank d={bank.d}, table d={table.rows.shape[1]}")
    if params.alpha_fuse == 0:
        return EmbeddingSequence(emb.session_id, emb.vectors.copy())
    self_index = {}
    if params.exclude_self:
        self_index = {i: j for j, (sid, i) in enumerate(bank.sources) if sid == emb.session_id}
    out = np.empty_like(emb.vectors)
    for i in range(emb.T):
        h = emb.vectors[i]
        exclude = (self_index[i],) if i in self_index else ()
        neighbors = retrieve_topk(h, bank, params.K_ret, exclude)
        if not neighbors:
            out[i] = h
            continue
        weights = attention_weights([nb.similarity for nb in neighbors], params.tau)
        out[i] = fuse(h, aggregate_move_vector(neighbors, weights, table), params.alpha_fuse)
    return EmbeddingSequence(emb.session_id, out)


def fusion_fingerprint(params: FusionParams, bank: MemoryBank, table: MoveEmbeddingTable) -> str:
    return fingerprint(
        {
            "fusion": params.to_dict(),
            "bank_size": len(bank),
            "bank_digest": sha256_text(bank.embeddings.tobytes())[:16],
            "table_mode": table.mode,
        }
    )
