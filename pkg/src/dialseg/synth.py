"""Seeded synthetic corpora with planted segments.

Each dialogue is cut into ``K`` segments carrying one dominant move, adjacent
segments always differ, the AI rater copies the human rater with independent
label flips, and embeddings scatter around one unit centroid per segment.
Text is filler: nothing downstream reads its semantics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .core import BoundarySet, Codebook, Dialogue, EmbeddingSequence, Move, RaterLabels, Segmentation, Utterance, fingerprint
from .errors import InfeasibleSpecError
from .ingest import (
    serialize_codebook,
    serialize_embeddings,
    serialize_labels,
    serialize_segmentation,
    serialize_transcript,
    write_manifest,
)

MAX_CENTROID_REJECTIONS = 100
MAX_SESSION_RETRIES = 20


@dataclass(frozen=True)
class SynthSpec:
    sessions: int = 20
    T_min: int = 20
    T_max: int = 40
    K_min: int = 2
    K_max: int = 5
    C: int = 4
    d: int = 32
    separation: float = 0.7
    rater_noise: float = 0.0
    unlabeled_rate: float = 0.0
    seed: int = 0
    embed_noise: float = 0.35
    min_seg_len: int = 4

    def validate(self) -> None:
        if self.sessions < 1:
            raise InfeasibleSpecError("sessions must be >= 1")
        if not 1 <= self.T_min <= self.T_max:
            raise InfeasibleSpecError(f"bad T range {self.T_min}..{self.T_max}")
        if not 1 <= self.K_min <= self.K_max:
            raise InfeasibleSpecError(f"bad K range {self.K_min}..{self.K_max}")
        if self.K_max > self.T_min:
            raise InfeasibleSpecError(f"K_max={self.K_max} exceeds T_min={self.T_min}")
        if self.min_seg_len < 1 or self.K_max * self.min_seg_len > self.T_min:
            raise InfeasibleSpecError(
                f"K_max={self.K_max} segments of >= {self.min_seg_len} utterances do not fit in T_min={self.T_min}"
            )
        if self.C < 1:
            raise InfeasibleSpecError("C must be >= 1")
        if self.C == 1 and self.K_max >= 2:
            raise InfeasibleSpecError("C=1 cannot give adjacent segments distinct moves")
        if self.d < 2:
            raise InfeasibleSpecError("embedding dimension must be >= 2")
        for name in ("separation", "rater_noise", "unlabeled_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InfeasibleSpecError(f"{name}={v} outside [0, 1]")
        if self.embed_noise < 0:
            raise InfeasibleSpecError("embed_noise must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InfeasibleSpecError(f"unknown synth spec fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthCorpus:
    spec: SynthSpec
    codebook: Codebook
    dialogues: dict[str, Dialogue]
    truth: dict[str, Segmentation]
    labels_h: dict[str, RaterLabels]
    labels_a: dict[str, RaterLabels]
    embeddings: dict[str, EmbeddingSequence]
    dominant: dict[str, tuple[str, ...]]


def synth_codebook(C: int) -> Codebook:
    return Codebook(
        "synthetic",
        tuple(Move(f"move_{c}", f"Synthetic move number {c}.", (f"example of move {c}",)) for c in range(C)),
        True,
    )


def _lengths(rng: np.random.Generator, T: int, K: int, min_len: int) -> list[int]:
    extra = T - K * min_len
    cuts = np.sort(rng.integers(0, extra + 1, size=K - 1))
    parts = np.diff(np.concatenate([[0], cuts, [extra]]))
    return [int(p) + min_len for p in parts]


def _centroids(rng: np.random.Generator, K: int, d: int, separation: float) -> np.ndarray:
    out = []
    rejections = 0
    while len(out) < K:
        c = rng.standard_normal(d)
        c /= np.linalg.norm(c)
        if out and float(c @ out[-1]) > 1.0 - separation:
            rejections += 1
            if rejections > MAX_CENTROID_REJECTIONS:
                raise InfeasibleSpecError(
                    f"could not draw centroids with adjacent cosine <= {1 - separation:.3f} in d={d}"
                )
            continue
        out.append(c)
    return np.array(out)


def _separated(vectors: np.ndarray, lengths: list[int]) -> bool:
    """Every within-segment cosine exceeds every adjacent cross-segment cosine."""
    gram = vectors @ vectors.T
    bounds = np.cumsum([0] + lengths)
    within_min = np.inf
    cross_max = -np.inf
    for k in range(len(lengths)):
        a, b = bounds[k], bounds[k + 1]
        if b - a > 1:
            block = gram[a:b, a:b][np.triu_indices(b - a, 1)]
            within_min = min(within_min, float(block.min()))
        if k + 1 < len(lengths):
            c = bounds[k + 2]
            cross_max = max(cross_max, float(gram[a:b, b:c].max()))
    return within_min > cross_max


def _session(spec: SynthSpec, codebook: Codebook, i: int):
    sid = f"s{i:03d}"
    moves = codebook.move_names
    for attempt in range(MAX_SESSION_RETRIES):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, i, attempt]))
        T = int(rng.integers(spec.T_min, spec.T_max + 1))
        K = int(rng.integers(spec.K_min, spec.K_max + 1))
        lengths = _lengths(rng, T, K, spec.min_seg_len)
        dom = [int(rng.integers(0, spec.C))]
        for _ in range(K - 1):
            choice = int(rng.integers(0, spec.C - 1))
            dom.append(choice if choice < dom[-1] else choice + 1)
        centroids = _centroids(rng, K, spec.d, spec.separation)
        seg_of = np.repeat(np.arange(K), lengths)
        noise = rng.standard_normal((T, spec.d)) * (spec.embed_noise / np.sqrt(spec.d))
        vectors = centroids[seg_of] + noise
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        if spec.separation >= 0.5 and not _separated(vectors, lengths):
            continue
        holes = rng.random(T) < spec.unlabeled_rate
        flips = rng.random(T) < spec.rater_noise
        flip_to = rng.integers(0, max(1, spec.C - 1), size=T)
        lab_h, lab_a = {}, {}
        for t in range(T):
            if holes[t]:
                continue
            m = dom[seg_of[t]]
            lab_h[t] = moves[m]
            if flips[t] and spec.C > 1:
                alt = int(flip_to[t])
                lab_a[t] = moves[alt if alt < m else alt + 1]
            else:
                lab_a[t] = moves[m]
        speakers = ("T", "S")
        utts = tuple(
            Utterance(f"u{t}", t, speakers[t % 2], f"[{sid}] utterance {t} of segment {seg_of[t]}") for t in range(T)
        )
        cuts = tuple(int(x) - 1 for x in np.cumsum(lengths)[:-1])
        truth = Segmentation(sid, BoundarySet(cuts, T), "truth", fingerprint({"synth": spec.to_dict()}))
        return (
            Dialogue(sid, utts),
            truth,
            RaterLabels("human", lab_h),
            RaterLabels("ai", lab_a),
            EmbeddingSequence(sid, vectors),
            tuple(moves[m] for m in dom),
        )
    raise InfeasibleSpecError(f"session {sid}: clusters not separable after {MAX_SESSION_RETRIES} draws")


def generate(spec: SynthSpec) -> SynthCorpus:
    """Build a corpus; deterministic for a given spec (including its seed)."""
    spec.validate()
    codebook = synth_codebook(spec.C)
    corpus = SynthCorpus(spec, codebook, {}, {}, {}, {}, {}, {})
    for i in range(spec.sessions):
        dialogue, truth, lh, la, emb, dom = _session(spec, codebook, i)
        sid = dialogue.session_id
        corpus.dialogues[sid] = dialogue
        corpus.truth[sid] = truth
        corpus.labels_h[sid] = lh
        corpus.labels_a[sid] = la
        corpus.embeddings[sid] = emb
        corpus.dominant[sid] = dom
    return corpus


def write_corpus(corpus: SynthCorpus, out_dir: str | Path, binary_embeddings: bool = True) -> Path:
    """Write ingest-format files plus ground truth; returns the manifest path."""
    out = Path(out_dir)
    for sub in ("transcripts", "embeddings", "labels", "truth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "codebook.json").write_bytes(serialize_codebook(corpus.codebook))
    ext = "demb" if binary_embeddings else "emb.json"
    sessions = []
    for sid, dialogue in corpus.dialogues.items():
        (out / "transcripts" / f"{sid}.jsonl").write_bytes(serialize_transcript(dialogue))
        (out / "embeddings" / f"{sid}.{ext}").write_bytes(
            serialize_embeddings(corpus.embeddings[sid], binary=binary_embeddings)
        )
        (out / "truth" / f"{sid}.json").write_bytes(serialize_segmentation(corpus.truth[sid]))
        sessions.append(
            {"session_id": sid, "transcript": f"transcripts/{sid}.jsonl", "embeddings": f"embeddings/{sid}.{ext}"}
        )
    (out / "labels" / "human.jsonl").write_bytes(serialize_labels("human", corpus.labels_h, corpus.dialogues))
    (out / "labels" / "ai.jsonl").write_bytes(serialize_labels("ai", corpus.labels_a, corpus.dialogues))
    (out / "synth_spec.json").write_text(json.dumps(corpus.spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    write_manifest(
        out / "manifest.json",
        sessions,
        [{"rater_id": "human", "path": "labels/human.jsonl"}, {"rater_id": "ai", "path": "labels/ai.jsonl"}],
        "codebook.json",
    )
    return out / "manifest.json"
