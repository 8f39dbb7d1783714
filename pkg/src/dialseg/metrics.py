"""Gold-label-free segmentation metrics over rater label distributions.

All logarithms are base 2, so normalized entropy and Jensen-Shannon
divergence both live in [0, 1]. Aggregates that cannot be computed (no
boundaries, no labeled segments, a single session) are reported as ``None``
rather than 0.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .core import BoundarySet, Codebook, Dialogue, RaterLabels, Segmentation, induce_segments
from .errors import UndefinedDistributionError, ValidationError

METRIC_KEYS = ("entropy", "purity", "adjacent_js", "bcr")


# -- label distributions ---------------------------------------------------


def _codes(labels, T: int, codebook: Codebook) -> np.ndarray:
    if isinstance(labels, RaterLabels):
        return labels.codes(T, codebook)
    return np.asarray(labels, dtype=np.int64)


def segment_distribution(segment: range, labels, codebook: Codebook, T: int | None = None) -> np.ndarray:
    """Empirical category distribution of one segment.

    ``labels`` is a :class:`RaterLabels` or an array of category codes as
    produced by :meth:`RaterLabels.codes`.
    """
    if len(segment) == 0:
        raise ValidationError("segment is empty")
    T = T if T is not None else segment.stop
    codes = _codes(labels, T, codebook)[segment.start : segment.stop]
    kept = codes[codes >= 0]
    if kept.size == 0:
        raise UndefinedDistributionError(f"segment {segment.start}..{segment.stop - 1} has no labeled utterances")
    return np.bincount(kept, minlength=codebook.C).astype(np.float64) / kept.size


def _distributions(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized counts plus a mask of rows with a defined distribution."""
    totals = counts.sum(axis=1)
    defined = totals > 0
    dists = np.zeros(counts.shape, dtype=np.float64)
    dists[defined] = counts[defined] / totals[defined, None]
    return dists, defined


def entropy_bits(dist) -> float:
    p = np.asarray(dist, dtype=np.float64)
    nz = p[p > 0]
    if nz.size == 0:
        return 0.0
    if np.all(nz == nz[0]):
        # uniform over its support: exact value avoids ulp drift
        return math.log2(nz.size)
    return float(-np.sum(nz * np.log2(nz)))


def normalized_entropy(dist, C: int) -> float:
    if C < 2:
        raise ValidationError(f"normalized entropy needs C >= 2, got {C}")
    return min(1.0, max(0.0, entropy_bits(dist) / math.log2(C)))


def purity(dist) -> float:
    return float(np.max(np.asarray(dist, dtype=np.float64)))


def _kl_bits(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log2(p[nz] / m[nz])))


def js_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError(f"category count mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    m = 0.5 * (p + q)
    js = 0.5 * _kl_bits(p, m) + 0.5 * _kl_bits(q, m)
    return min(1.0, max(0.0, js))


# -- per-dialogue aggregates -----------------------------------------------


def _boundary_set(segmentation) -> BoundarySet:
    if isinstance(segmentation, Segmentation):
        return segmentation.boundaries
    if isinstance(segmentation, BoundarySet):
        return segmentation
    raise TypeError(f"expected Segmentation or BoundarySet, got {type(segmentation).__name__}")


def _segment_table(segmentation, labels, codebook: Codebook):
    bounds = _boundary_set(segmentation)
    segments = induce_segments(bounds, bounds.T)
    codes = _codes(labels, bounds.T, codebook)
    stops = np.fromiter((s.stop for s in segments), dtype=np.int64, count=len(segments))
    counts = kernels.segment_counts(codes, stops, codebook.C)
    lengths = np.fromiter((len(s) for s in segments), dtype=np.int64, count=len(segments))
    dists, defined = _distributions(counts)
    return bounds, codes, lengths, dists, defined


def _length_weighted(values: Sequence[float], lengths: np.ndarray, mask: np.ndarray) -> float | None:
    if not mask.any():
        return None
    num = math.fsum(float(lengths[k]) * values[k] for k in range(len(values)) if mask[k])
    return num / float(lengths[mask].sum())


def weighted_entropy(segmentation, labels, codebook: Codebook) -> float | None:
    _, _, lengths, dists, defined = _segment_table(segmentation, labels, codebook)
    vals = [normalized_entropy(d, codebook.C) if ok else 0.0 for d, ok in zip(dists, defined)]
    return _length_weighted(vals, lengths, defined)


def weighted_purity(segmentation, labels, codebook: Codebook) -> float | None:
    _, _, lengths, dists, defined = _segment_table(segmentation, labels, codebook)
    vals = [purity(d) if ok else 0.0 for d, ok in zip(dists, defined)]
    return _length_weighted(vals, lengths, defined)


def adjacent_js(segmentation, labels, codebook: Codebook, normalized: bool = False) -> float | None:
    """Pair-weighted JS between neighboring segments.

    Pair weights ``(|S_k| + |S_k+1|) / 2T`` are used as-is; they do not sum to
    one. ``normalized=True`` divides by their total instead. Pairs touching a
    segment without a defined distribution are dropped.
    """
    bounds, _, lengths, dists, defined = _segment_table(segmentation, labels, codebook)
    if len(lengths) < 2:
        return None
    T = bounds.T
    terms = []
    weights = []
    for k in range(len(lengths) - 1):
        if not (defined[k] and defined[k + 1]):
            continue
        w = (lengths[k] + lengths[k + 1]) / (2 * T)
        weights.append(w)
        terms.append(w * js_divergence(dists[k], dists[k + 1]))
    if not terms:
        return None
    total = math.fsum(terms)
    if normalized:
        total /= math.fsum(weights)
    return total


def boundary_change_rate(segmentation, labels, codebook: Codebook) -> float | None:
    bounds = _boundary_set(segmentation)
    if len(bounds) == 0:
        return None
    codes = _codes(labels, bounds.T, codebook)
    changes = 0
    counted = 0
    for j in bounds.indices:
        a, b = codes[j], codes[j + 1]
        if a < 0 or b < 0:
            continue
        counted += 1
        changes += int(a != b)
    if counted == 0:
        return None
    return changes / counted


def human_ai_js(segmentation, labels_h, labels_a, codebook: Codebook) -> float | None:
    _, _, lengths, dists_h, def_h = _segment_table(segmentation, labels_h, codebook)
    _, _, _, dists_a, def_a = _segment_table(segmentation, labels_a, codebook)
    mask = def_h & def_a
    vals = [js_divergence(p, q) if ok else 0.0 for p, q, ok in zip(dists_h, dists_a, mask)]
    return _length_weighted(vals, lengths, mask)


# -- corpus statistics -----------------------------------------------------


def granularity_stats(segmentations) -> tuple[float, float | None]:
    """Mean and sample SD of segment counts; SD is ``None`` for one session."""
    ks = np.array([s if isinstance(s, (int, np.integer)) else s.K for s in segmentations], dtype=np.float64)
    if ks.size == 0:
        raise ValidationError("granularity needs at least one segmentation")
    sd = float(ks.std(ddof=1)) if ks.size > 1 else None
    return float(ks.mean()), sd


def bootstrap_ci(
    values, level: float = 0.95, iterations: int = 10_000, seed: int = 0
) -> tuple[float, float] | None:
    """Percentile bootstrap interval of the mean.

    Resampling uses a Philox (counter-based) generator so the interval depends
    only on ``seed`` and the inputs. Returns ``None`` for fewer than 2 values.
    """
    x = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if x.size < 2:
        return None
    if iterations < 1000:
        raise ValidationError("bootstrap needs at least 1000 iterations")
    if not 0 < level < 1:
        raise ValidationError("level must be in (0, 1)")
    if np.all(x == x[0]):
        return float(x[0]), float(x[0])
    rng = np.random.Generator(np.random.Philox(seed))
    n = x.size
    means = np.empty(iterations, dtype=np.float64)
    chunk = max(1, 2_000_000 // n)
    for start in range(0, iterations, chunk):
        stop = min(iterations, start + chunk)
        idx = rng.integers(0, n, size=(stop - start, n))
        means[start:stop] = x[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [100.0 * tail, 100.0 * (1.0 - tail)])
    return float(lo), float(hi)


@dataclass(frozen=True)
class EvalConfig:
    human_rater: str = "human"
    ai_rater: str = "ai"
    primary_rater: str | None = None
    unlabeled: str = "none"
    normalized_adjacent: bool = False
    ci_level: float = 0.95
    bootstrap_iterations: int = 10_000
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.unlabeled not in ("none", "exclude"):
            raise ValidationError(f"unlabeled mode must be 'none' or 'exclude', got {self.unlabeled!r}")

    @property
    def table_rater(self) -> str:
        return self.primary_rater or self.human_rater


@dataclass
class SessionMetrics:
    session_id: str
    T: int
    K: int
    entropy: dict[str, float | None] = field(default_factory=dict)
    purity: dict[str, float | None] = field(default_factory=dict)
    adjacent_js: dict[str, float | None] = field(default_factory=dict)
    bcr: dict[str, float | None] = field(default_factory=dict)
    human_ai_js: float | None = None
    dropped_segments: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "T": self.T,
            "K": self.K,
            "entropy": self.entropy,
            "purity": self.purity,
            "adjacent_js": self.adjacent_js,
            "bcr": self.bcr,
            "human_ai_js": self.human_ai_js,
            "dropped_segments": self.dropped_segments,
        }


@dataclass(frozen=True)
class Aggregate:
    mean: float | None
    ci: tuple[float, float] | None
    n: int
    n_undefined: int

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "ci": list(self.ci) if self.ci else None,
            "n": self.n,
            "n_undefined": self.n_undefined,
        }


@dataclass
class MetricsReport:
    method: str
    config: EvalConfig
    raters: tuple[str, ...]
    sessions: list[SessionMetrics]
    k_mean: float
    k_sd: float | None
    aggregates: dict[str, Aggregate]

    def aggregate(self, metric: str, rater: str | None = None) -> Aggregate:
        key = metric if metric == "human_ai_js" else f"{metric}[{rater or self.config.table_rater}]"
        return self.aggregates[key]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "unlabeled_mode": self.config.unlabeled,
            "raters": list(self.raters),
            "table_rater": self.config.table_rater,
            "ci": {
                "method": "percentile_bootstrap",
                "level": self.config.ci_level,
                "iterations": self.config.bootstrap_iterations,
                "seed": self.config.seed,
                "unit": "session",
            },
            "granularity": {"k_mean": self.k_mean, "k_sd": self.k_sd, "n": len(self.sessions)},
            "aggregates": {k: v.to_dict() for k, v in self.aggregates.items()},
            "sessions": [s.to_dict() for s in self.sessions],
        }


def evaluate_session(
    dialogue: Dialogue,
    segmentation: Segmentation,
    raters: Mapping[str, RaterLabels],
    codebook: Codebook,
    config: EvalConfig,
) -> SessionMetrics:
    bounds = segmentation.boundaries
    row = SessionMetrics(segmentation.session_id, dialogue.T, bounds.K)
    for rater_id, labels in raters.items():
        _, _, lengths, dists, defined = _segment_table(bounds, labels, codebook)
        row.dropped_segments[rater_id] = int((~defined).sum())
        row.entropy[rater_id] = weighted_entropy(bounds, labels, codebook)
        row.purity[rater_id] = weighted_purity(bounds, labels, codebook)
        row.adjacent_js[rater_id] = adjacent_js(bounds, labels, codebook, config.normalized_adjacent)
        row.bcr[rater_id] = boundary_change_rate(bounds, labels, codebook)
    if config.human_rater in raters and config.ai_rater in raters:
        row.human_ai_js = human_ai_js(bounds, raters[config.human_rater], raters[config.ai_rater], codebook)
    return row


def _aggregate(values: list[float | None], config: EvalConfig) -> Aggregate:
    defined = [v for v in values if v is not None]
    mean = math.fsum(defined) / len(defined) if defined else None
    ci = bootstrap_ci(defined, config.ci_level, config.bootstrap_iterations, config.seed) if defined else None
    return Aggregate(mean, ci, len(defined), len(values) - len(defined))


def evaluate_corpus(
    dialogues: Mapping[str, Dialogue],
    segmentations: Sequence[Segmentation],
    raters: Mapping[str, Mapping[str, RaterLabels]],
    codebook: Codebook,
    config: EvalConfig | None = None,
    method: str | None = None,
) -> MetricsReport:
    """Evaluate one method's segmentations over a corpus.

    ``raters`` maps rater id to per-session labels; a session missing from a
    rater's mapping counts as fully unlabeled by that rater.
    """
    config = config or EvalConfig()
    codebook = codebook.with_none(config.unlabeled == "none")
    if not segmentations:
        raise ValidationError("no segmentations to evaluate")
    for rater in (config.human_rater, config.ai_rater, config.table_rater):
        if rater not in raters:
            raise ValidationError(f"rater {rater!r} not loaded; available: {sorted(raters)}")
    seen = set()
    for seg in segmentations:
        if seg.session_id not in dialogues:
            raise ValidationError(f"segmentation for unknown session {seg.session_id!r}")
        if seg.session_id in seen:
            raise ValidationError(f"duplicate segmentation for session {seg.session_id!r}")
        seen.add(seg.session_id)
        if seg.boundaries.T != dialogues[seg.session_id].T:
            raise ValidationError(
                f"session {seg.session_id!r}: segmentation T={seg.boundaries.T} but dialogue T={dialogues[seg.session_id].T}"
            )

    def one(seg: Segmentation) -> SessionMetrics:
        per_rater = {
            r: labels.get(seg.session_id, RaterLabels(r, {})) for r, labels in raters.items()
        }
        return evaluate_session(dialogues[seg.session_id], seg, per_rater, codebook, config)

    if config.jobs > 1:
        with ThreadPoolExecutor(config.jobs) as pool:
            rows = list(pool.map(one, segmentations))
    else:
        rows = [one(s) for s in segmentations]

    k_mean, k_sd = granularity_stats([r.K for r in rows])
    aggregates = {}
    for metric in METRIC_KEYS:
        for rater in raters:
            aggregates[f"{metric}[{rater}]"] = _aggregate([getattr(r, metric)[rater] for r in rows], config)
    aggregates["human_ai_js"] = _aggregate([r.human_ai_js for r in rows], config)
    return MetricsReport(
        method=method or segmentations[0].method,
        config=config,
        raters=tuple(raters),
        sessions=rows,
        k_mean=k_mean,
        k_sd=k_sd,
        aggregates=aggregates,
    )
