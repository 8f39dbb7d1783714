"""Strict, total parsers for LLM completions.

Every entry point either returns a fully valid value or raises a typed error
(:class:`BoundaryParseError` / :class:`AnnotationParseError`) carrying the raw
response. Nothing else escapes.
"""

from __future__ import annotations

import json

from ..core import BoundarySet, Codebook, Dialogue, RaterLabels, normalize_boundaries
from ..errors import AnnotationParseError, BoundaryParseError, NormalizationError

_decoder = json.JSONDecoder()
_NULL_MOVES = {"none", "null", ""}


def _as_text(raw) -> str:
    if isinstance(raw, (bytes, bytearray)):
        return bytes(raw).decode("utf-8", errors="replace")
    if not isinstance(raw, str):
        raise TypeError(f"expected str or bytes, got {type(raw).__name__}")
    return raw


def first_json_object(text: str) -> dict | None:
    """First decodable JSON object in ``text``, skipping prose and fences."""
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = _decoder.raw_decode(text, pos)
        except (ValueError, RecursionError):
            obj = None
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    return None


def _strict_object(text: str) -> dict | None:
    try:
        obj = json.loads(text.strip())
    except (ValueError, RecursionError):
        return None
    return obj if isinstance(obj, dict) else None


def parse_boundary_response(raw, T: int, strict: bool = False) -> BoundarySet:
    """Read ``{"boundary_indices": [...]}`` and normalize it for a ``T``-turn dialogue.

    The trailing final-turn index the prompt asks for is stripped. With
    ``strict`` the whole response must be exactly that envelope.
    """
    text = _as_text(raw)
    obj = _strict_object(text) if strict else first_json_object(text)
    if obj is None:
        raise BoundaryParseError("no JSON object in response", text)
    if strict and set(obj) != {"boundary_indices"}:
        raise BoundaryParseError(f"strict mode expects only 'boundary_indices', got {sorted(obj)}", text)
    if "boundary_indices" not in obj:
        raise BoundaryParseError(f"response object lacks 'boundary_indices' (keys: {sorted(obj)[:10]})", text)
    values = obj["boundary_indices"]
    if not isinstance(values, list):
        raise BoundaryParseError("'boundary_indices' is not a list", text)
    for v in values:
        if isinstance(v, bool) or not isinstance(v, int):
            raise BoundaryParseError(f"non-integer boundary entry {v!r}", text)
    try:
        return normalize_boundaries(values, T, final_sentinel=True)
    except NormalizationError as exc:
        raise BoundaryParseError(str(exc), text) from None


def parse_annotation_response(raw, dialogue: Dialogue, codebook: Codebook, rater_id: str = "ai") -> RaterLabels:
    """Resolve a ``records`` envelope into labels for ``dialogue``.

    Records whose move is null (or the literal "None") leave the utterance
    unlabeled. Unknown ids and moves are collected and reported together.
    """
    text = _as_text(raw)
    obj = first_json_object(text)
    if obj is None or not isinstance(obj.get("records"), list):
        raise AnnotationParseError("response has no 'records' list", raw=text)
    ids = dialogue.index_of()
    labels: dict[int, str] = {}
    offenders = []
    for n, rec in enumerate(obj["records"]):
        if not isinstance(rec, dict) or "id" not in rec:
            offenders.append(f"record {n}: missing id")
            continue
        uid = rec["id"]
        uid = str(uid) if isinstance(uid, (str, int)) and not isinstance(uid, bool) else None
        move = rec.get("move")
        if uid not in ids:
            offenders.append(f"record {n}: unknown id {rec['id']!r}")
            continue
        if move is None or (isinstance(move, str) and move.strip().lower() in _NULL_MOVES):
            continue
        if not isinstance(move, str) or move not in codebook:
            offenders.append(f"record {n}: unknown move {move!r}")
            continue
        if ids[uid] in labels and labels[ids[uid]] != move:
            offenders.append(f"record {n}: conflicting move for id {uid!r}")
            continue
        labels[ids[uid]] = move
    if offenders:
        raise AnnotationParseError("; ".join(offenders), offenders, raw=text)
    return RaterLabels(rater_id, dict(sorted(labels.items())))
