"""Readers, writers and validation for corpus files.

Formats (all carry ``format_version``):

* transcript: JSON lines, an optional header ``{"format_version", "session_id"}``
  followed by one ``{"id", "speaker", "text"}`` object per utterance. The
  utterance index is the line order and is never read from the file.
* labels: JSON lines, optional header ``{"format_version", "rater_id"}`` then
  ``{"session_id", "utterance_id", "move"}`` rows; ``move`` may be null.
* codebook: one JSON document ``{"name", "moves": [{"name", "definition", "examples"}]}``.
* embeddings: a binary container (magic line, JSON header line, row-major
  little-endian float32) or a JSON document with a ``vectors`` array.
* manifest: one JSON document listing sessions, label files and the codebook.
"""

from __future__ import annotations

import difflib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import BoundarySet, Codebook, Dialogue, EmbeddingSequence, Move, RaterLabels, Segmentation, Utterance
from .errors import ParseError, ValidationError

FORMAT_VERSION = 1
EMB_MAGIC = b"DSEMB\n"
# float32 storage perturbs a unit norm by at most ~6e-8; vectors this close to
# unit length are kept as-is so that read/write round trips are byte-stable
_NORM_SLACK = 2.5e-7


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False)


def _decode(data: bytes | str, source: str | None) -> str:
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}", source=source) from None


def _check_version(obj: dict, line: int | None, source: str | None) -> None:
    version = obj.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version!r}", line=line, source=source)


def _lines(text: str) -> list[str]:
    # only "\n" ends a record; str.splitlines would also split on U+0085 and
    # U+2028, which JSON leaves unescaped inside strings
    return [line.removesuffix("\r") for line in text.split("\n")]


def _jsonl_records(text: str, source: str | None):
    for lineno, line in enumerate(_lines(text), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno, source=source) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line=lineno, source=source)
        yield lineno, obj


# -- transcripts -----------------------------------------------------------


def parse_transcript(data: bytes | str, session_id: str | None = None, source: str | None = None) -> Dialogue:
    text = _decode(data, source)
    header_sid = None
    utterances = []
    first_line = {}
    for lineno, obj in _jsonl_records(text, source):
        if "format_version" in obj and "text" not in obj:
            if utterances:
                raise ParseError("header must precede utterances", line=lineno, source=source)
            _check_version(obj, lineno, source)
            header_sid = obj.get("session_id")
            continue
        if "id" not in obj:
            raise ParseError("missing field 'id'", line=lineno, source=source)
        if "text" not in obj:
            raise ParseError("missing field 'text'", line=lineno, source=source)
        uid, utext = obj["id"], obj["text"]
        if not isinstance(uid, str) or not isinstance(utext, str):
            raise ParseError("'id' and 'text' must be strings", line=lineno, source=source)
        speaker = obj.get("speaker", "")
        if not isinstance(speaker, str):
            raise ParseError("'speaker' must be a string", line=lineno, source=source)
        if uid in first_line:
            raise ParseError(
                f"duplicate utterance id {uid!r} (lines {first_line[uid]} and {lineno})",
                line=lineno,
                source=source,
            )
        first_line[uid] = lineno
        utterances.append(Utterance(uid, len(utterances), speaker, utext))
    if session_id is not None and header_sid is not None and header_sid != session_id:
        raise ParseError(f"header session_id {header_sid!r} does not match {session_id!r}", source=source)
    sid = session_id if session_id is not None else header_sid
    if sid is None:
        raise ParseError("session_id not given and no header present", source=source)
    if not utterances:
        raise ParseError("transcript has zero utterances", source=source)
    return Dialogue(sid, tuple(utterances))


def serialize_transcript(dialogue: Dialogue) -> bytes:
    lines = [_dumps({"format_version": FORMAT_VERSION, "session_id": dialogue.session_id})]
    lines.extend(_dumps({"id": u.id, "speaker": u.speaker, "text": u.text}) for u in dialogue.utterances)
    return ("\n".join(lines) + "\n").encode("utf-8")


# -- codebooks -------------------------------------------------------------


def parse_codebook(data: bytes | str, source: str | None = None) -> Codebook:
    try:
        obj = json.loads(_decode(data, source))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, source=source) from None
    if not isinstance(obj, dict) or not isinstance(obj.get("moves"), list):
        raise ParseError("codebook must be an object with a 'moves' list", source=source)
    _check_version(obj, None, source)
    moves = []
    for i, m in enumerate(obj["moves"]):
        if not isinstance(m, dict) or not isinstance(m.get("name"), str):
            raise ParseError(f"move #{i} needs a string 'name'", source=source)
        examples = m.get("examples", [])
        if not isinstance(examples, list) or not all(isinstance(e, str) for e in examples):
            raise ParseError(f"move {m['name']!r}: 'examples' must be a list of strings", source=source)
        moves.append(Move(m["name"], str(m.get("definition", "")), tuple(examples)))
    try:
        return Codebook(str(obj.get("name", "")), tuple(moves), bool(obj.get("none_category", True)))
    except ValidationError as exc:
        raise ParseError(str(exc), source=source) from None


def serialize_codebook(codebook: Codebook) -> bytes:
    obj = {
        "format_version": FORMAT_VERSION,
        "name": codebook.name,
        "none_category": codebook.none_category_enabled,
        "moves": [{"name": m.name, "definition": m.definition, "examples": list(m.examples)} for m in codebook.moves],
    }
    return (json.dumps(obj, ensure_ascii=False, indent=2) + "\n").encode("utf-8")


# -- labels ----------------------------------------------------------------


def _unknown_move(move: str, codebook: Codebook) -> str:
    hint = difflib.get_close_matches(move, codebook.move_names, n=1)
    msg = f"unknown move {move!r}"
    if hint:
        msg += f" (did you mean {hint[0]!r}?)"
    return msg + f"; valid moves: {list(codebook.move_names)}"


def parse_labels(
    data: bytes | str,
    codebook: Codebook,
    dialogues: Mapping[str, Dialogue],
    rater_id: str | None = None,
    source: str | None = None,
) -> dict[str, RaterLabels]:
    """Read one rater's label file covering any subset of ``dialogues``."""
    text = _decode(data, source)
    rater = rater_id
    per_session: dict[str, dict[int, str]] = {}
    seen: dict[tuple[str, str], int] = {}
    index_maps = {}
    for lineno, obj in _jsonl_records(text, source):
        if "format_version" in obj and "utterance_id" not in obj:
            _check_version(obj, lineno, source)
            if rater is None:
                rater = obj.get("rater_id")
            continue
        sid = obj.get("session_id")
        uid = obj.get("utterance_id")
        if sid is None and len(dialogues) == 1:
            sid = next(iter(dialogues))
        if not isinstance(sid, str) or not isinstance(uid, str):
            raise ParseError("rows need string 'session_id' and 'utterance_id'", line=lineno, source=source)
        if sid not in dialogues:
            raise ParseError(f"label for unknown session {sid!r}", line=lineno, source=source)
        if sid not in index_maps:
            index_maps[sid] = dialogues[sid].index_of()
        if uid not in index_maps[sid]:
            raise ParseError(f"unknown utterance id {uid!r} in session {sid!r}", line=lineno, source=source)
        if (sid, uid) in seen:
            raise ParseError(
                f"duplicate label for {sid}/{uid} (lines {seen[(sid, uid)]} and {lineno})", line=lineno, source=source
            )
        seen[(sid, uid)] = lineno
        move = obj.get("move")
        labels = per_session.setdefault(sid, {})
        if move is None:
            continue
        if not isinstance(move, str) or move not in codebook:
            raise ParseError(_unknown_move(str(move), codebook), line=lineno, source=source)
        labels[index_maps[sid][uid]] = move
    rater = rater or "rater"
    return {sid: RaterLabels(rater, dict(sorted(lab.items()))) for sid, lab in per_session.items()}


def parse_session_labels(
    data: bytes | str, codebook: Codebook, dialogue: Dialogue, rater_id: str | None = None
) -> RaterLabels:
    parsed = parse_labels(data, codebook, {dialogue.session_id: dialogue}, rater_id)
    if dialogue.session_id in parsed:
        return parsed[dialogue.session_id]
    return RaterLabels(rater_id or "rater", {})


def serialize_labels(rater_id: str, labels: Mapping[str, RaterLabels], dialogues: Mapping[str, Dialogue]) -> bytes:
    """Canonical label file: session order of ``dialogues``, then utterance order."""
    lines = [_dumps({"format_version": FORMAT_VERSION, "rater_id": rater_id})]
    for sid, dialogue in dialogues.items():
        if sid not in labels:
            continue
        lab = labels[sid].labels
        for idx in sorted(lab):
            lines.append(_dumps({"session_id": sid, "utterance_id": dialogue.utterances[idx].id, "move": lab[idx]}))
    return ("\n".join(lines) + "\n").encode("utf-8")


# -- embedding containers --------------------------------------------------


def write_container(
    matrix: np.ndarray, kind: str, header: Mapping | None = None, binary: bool = True
) -> bytes:
    """Serialize a float matrix with a self-describing header."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"container payload must be 2-D, got shape {m.shape}")
    head = {"format_version": FORMAT_VERSION, "kind": kind, **(header or {}), "d": int(m.shape[1]), "T": int(m.shape[0])}
    as32 = m.astype("<f4")
    if binary:
        head["dtype"] = "<f4"
        return EMB_MAGIC + (_dumps(head) + "\n").encode("utf-8") + as32.tobytes(order="C")
    head["vectors"] = [[float(x) for x in row] for row in as32]
    return (_dumps(head) + "\n").encode("utf-8")


def read_container(data: bytes | str, source: str | None = None) -> tuple[dict, np.ndarray]:
    """Inverse of :func:`write_container`; returns ``(header, float64 matrix)``."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    if data.startswith(EMB_MAGIC):
        end = data.find(b"\n", len(EMB_MAGIC))
        if end < 0:
            raise ParseError("truncated container header", source=source)
        try:
            head = json.loads(data[len(EMB_MAGIC) : end].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"bad container header: {exc}", source=source) from None
        _check_header(head, source)
        if head.get("dtype", "<f4") != "<f4":
            raise ParseError(f"unsupported dtype {head.get('dtype')!r}", source=source)
        payload = data[end + 1 :]
        T, d = head["T"], head["d"]
        if len(payload) != T * d * 4:
            raise ParseError(f"payload holds {len(payload) // 4} floats, header declares {T}x{d}", source=source)
        m = np.frombuffer(payload, dtype="<f4").reshape(T, d).astype(np.float64)
        return head, m
    try:
        head = json.loads(_decode(data, source))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", source=source) from None
    if not isinstance(head, dict) or "vectors" not in head:
        raise ParseError("JSON container needs a 'vectors' field", source=source)
    vectors = head.pop("vectors")
    head.setdefault("T", len(vectors) if isinstance(vectors, list) else -1)
    _check_header(head, source)
    T, d = head["T"], head["d"]
    if not isinstance(vectors, list) or len(vectors) != T:
        raise ParseError(f"header declares T={T} but {len(vectors) if isinstance(vectors, list) else 0} vectors given", source=source)
    rows = []
    for i, row in enumerate(vectors):
        if not isinstance(row, list) or len(row) != d:
            raise ParseError(f"vector {i} has dimension {len(row) if isinstance(row, list) else '?'}, expected {d}", source=source)
        try:
            rows.append([float(x) for x in row])
        except (TypeError, ValueError):
            raise ParseError(f"vector {i} has non-numeric entries", source=source) from None
    m = np.array(rows, dtype=np.float64).reshape(T, d)
    return head, m


def _check_header(head, source):
    if not isinstance(head, dict):
        raise ParseError("container header must be an object", source=source)
    _check_version(head, None, source)
    for key in ("d", "T"):
        if not isinstance(head.get(key), int) or isinstance(head.get(key), bool) or head[key] < 0:
            raise ParseError(f"header field {key!r} must be a non-negative integer", source=source)


def unit_rows(m: np.ndarray, what: str = "vector") -> np.ndarray:
    """Renormalize rows to unit length; rejects non-finite and zero rows."""
    m = np.array(m, dtype=np.float64)
    finite = np.isfinite(m).all(axis=1)
    if not finite.all():
        raise ValidationError(f"non-finite value in {what} {int(np.argmin(finite))}")
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if (norms == 0).any():
        raise ValidationError(f"zero {what} at index {int(np.argmin(norms))}")
    fix = np.abs(norms - 1.0) > _NORM_SLACK
    m[fix] /= norms[fix, None]
    return m


def load_embeddings(
    data: bytes | str, expected_T: int | None = None, session_id: str | None = None, source: str | None = None
) -> EmbeddingSequence:
    head, m = read_container(data, source)
    kind = head.get("kind", "embeddings")
    if kind != "embeddings":
        raise ParseError(f"expected kind 'embeddings', got {kind!r}", source=source)
    if head["d"] < 2:
        raise ParseError(f"embedding dimension must be >= 2, got {head['d']}", source=source)
    if expected_T is not None and head["T"] != expected_T:
        raise ParseError(f"{head['T']} vectors for a session of T={expected_T} (count mismatch)", source=source)
    sid = session_id if session_id is not None else head.get("session_id", "")
    if session_id is not None and head.get("session_id") not in (None, session_id):
        raise ParseError(f"container session_id {head['session_id']!r} does not match {session_id!r}", source=source)
    try:
        vectors = unit_rows(m, "utterance")
    except ValidationError as exc:
        raise ParseError(str(exc), source=source) from None
    return EmbeddingSequence(sid, vectors)


def serialize_embeddings(emb: EmbeddingSequence, binary: bool = True) -> bytes:
    return write_container(emb.vectors, "embeddings", {"session_id": emb.session_id}, binary=binary)


# -- manifests and corpora -------------------------------------------------


@dataclass(frozen=True)
class SessionEntry:
    session_id: str
    transcript_path: Path
    embedding_path: Path | None = None


@dataclass(frozen=True)
class LabelFileEntry:
    rater_id: str
    path: Path


@dataclass(frozen=True)
class CorpusManifest:
    path: Path
    sessions: tuple[SessionEntry, ...]
    label_files: tuple[LabelFileEntry, ...]
    codebook_path: Path

    @property
    def root(self) -> Path:
        return self.path.parent


def load_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, source=str(path)) from None
    if not isinstance(obj, dict):
        raise ParseError("manifest must be a JSON object", source=str(path))
    _check_version(obj, None, str(path))
    root = path.parent
    try:
        sessions = []
        seen = set()
        for s in obj["sessions"]:
            sid = s["session_id"]
            if sid in seen:
                raise ParseError(f"duplicate session_id {sid!r}", source=str(path))
            seen.add(sid)
            emb = s.get("embeddings")
            sessions.append(SessionEntry(sid, root / s["transcript"], root / emb if emb else None))
        label_files = tuple(LabelFileEntry(lf["rater_id"], root / lf["path"]) for lf in obj.get("label_files", []))
        codebook_path = root / obj["codebook"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed manifest: missing or invalid {exc}", source=str(path)) from None
    return CorpusManifest(path, tuple(sessions), label_files, codebook_path)


def write_manifest(
    path: str | Path,
    sessions: list[dict],
    label_files: list[dict],
    codebook: str,
) -> bytes:
    obj = {"format_version": FORMAT_VERSION, "codebook": codebook, "sessions": sessions, "label_files": label_files}
    blob = (json.dumps(obj, ensure_ascii=False, indent=2) + "\n").encode("utf-8")
    Path(path).write_bytes(blob)
    return blob


@dataclass
class Corpus:
    manifest: CorpusManifest
    codebook: Codebook
    dialogues: dict[str, Dialogue]
    raters: dict[str, dict[str, RaterLabels]]

    def embeddings(self, session_id: str) -> EmbeddingSequence:
        entry = next(s for s in self.manifest.sessions if s.session_id == session_id)
        if entry.embedding_path is None:
            raise ValidationError(f"session {session_id!r} has no embeddings")
        return load_embeddings(
            entry.embedding_path.read_bytes(),
            expected_T=self.dialogues[session_id].T,
            session_id=session_id,
            source=str(entry.embedding_path),
        )

    def has_embeddings(self) -> bool:
        return all(s.embedding_path is not None for s in self.manifest.sessions)


def load_corpus(manifest: CorpusManifest | str | Path) -> Corpus:
    """Load every transcript and label file; raises on the first problem.

    Use :func:`validate_corpus` for an aggregated report.
    """
    if not isinstance(manifest, CorpusManifest):
        manifest = load_manifest(manifest)
    codebook = parse_codebook(_read(manifest.codebook_path), source=str(manifest.codebook_path))
    dialogues = {}
    for s in manifest.sessions:
        dialogues[s.session_id] = parse_transcript(_read(s.transcript_path), s.session_id, str(s.transcript_path))
    raters: dict[str, dict[str, RaterLabels]] = {}
    for lf in manifest.label_files:
        parsed = parse_labels(_read(lf.path), codebook, dialogues, lf.rater_id, str(lf.path))
        bucket = raters.setdefault(lf.rater_id, {})
        for sid, lab in parsed.items():
            if sid in bucket:
                raise ValidationError(f"rater {lf.rater_id!r} labels session {sid!r} in more than one file")
            bucket[sid] = lab
    return Corpus(manifest, codebook, dialogues, raters)


def _read(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise ParseError(f"file not found: {path}") from None


@dataclass
class SessionReport:
    session_id: str
    T: int | None
    coverage: dict[str, float] = field(default_factory=dict)
    has_embeddings: bool = False


@dataclass
class ValidationReport:
    rows: list[SessionReport]
    errors: list[tuple[str, str]]

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "sessions": [
                {"session_id": r.session_id, "T": r.T, "label_coverage": r.coverage, "has_embeddings": r.has_embeddings}
                for r in self.rows
            ],
            "errors": [{"session_id": sid, "message": msg} for sid, msg in self.errors],
        }


def validate_corpus(manifest: CorpusManifest | str | Path, check_embeddings: bool = True) -> ValidationReport:
    """Check every file the manifest references and report per session.

    Errors are collected rather than raised; each is tagged with its session
    id (or ``"*"`` for corpus-wide problems such as the codebook).
    """
    errors: list[tuple[str, str]] = []
    if not isinstance(manifest, CorpusManifest):
        try:
            manifest = load_manifest(manifest)
        except ParseError as exc:
            return ValidationReport([], [("*", str(exc))])
    try:
        codebook = parse_codebook(_read(manifest.codebook_path), source=str(manifest.codebook_path))
    except ParseError as exc:
        errors.append(("*", str(exc)))
        codebook = None
    rows = []
    dialogues = {}
    for s in manifest.sessions:
        row = SessionReport(s.session_id, None)
        rows.append(row)
        try:
            d = parse_transcript(_read(s.transcript_path), s.session_id, str(s.transcript_path))
        except (ParseError, ValidationError) as exc:
            errors.append((s.session_id, str(exc)))
            continue
        dialogues[s.session_id] = d
        row.T = d.T
        if s.embedding_path is not None:
            if check_embeddings:
                try:
                    load_embeddings(_read(s.embedding_path), d.T, s.session_id, str(s.embedding_path))
                    row.has_embeddings = True
                except (ParseError, ValidationError) as exc:
                    errors.append((s.session_id, str(exc)))
            else:
                row.has_embeddings = s.embedding_path.exists()
    if codebook is not None:
        by_id = {r.session_id: r for r in rows}
        for lf in manifest.label_files:
            try:
                text = _read(lf.path).decode("utf-8")
            except (ParseError, UnicodeDecodeError) as exc:
                errors.append(("*", f"rater {lf.rater_id!r}: {exc}"))
                continue
            before = len(errors)
            usable = []
            # parse row by row so one bad line does not hide the rest
            for lineno, line in enumerate(_lines(text), 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    errors.append(("*", f"{lf.path}: line {lineno}: invalid JSON: {exc.msg}"))
                    continue
                sid = obj.get("session_id") if isinstance(obj, dict) else None
                if isinstance(obj, dict) and "format_version" in obj and "utterance_id" not in obj:
                    usable.append(line)
                    continue
                if sid not in by_id:
                    errors.append((str(sid), f"{lf.path}: line {lineno}: rater {lf.rater_id!r} labels unknown session {sid!r}"))
                    continue
                if sid not in dialogues:
                    # transcript already failed and was reported
                    continue
                try:
                    parse_labels(line, codebook, {sid: dialogues[sid]}, lf.rater_id, str(lf.path))
                except ParseError as exc:
                    errors.append((sid, f"line {lineno}: {exc}"))
                    continue
                usable.append(line)
            try:
                parsed = parse_labels("\n".join(usable), codebook, dialogues, lf.rater_id, str(lf.path))
            except ParseError as exc:
                if len(errors) == before:
                    errors.append(("*", f"rater {lf.rater_id!r}: {exc}"))
                parsed = {}
            for sid, lab in parsed.items():
                by_id[sid].coverage[lf.rater_id] = len(lab) / dialogues[sid].T
        for r in rows:
            if r.T is not None:
                for lf in manifest.label_files:
                    r.coverage.setdefault(lf.rater_id, 0.0)
    return ValidationReport(rows, errors)


# -- segmentation files ----------------------------------------------------


def serialize_segmentation(seg: Segmentation) -> bytes:
    """One segmentation per file; boundaries are internal, 0-indexed, sentinel-free."""
    obj = {
        "format_version": FORMAT_VERSION,
        "session_id": seg.session_id,
        "method": seg.method,
        "params_fingerprint": seg.params_fingerprint,
        "T": seg.boundaries.T,
        "boundary_indices": list(seg.boundaries.indices),
    }
    if seg.meta:
        obj["provenance"] = dict(seg.meta)
    return (json.dumps(obj, ensure_ascii=False, sort_keys=False) + "\n").encode("utf-8")


def parse_segmentation(data: bytes | str, T: int | None = None, source: str | None = None) -> Segmentation:
    try:
        obj = json.loads(_decode(data, source))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", source=source) from None
    if not isinstance(obj, dict):
        raise ParseError("segmentation must be a JSON object", source=source)
    _check_version(obj, None, source)
    try:
        sid = obj["session_id"]
        indices = obj["boundary_indices"]
        file_T = obj.get("T")
        if T is not None and file_T is not None and file_T != T:
            raise ParseError(f"segmentation T={file_T} but dialogue T={T}", source=source)
        bounds = BoundarySet(tuple(indices), T if T is not None else file_T)
    except KeyError as exc:
        raise ParseError(f"missing field {exc}", source=source) from None
    except (ValidationError, TypeError) as exc:
        raise ParseError(str(exc), source=source) from None
    return Segmentation(sid, bounds, str(obj.get("method", "")), str(obj.get("params_fingerprint", "")),
                        obj.get("provenance") or {})
