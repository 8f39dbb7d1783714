"""Chat-completion client and the retrying segment/annotate drivers."""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import httpx

from ..core import Codebook, Dialogue, RaterLabels, Segmentation, fingerprint, sha256_text
from ..errors import AnnotationParseError, BoundaryParseError, LlmRequestError, SegmentationFailed, ValidationError
from .parsing import parse_annotation_response, parse_boundary_response
from .prompts import PromptSpec, build_annotation_prompt, build_segmentation_prompt

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "DIALSEG_API_KEY"
METHOD_MODES = {"llm-generic": "generic", "llm-da": "da_aware"}


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str
    model: str
    timeout: float = 120.0
    max_retries: int = 2
    max_concurrency: int = 4
    temperature: float = 0.0
    max_tokens: int = 4096
    api_key_env: str = DEFAULT_API_KEY_ENV
    strict: bool = False
    include_speakers: bool = False

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValidationError("max_concurrency must be >= 1")

    def fingerprint_fields(self) -> dict:
        # endpoint and key env are deployment details, not decoding settings
        d = asdict(self)
        d.pop("endpoint")
        d.pop("api_key_env")
        d.pop("max_concurrency")
        d.pop("timeout")
        return d


class AuditLog:
    """Thread-safe record of every LLM interaction; optionally mirrored to JSONL."""

    def __init__(self, path: str | Path | None = None):
        self.records: list[dict] = []
        self._lock = threading.Lock()
        self._path = Path(path) if path else None

    def add(self, **record) -> None:
        with self._lock:
            self.records.append(record)
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")


class ChatClient:
    """Minimal chat-completion client.

    Sends ``{model, messages, temperature, max_tokens}`` and reads the first
    choice's message content. The bearer token comes from the environment
    variable named by ``config.api_key_env``; it is never taken from config.
    """

    def __init__(self, config: LlmClientConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(config.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._http = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)
        self.request_count = 0
        self._lock = threading.Lock()

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def complete(self, messages: list[dict]) -> str:
        body = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        with self._lock:
            self.request_count += 1
        try:
            resp = self._http.post(self.config.endpoint, json=body)
        except httpx.HTTPError as exc:
            raise LlmRequestError(f"request failed: {exc}") from exc
        if resp.status_code != 200:
            raise LlmRequestError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LlmRequestError(f"malformed completion payload: {exc}") from exc
        if not isinstance(content, str):
            raise LlmRequestError("completion content is not a string")
        return content


def _attempt_loop(client: ChatClient, prompt: PromptSpec, parse: Callable[[str], object], session_id: str, audit):
    """Send the identical prompt until ``parse`` succeeds or retries run out."""
    attempts = 0
    last_error = None
    prompt_hash = prompt.digest
    for _ in range(client.config.max_retries + 1):
        attempts += 1
        try:
            raw = client.complete(prompt.messages())
        except LlmRequestError as exc:
            last_error = exc
            if audit is not None:
                audit.add(session_id=session_id, attempt=attempts, prompt_sha256=prompt_hash,
                          response_sha256=None, outcome="request_error", error=str(exc))
            continue
        try:
            value = parse(raw)
        except (BoundaryParseError, AnnotationParseError) as exc:
            last_error = exc
            if audit is not None:
                audit.add(session_id=session_id, attempt=attempts, prompt_sha256=prompt_hash,
                          response_sha256=sha256_text(raw), outcome="parse_error", error=str(exc))
            log.info("session %s attempt %d: unparseable response (%s)", session_id, attempts, exc)
            continue
        if audit is not None:
            audit.add(session_id=session_id, attempt=attempts, prompt_sha256=prompt_hash,
                      response_sha256=sha256_text(raw), outcome="ok")
        return value, attempts, sha256_text(raw)
    raise SegmentationFailed(session_id, attempts, last_error)


def segment_llm(
    dialogue: Dialogue,
    client: ChatClient,
    mode: str = "generic",
    codebook: Codebook | None = None,
    audit: AuditLog | None = None,
) -> Segmentation:
    cfg = client.config
    prompt = build_segmentation_prompt(dialogue, mode, codebook if mode != "generic" else None, cfg.include_speakers)
    method = "llm-generic" if mode == "generic" else "llm-da"
    bounds, attempts, response_hash = _attempt_loop(
        client, prompt, lambda raw: parse_boundary_response(raw, dialogue.T, cfg.strict), dialogue.session_id, audit
    )
    return Segmentation(
        session_id=dialogue.session_id,
        boundaries=bounds,
        method=method,
        params_fingerprint=fingerprint(
            {"method": method, "llm": cfg.fingerprint_fields(), "template": prompt.template_version,
             "codebook": codebook.move_names if codebook and mode != "generic" else None}
        ),
        meta={"model": cfg.model, "attempts": attempts, "response_sha256": response_hash,
              "prompt_sha256": prompt.digest},
    )


def annotate_llm(
    dialogue: Dialogue,
    client: ChatClient,
    codebook: Codebook,
    template: str | None = None,
    rater_id: str = "ai",
    audit: AuditLog | None = None,
) -> RaterLabels:
    prompt = build_annotation_prompt(dialogue, codebook, template)
    labels, _, _ = _attempt_loop(
        client, prompt, lambda raw: parse_annotation_response(raw, dialogue, codebook, rater_id),
        dialogue.session_id, audit,
    )
    return labels


@dataclass
class BatchResult:
    results: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


def run_sessions(dialogues: Iterable[Dialogue], fn: Callable[[Dialogue], object], concurrency: int) -> BatchResult:
    """Apply ``fn`` per dialogue with bounded concurrency; failures are collected."""
    dialogues = list(dialogues)
    out = BatchResult()

    def one(d: Dialogue):
        try:
            return d.session_id, fn(d), None
        except SegmentationFailed as exc:
            return d.session_id, None, exc

    with ThreadPoolExecutor(max(1, concurrency)) as pool:
        for sid, value, err in pool.map(one, dialogues):
            if err is None:
                out.results[sid] = value
            else:
                out.failures[sid] = err
    return out
