"""``dialseg`` command line: validate, segment, evaluate, synth, annotate, mock-server.

Every run directory receives ``resolved_config.json`` (effective parameters),
``inputs.json`` (sha256 of every input file) and ``summary.json`` next to its
outputs. Nothing time-dependent is recorded, so reruns on the same inputs are
byte-identical. Exit codes: 0 success, 1 validation or config error, 2 partial
failure without ``--allow-partial``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .coherence import DecodeParams, segment_coherence
from .config import load_config
from .core import Segmentation, fingerprint
from .errors import ConfigError, DialsegError, ValidationError
from .fusion import FusionParams, build_memory, build_move_table, fused_embeddings, fusion_fingerprint
from .ingest import (
    FORMAT_VERSION,
    load_corpus,
    load_manifest,
    parse_segmentation,
    serialize_labels,
    serialize_segmentation,
    validate_corpus,
)
from .llm.client import METHOD_MODES, AuditLog, ChatClient, LlmClientConfig, annotate_llm, run_sessions, segment_llm
from .metrics import EvalConfig, evaluate_corpus
from .report import sessions_csv, to_csv, to_json, to_markdown
from .synth import SynthSpec, generate, write_corpus

log = logging.getLogger("dialseg")

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2
METHODS = ("coherence", "coherence-fused", "llm-generic", "llm-da")


# -- file helpers ----------------------------------------------------------


def write_atomic(path: str | Path, data: bytes | str) -> None:
    """Write via a temp file in the same directory and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rel(path: Path, root: Path) -> str:
    try:
        return path.resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return str(path)


def manifest_inputs(manifest, embeddings: bool) -> dict[str, str]:
    """sha256 of the manifest and every file it references, keyed relative to its directory."""
    root = manifest.root
    files = [manifest.path, manifest.codebook_path]
    for s in manifest.sessions:
        files.append(s.transcript_path)
        if embeddings and s.embedding_path is not None:
            files.append(s.embedding_path)
    files += [lf.path for lf in manifest.label_files]
    return {_rel(p, root): _digest(p) for p in files}


def write_run_files(out: Path, resolved: dict, inputs: dict, summary: dict) -> None:
    write_atomic(out / "resolved_config.json", _json(resolved))
    write_atomic(out / "inputs.json", _json({"format_version": FORMAT_VERSION, "sha256": inputs}))
    write_atomic(out / "summary.json", _json(summary))


# -- parameter resolution ---------------------------------------------------


def _build(cls, section: dict, overrides: dict, where: str):
    """Instantiate ``cls`` from defaults < config section < CLI flags."""
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"[{where}] unknown keys {sorted(unknown)}; expected a subset of {sorted(known)}")
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None and k in known})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def _pick(args, *names) -> dict:
    return {n: getattr(args, n, None) for n in names}


def _run_value(cfg: dict, args, key: str, default=None):
    v = getattr(args, key, None)
    if v is not None:
        return v
    return cfg["run"].get(key, default)


# -- commands --------------------------------------------------------------


def cmd_validate(args, cfg) -> int:
    report = validate_corpus(args.manifest, check_embeddings=not args.no_embeddings)
    payload = report.to_dict()
    for row in report.rows:
        cov = ", ".join(f"{r}={c:.2f}" for r, c in sorted(row.coverage.items()))
        print(f"{row.session_id}\tT={row.T}\tembeddings={'yes' if row.has_embeddings else 'no'}\t{cov}")
    for sid, msg in report.errors:
        print(f"ERROR [{sid}] {msg}", file=sys.stderr)
    print(f"{len(report.rows)} sessions, {len(report.errors)} errors")
    if args.out:
        out = Path(args.out)
        write_atomic(out / "validation.json", _json(payload))
        inputs = {}
        try:
            inputs = manifest_inputs(load_manifest(args.manifest), not args.no_embeddings)
        except (DialsegError, OSError):
            pass
        write_run_files(
            out,
            {"format_version": FORMAT_VERSION, "command": "validate", "manifest": str(args.manifest),
             "check_embeddings": not args.no_embeddings},
            inputs,
            {"format_version": FORMAT_VERSION, "command": "validate", "ok": report.ok,
             "sessions": len(report.rows), "errors": len(report.errors)},
        )
    return EXIT_OK if report.ok else EXIT_INVALID


def _llm_config(args, cfg) -> LlmClientConfig:
    section = dict(cfg["llm"])
    overrides = _pick(args, "endpoint", "model", "max_retries", "timeout", "api_key_env", "temperature", "max_tokens")
    overrides["max_concurrency"] = getattr(args, "jobs", None)
    if getattr(args, "strict", False):
        overrides["strict"] = True
    if getattr(args, "include_speakers", False):
        overrides["include_speakers"] = True
    if not (overrides.get("endpoint") or section.get("endpoint")):
        raise ConfigError("LLM methods need an endpoint (--endpoint or [llm].endpoint)")
    if not (overrides.get("model") or section.get("model")):
        raise ConfigError("LLM methods need a model name (--model or [llm].model)")
    return _build(LlmClientConfig, section, overrides, "llm")


def cmd_segment(args, cfg) -> int:
    method = args.method
    corpus = load_corpus(args.manifest)
    out = Path(args.out)
    jobs = int(_run_value(cfg, args, "jobs", 1))
    seed = int(_run_value(cfg, args, "seed", 0))
    resolved = {"format_version": FORMAT_VERSION, "command": "segment", "method": method,
                "manifest": str(args.manifest), "seed": seed, "jobs": jobs}
    audit = None
    fn = None
    uses_embeddings = method.startswith("coherence")

    # prerequisites are checked before any session is processed
    if uses_embeddings:
        missing = [s.session_id for s in corpus.manifest.sessions if s.embedding_path is None]
        if missing:
            raise ValidationError(f"method {method!r} needs embeddings; missing for sessions {missing}")
        decode = _build(DecodeParams, cfg["decode"],
                        _pick(args, "window_size", "alpha", "pick_num", "avg_seg_len", "min_gap", "smooth_window"),
                        "decode")
        resolved["decode"] = decode.to_dict()
        embeddings = {sid: corpus.embeddings(sid) for sid in corpus.dialogues}
        if method == "coherence":
            def fn(d):
                return segment_coherence(d, embeddings[d.session_id], decode)
        else:
            overrides = _pick(args, "K_ret", "tau", "alpha_fuse", "table_mode")
            overrides["seed"] = seed if "seed" not in cfg["fusion"] else None
            if args.include_self:
                overrides["exclude_self"] = False
            memory_rater = args.memory_rater or cfg["run"].get("memory_rater", "human")
            params = _build(FusionParams, cfg["fusion"], overrides, "fusion")
            if memory_rater not in corpus.raters:
                raise ValidationError(f"memory rater {memory_rater!r} not loaded; available: {sorted(corpus.raters)}")
            bank = build_memory(corpus.raters[memory_rater], embeddings)
            table = build_move_table(corpus.codebook, bank, params.table_mode, params.seed)
            write_atomic(out / "memory_bank.demb", bank.to_bytes())
            write_atomic(out / "move_table.demb", table.to_bytes())
            resolved["fusion"] = params.to_dict()
            resolved["memory_rater"] = memory_rater
            fused_fp = fusion_fingerprint(params, bank, table)

            def fn(d):
                fused = fused_embeddings(embeddings[d.session_id], bank, table, params)
                seg = segment_coherence(d, fused, decode, method=method)
                return dataclasses.replace(
                    seg,
                    params_fingerprint=fingerprint({"method": method, "decode": decode.to_dict(), "fusion": fused_fp}),
                )
    else:
        llm_cfg = _llm_config(args, cfg)
        resolved["llm"] = dataclasses.asdict(llm_cfg)
        client = ChatClient(llm_cfg)
        audit = AuditLog()
        mode = METHOD_MODES[method]

        def fn(d):
            return segment_llm(d, client, mode, corpus.codebook, audit)

    dialogues = list(corpus.dialogues.values())
    if audit is not None:
        batch = run_sessions(dialogues, fn, llm_cfg.max_concurrency)
        client.close()
        results, failures = batch.results, batch.failures
    else:
        results, failures = _map_sessions(dialogues, fn, jobs)

    outputs = {}
    for d in dialogues:
        sid = d.session_id
        target = out / f"{sid}.json"
        if sid in results:
            blob = serialize_segmentation(results[sid])
            write_atomic(target, blob)
            outputs[f"{sid}.json"] = hashlib.sha256(blob).hexdigest()
        else:
            target.unlink(missing_ok=True)
    if audit is not None:
        records = sorted(audit.records, key=lambda r: (r["session_id"], r["attempt"]))
        write_atomic(out / "audit.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))

    failed = {sid: str(exc) for sid, exc in sorted(failures.items())}
    status = "ok" if not failed else "partial"
    summary = {
        "format_version": FORMAT_VERSION,
        "command": "segment",
        "method": method,
        "status": status,
        "sessions_total": len(dialogues),
        "sessions_succeeded": len(results),
        "failed": failed,
        "outputs": outputs,
    }
    write_run_files(out, resolved, manifest_inputs(corpus.manifest, uses_embeddings), summary)
    for sid, msg in failed.items():
        print(f"FAILED [{sid}] {msg}", file=sys.stderr)
    print(f"{method}: {len(results)}/{len(dialogues)} sessions segmented -> {out}")
    if failed and not args.allow_partial:
        return EXIT_PARTIAL
    return EXIT_OK


def _map_sessions(dialogues, fn, jobs: int):
    def one(d):
        try:
            return d.session_id, fn(d), None
        except DialsegError as exc:
            return d.session_id, None, exc

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            rows = list(pool.map(one, dialogues))
    else:
        rows = [one(d) for d in dialogues]
    results = {sid: seg for sid, seg, err in rows if err is None}
    failures = {sid: err for sid, _, err in rows if err is not None}
    return results, failures


def _parse_seg_arg(value: str) -> tuple[str | None, Path]:
    name, sep, path = value.partition("=")
    if sep and name:
        return name, Path(path)
    return None, Path(value)


def cmd_evaluate(args, cfg) -> int:
    corpus = load_corpus(args.manifest)
    section = dict(cfg["metrics"])
    overrides = {
        "human_rater": args.human,
        "ai_rater": args.ai,
        "primary_rater": args.rater,
        "unlabeled": args.unlabeled,
        "ci_level": args.ci_level,
        "bootstrap_iterations": args.iterations,
        "seed": args.seed if args.seed is not None else cfg["run"].get("seed"),
        "jobs": args.jobs if args.jobs is not None else cfg["run"].get("jobs"),
    }
    if args.normalized_adjacent:
        overrides["normalized_adjacent"] = True
    eval_cfg = _build(EvalConfig, section, overrides, "metrics")
    for rater in {eval_cfg.human_rater, eval_cfg.ai_rater, eval_cfg.table_rater}:
        if rater not in corpus.raters:
            raise ValidationError(f"rater {rater!r} not loaded; available: {sorted(corpus.raters)}")

    reports, inputs, missing_any = [], manifest_inputs(corpus.manifest, False), {}
    for spec in args.seg:
        name, seg_dir = _parse_seg_arg(spec)
        if not seg_dir.is_dir():
            raise ValidationError(f"segmentation directory not found: {seg_dir}")
        segs, missing = [], []
        for sid, dialogue in corpus.dialogues.items():
            path = seg_dir / f"{sid}.json"
            if not path.exists():
                missing.append(sid)
                continue
            seg = parse_segmentation(path.read_bytes(), T=dialogue.T, source=str(path))
            if seg.session_id != sid:
                raise ValidationError(f"{path}: file is for session {seg.session_id!r}")
            segs.append(seg)
            inputs[f"{name or seg_dir.name}/{sid}.json"] = _digest(path)
        if missing:
            missing_any[name or seg_dir.name] = missing
            print(f"{name or seg_dir}: no segmentation for {len(missing)} session(s): {missing}", file=sys.stderr)
            if not args.allow_partial:
                continue
        if not segs:
            raise ValidationError(f"{seg_dir}: no segmentation files for this corpus")
        label = name or segs[0].method or seg_dir.name
        reports.append(evaluate_corpus(corpus.dialogues, segs, corpus.raters, corpus.codebook, eval_cfg, label))

    if missing_any and not args.allow_partial:
        return EXIT_PARTIAL

    out = Path(args.out)
    markdown = to_markdown(reports, args.title)
    write_atomic(out / "report.md", markdown)
    write_atomic(out / "report.csv", to_csv(reports))
    write_atomic(out / "sessions.csv", sessions_csv(reports))
    write_atomic(out / "report.json", to_json(reports))
    resolved = {"format_version": FORMAT_VERSION, "command": "evaluate", "manifest": str(args.manifest),
                "segmentations": list(args.seg), "metrics": dataclasses.asdict(eval_cfg)}
    summary = {"format_version": FORMAT_VERSION, "command": "evaluate",
               "status": "partial" if missing_any else "ok",
               "methods": [r.method for r in reports], "missing": missing_any,
               "outputs": ["report.md", "report.csv", "sessions.csv", "report.json"]}
    write_run_files(out, resolved, inputs, summary)
    print(markdown, end="")
    return EXIT_OK


def _load_spec_file(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        sec = load_config(path)["synth"]
        return dict(sec)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON spec: {exc.msg}") from None


def cmd_synth(args, cfg) -> int:
    data = dict(cfg["synth"])
    if args.spec:
        data.update(_load_spec_file(Path(args.spec)))
    for key in ("seed", "sessions"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    spec = SynthSpec.from_dict(data)
    corpus = generate(spec)
    out = Path(args.out)
    manifest_path = write_corpus(corpus, out, binary_embeddings=not args.json_embeddings)
    inputs = {"synth_spec.json": _digest(out / "synth_spec.json")}
    summary = {"format_version": FORMAT_VERSION, "command": "synth", "sessions": len(corpus.dialogues),
               "utterances": sum(d.T for d in corpus.dialogues.values()), "manifest": manifest_path.name}
    write_run_files(out, {"format_version": FORMAT_VERSION, "command": "synth", "synth": spec.to_dict(),
                          "binary_embeddings": not args.json_embeddings}, inputs, summary)
    print(f"wrote {len(corpus.dialogues)} sessions to {out}")
    return EXIT_OK


def cmd_annotate(args, cfg) -> int:
    corpus = load_corpus(args.manifest)
    llm_cfg = _llm_config(args, cfg)
    template = Path(args.template).read_text(encoding="utf-8") if args.template else None
    audit = AuditLog()
    with ChatClient(llm_cfg) as client:
        batch = run_sessions(
            corpus.dialogues.values(),
            lambda d: annotate_llm(d, client, corpus.codebook, template, args.rater_id, audit),
            llm_cfg.max_concurrency,
        )
    out = Path(args.out)
    blob = serialize_labels(args.rater_id, batch.results, corpus.dialogues)
    write_atomic(out / f"{args.rater_id}.jsonl", blob)
    records = sorted(audit.records, key=lambda r: (r["session_id"], r["attempt"]))
    write_atomic(out / "audit.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    failed = {sid: str(exc) for sid, exc in sorted(batch.failures.items())}
    write_run_files(
        out,
        {"format_version": FORMAT_VERSION, "command": "annotate", "manifest": str(args.manifest),
         "rater_id": args.rater_id, "llm": dataclasses.asdict(llm_cfg), "template": args.template},
        manifest_inputs(corpus.manifest, False),
        {"format_version": FORMAT_VERSION, "command": "annotate", "status": "partial" if failed else "ok",
         "sessions_total": len(corpus.dialogues), "sessions_succeeded": len(batch.results), "failed": failed},
    )
    for sid, msg in failed.items():
        print(f"FAILED [{sid}] {msg}", file=sys.stderr)
    return EXIT_PARTIAL if failed and not args.allow_partial else EXIT_OK


def cmd_mock_server(args, cfg) -> int:
    from .llm.mock import MockChatServer

    server = MockChatServer(args.canned, args.host, args.port)
    print(server.url, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def _llm_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("llm (credentials come from the environment only)")
    g.add_argument("--endpoint", help="chat-completions URL")
    g.add_argument("--model")
    g.add_argument("--max-retries", dest="max_retries", type=int)
    g.add_argument("--timeout", type=float)
    g.add_argument("--temperature", type=float)
    g.add_argument("--max-tokens", dest="max_tokens", type=int)
    g.add_argument("--api-key-env", dest="api_key_env", help="name of the env var holding the bearer token")
    g.add_argument("--strict", action="store_true", help="reject responses that are not pure JSON")
    g.add_argument("--include-speakers", dest="include_speakers", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dialseg", description="Dialogue segmentation and DA-distribution evaluation.")
    p.add_argument("--version", action="version", version=f"dialseg {__version__}")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a corpus manifest and every file it references")
    v.add_argument("manifest")
    v.add_argument("--out", help="also write validation.json and run files here")
    v.add_argument("--no-embeddings", dest="no_embeddings", action="store_true")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("segment", help="segment every session of a corpus")
    s.add_argument("manifest")
    s.add_argument("--method", choices=METHODS, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--allow-partial", dest="allow_partial", action="store_true")
    d = s.add_argument_group("decode")
    d.add_argument("--window-size", dest="window_size", type=int)
    d.add_argument("--alpha", type=float, help="threshold multiplier on the depth SD")
    d.add_argument("--pick-num", dest="pick_num", type=int)
    d.add_argument("--avg-seg-len", dest="avg_seg_len", type=int)
    d.add_argument("--min-gap", dest="min_gap", type=int)
    d.add_argument("--smooth-window", dest="smooth_window", type=int)
    f = s.add_argument_group("fusion")
    f.add_argument("--k-ret", dest="K_ret", type=int)
    f.add_argument("--tau", type=float)
    f.add_argument("--alpha-fuse", dest="alpha_fuse", type=float)
    f.add_argument("--table-mode", dest="table_mode", choices=("centroid", "random"))
    f.add_argument("--memory-rater", dest="memory_rater")
    f.add_argument("--include-self", dest="include_self", action="store_true",
                   help="let an utterance retrieve its own memory entry")
    _llm_flags(s)
    s.set_defaults(func=cmd_segment)

    e = sub.add_parser("evaluate", help="score segmentations and write Markdown, CSV and JSON reports")
    e.add_argument("manifest")
    e.add_argument("--seg", action="append", required=True, metavar="[NAME=]DIR",
                   help="segmentation directory; repeat to compare methods")
    e.add_argument("--out", required=True)
    e.add_argument("--human")
    e.add_argument("--ai")
    e.add_argument("--rater", help="rater shown in the per-rater table columns (default: the human rater)")
    e.add_argument("--unlabeled", choices=("none", "exclude"))
    e.add_argument("--normalized-adjacent", dest="normalized_adjacent", action="store_true")
    e.add_argument("--ci-level", dest="ci_level", type=float)
    e.add_argument("--iterations", type=int, help="bootstrap resamples")
    e.add_argument("--seed", type=int)
    e.add_argument("--jobs", type=int)
    e.add_argument("--title")
    e.add_argument("--allow-partial", dest="allow_partial", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    y = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    y.add_argument("--spec", help="JSON spec file, or a TOML file with a [synth] table")
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int)
    y.add_argument("--sessions", type=int)
    y.add_argument("--json-embeddings", dest="json_embeddings", action="store_true")
    y.set_defaults(func=cmd_synth)

    a = sub.add_parser("annotate", help="label utterances with an LLM rater")
    a.add_argument("manifest")
    a.add_argument("--out", required=True)
    a.add_argument("--rater-id", dest="rater_id", default="ai")
    a.add_argument("--template", help="annotation prompt template file")
    a.add_argument("--jobs", type=int)
    a.add_argument("--allow-partial", dest="allow_partial", action="store_true")
    _llm_flags(a)
    a.set_defaults(func=cmd_annotate)

    m = sub.add_parser("mock-server", help="serve canned chat completions for offline runs")
    m.add_argument("canned")
    m.add_argument("--host", default="127.0.0.1")
    m.add_argument("--port", type=int, default=8765)
    m.set_defaults(func=cmd_mock_server)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except DialsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
