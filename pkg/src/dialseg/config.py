"""TOML run configuration with ``${VAR}`` environment interpolation.

Credentials are never read from config: any key that looks like a secret is
rejected, and the LLM token is looked up from the environment variable named
by ``llm.api_key_env``.
"""

from __future__ import annotations

import os
import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SECTIONS = ("run", "decode", "fusion", "llm", "metrics", "synth")
_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
_SECRET_KEY = re.compile(r"(api_key|apikey|token|secret|password)$", re.IGNORECASE)


def interpolate(value, env=None):
    env = os.environ if env is None else env
    if isinstance(value, str):
        def sub(m):
            if m.group(1) not in env:
                raise ConfigError(f"environment variable {m.group(1)!r} referenced in config is not set")
            return env[m.group(1)]

        return _VAR.sub(sub, value)
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    return value


def _reject_secrets(table: dict, path: str = "") -> None:
    for key, value in table.items():
        where = f"{path}.{key}" if path else key
        if _SECRET_KEY.search(key):
            raise ConfigError(f"{where}: credentials must come from the environment, not the config file")
        if isinstance(value, dict):
            _reject_secrets(value, where)


def load_config(path: str | Path | None, env=None) -> dict:
    if path is None:
        return {s: {} for s in SECTIONS}
    try:
        raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}; expected {list(SECTIONS)}")
    _reject_secrets(raw)
    cfg = interpolate(raw, env)
    for s in SECTIONS:
        cfg.setdefault(s, {})
    return cfg
