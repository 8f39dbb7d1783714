"""Prompt rendering from the versioned template assets in ``templates/``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from ..core import Codebook, Dialogue, sha256_text
from ..errors import ValidationError

TEMPLATE_VERSION = "v1"
MODES = ("generic", "da_aware", "annotate")
DEFINITIONS_SLOT = "[ADD Move Definitions]"


@lru_cache(maxsize=None)
def load_template(name: str, version: str = TEMPLATE_VERSION) -> str:
    path = resources.files("dialseg.llm") / "templates" / f"{name}.{version}.txt"
    return path.read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptSpec:
    mode: str
    codebook: Codebook | None
    system: str
    user: str
    dialogue_digest: str
    template_version: str = TEMPLATE_VERSION

    @property
    def rendered_text(self) -> str:
        return self.system + "\n\n" + self.user

    @property
    def digest(self) -> str:
        return sha256_text(self.rendered_text)

    def messages(self) -> list[dict]:
        return [{"role": "system", "content": self.system}, {"role": "user", "content": self.user}]


def turn_listing(dialogue: Dialogue, include_speakers: bool = False) -> str:
    """Numbered 0-indexed turns, text only unless speakers are requested."""
    lines = []
    for u in dialogue.utterances:
        text = " ".join(u.text.splitlines())
        if include_speakers:
            lines.append(f"{u.index} [{u.speaker}]: {text}")
        else:
            lines.append(f"{u.index}: {text}")
    return "\n".join(lines)


def move_definitions(codebook: Codebook) -> str:
    return "\n".join(f"- {m.name}: {m.definition}".rstrip() for m in codebook.moves)


def _check_mode(mode: str, codebook: Codebook | None) -> None:
    if mode not in MODES:
        raise ValidationError(f"unknown prompt mode {mode!r}; expected one of {MODES}")
    if mode == "generic" and codebook is not None:
        raise ValidationError("generic mode does not take a codebook")
    if mode != "generic" and codebook is None:
        raise ValidationError(f"{mode} mode requires a codebook")


def build_segmentation_prompt(
    dialogue: Dialogue, mode: str = "generic", codebook: Codebook | None = None, include_speakers: bool = False
) -> PromptSpec:
    if mode == "annotate":
        raise ValidationError("use build_annotation_prompt for annotate mode")
    _check_mode(mode, codebook)
    if mode == "generic":
        system = load_template("segment_generic")
    else:
        system = load_template("segment_da_aware").replace(DEFINITIONS_SLOT, move_definitions(codebook))
    listing = turn_listing(dialogue, include_speakers)
    user = f"Dialogue ({dialogue.T} turns, numbered from 0):\n{listing}"
    return PromptSpec(mode, codebook, system.rstrip("\n"), user, sha256_text(listing))


def build_annotation_prompt(dialogue: Dialogue, codebook: Codebook, template: str | None = None) -> PromptSpec:
    """Annotation prompt; ``template`` must declare the ``records`` envelope."""
    _check_mode("annotate", codebook)
    template = template if template is not None else load_template("annotate")
    if "records" not in template or "id" not in template or "move" not in template:
        raise ValidationError("annotation template must declare a 'records' envelope with id and move fields")
    examples = []
    for m in codebook.moves:
        if m.examples:
            quoted = ", ".join(f'"{e}"' for e in m.examples)
            examples.append(f"- {m.name}: [{quoted}]")
    system = (
        template.replace("[CODEBOOK NAME]", codebook.name)
        .replace("[ALLOWED MOVES]", "\n".join(f"- {name}" for name in codebook.move_names))
        .replace("[MOVE DEFINITIONS]", move_definitions(codebook))
        .replace("[MOVE EXAMPLES]", "\n".join(examples) or "(none)")
    ).rstrip("\n")
    rows = "\n".join(
        json.dumps({"id": u.id, "speaker": u.speaker, "text": u.text}, ensure_ascii=False) for u in dialogue.utterances
    )
    user = f"Dialogue utterances (one JSON object per line):\n{rows}"
    return PromptSpec("annotate", codebook, system, user, sha256_text(rows))
