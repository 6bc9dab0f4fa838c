"""The prompt catalog: nine extraction prompts plus the system instruction.

Prompt bodies live in ``_prompt_texts`` and are treated as immutable; this
module adds placeholder-aware rendering, the stage ordering with fan-out
wiring, and the mapping from each prompt to its expected output schema.

Placeholders are spelled ``{NAME}`` inside the bodies.  The P3 structure
block spells the agent-set placeholder ``{AGENT_SET}`` while its prose uses
``{AGENT_SET_NAME}``; both are bound by the single AGENT_SET_NAME value.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from ._prompt_texts import PROMPT_BODIES, SYSTEM_INSTRUCTION

PROMPT_IDS: tuple[str, ...] = ("P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8", "P9")

INSTRUCTION_OPENING = "You are an Agent-based modeling specialist"

_THEMES = {
    "P1": "ModelAim",
    "P2": "Agents",
    "P3": "Agents",
    "P4": "Agents",
    "P5": "Environment",
    "P6": "Environment",
    "P7": "Environment",
    "P8": "ModelExecution",
    "P9": "ModelExecution",
}

_PLACEHOLDERS: dict[str, tuple[str, ...]] = {
    "P1": (),
    "P2": (),
    "P3": ("AGENT_SET_NAME",),
    "P4": ("AGENT_SET_NAME", "VAR"),
    "P5": (),
    "P6": (),
    "P7": ("VAR",),
    "P8": (),
    "P9": ("VAR",),
}

_SCHEMA_REFS = {
    "P1": "model_purpose",
    "P2": "agent_sets",
    "P3": "agent_variables",
    "P4": "agent_dynamics",
    "P5": "space_header",
    "P6": "space_variables",
    "P7": "space_dynamics",
    "P8": "model_variables",
    "P9": "model_dynamics",
}

_FAN_OUT_SOURCES = {
    "P3": "P2.agent_sets",
    "P4": "P3.variables",
    "P7": "P6.variables",
    "P9": "P8.variables",
}

# Alternate spellings that bind to the same placeholder value.
_TOKEN_CANON = {"AGENT_SET": "AGENT_SET_NAME"}

_TOKEN_RE = re.compile(r"\{([A-Z][A-Z_0-9]*)\}")


class PromptCatalogError(Exception):
    """Base class for catalog failures."""


class UnknownTemplateError(PromptCatalogError):
    pass


class MissingBindingError(PromptCatalogError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing binding: {name}")


class ExtraBindingError(PromptCatalogError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"binding not accepted by this template: {name}")


class InvalidBindingValueError(PromptCatalogError):
    pass


class PromptOverrideError(PromptCatalogError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    theme: str
    body: str
    placeholders: frozenset[str]
    schema_ref: str

    def tokens(self) -> list[tuple[str, str]]:
        """Distinct ``{NAME}`` tokens in the body with their canonical placeholder."""
        seen = []
        for match in _TOKEN_RE.finditer(self.body):
            token = match.group(1)
            canon = _TOKEN_CANON.get(token, token)
            if (token, canon) not in seen:
                seen.append((token, canon))
        return seen


@dataclass(frozen=True)
class SystemInstruction:
    text: str


@dataclass(frozen=True)
class StageDescriptor:
    prompt_id: str
    fan_out_source: str | None


def _check_template(template: PromptTemplate) -> None:
    found = {canon for _, canon in template.tokens()}
    if found != set(template.placeholders):
        raise PromptOverrideError(
            f"{template.id}: body placeholders {sorted(found)} do not match "
            f"the declared set {sorted(template.placeholders)}"
        )


class PromptCatalog:
    """Immutable collection of the nine templates and the system instruction."""

    def __init__(self, templates: dict[str, PromptTemplate], instruction: SystemInstruction):
        if set(templates) != set(PROMPT_IDS):
            raise PromptCatalogError(f"catalog must define exactly {PROMPT_IDS}")
        for template in templates.values():
            _check_template(template)
        if not instruction.text.startswith(INSTRUCTION_OPENING):
            raise PromptOverrideError(
                f"system instruction must begin {INSTRUCTION_OPENING!r}"
            )
        self._templates = dict(templates)
        self._instruction = instruction

    @classmethod
    def default(cls) -> "PromptCatalog":
        templates = {
            pid: PromptTemplate(
                id=pid,
                theme=_THEMES[pid],
                body=PROMPT_BODIES[pid],
                placeholders=frozenset(_PLACEHOLDERS[pid]),
                schema_ref=_SCHEMA_REFS[pid],
            )
            for pid in PROMPT_IDS
        }
        return cls(templates, SystemInstruction(SYSTEM_INSTRUCTION))

    @classmethod
    def with_overrides(cls, override_dir: str | Path) -> "PromptCatalog":
        """Default catalog with bodies replaced by files from ``override_dir``.

        Recognized files: ``P1.txt`` .. ``P9.txt`` and ``instruction.txt``.
        Missing files fall back to the built-in text; present files must carry
        the same placeholder set as the template they replace.
        """
        directory = Path(override_dir)
        if not directory.is_dir():
            raise PromptOverrideError(f"prompt override directory not found: {directory}")
        base = cls.default()
        templates = dict(base._templates)
        for pid in PROMPT_IDS:
            path = directory / f"{pid}.txt"
            if path.is_file():
                body = _read_override(path)
                templates[pid] = PromptTemplate(
                    id=pid,
                    theme=_THEMES[pid],
                    body=body,
                    placeholders=frozenset(_PLACEHOLDERS[pid]),
                    schema_ref=_SCHEMA_REFS[pid],
                )
        instruction = base._instruction
        instruction_path = directory / "instruction.txt"
        if instruction_path.is_file():
            instruction = SystemInstruction(_read_override(instruction_path))
        return cls(templates, instruction)

    @property
    def instruction(self) -> SystemInstruction:
        return self._instruction

    def get(self, prompt_id: str) -> PromptTemplate:
        try:
            return self._templates[prompt_id]
        except KeyError:
            raise UnknownTemplateError(f"unknown prompt id: {prompt_id}") from None

    def render(self, prompt_id: str, bindings: dict[str, str]) -> str:
        """Substitute placeholder bindings into the template body.

        Binding values must be non-empty and free of braces so the rendered
        text cannot introduce new placeholder tokens.
        """
        template = self.get(prompt_id)
        for name in template.placeholders:
            if name not in bindings:
                raise MissingBindingError(name)
        for name in bindings:
            if name not in template.placeholders:
                raise ExtraBindingError(name)
        for name, value in bindings.items():
            if not isinstance(value, str) or not value:
                raise InvalidBindingValueError(f"{name}: binding value must be a non-empty string")
            if "{" in value or "}" in value:
                raise InvalidBindingValueError(f"{name}: binding value must not contain braces")
        rendered = template.body
        for token, canon in template.tokens():
            rendered = rendered.replace("{" + token + "}", bindings[canon])
        return rendered

    def expected_schema(self, prompt_id: str) -> str:
        return self.get(prompt_id).schema_ref

    def list_stages(self) -> list[StageDescriptor]:
        """The nine stages in execution order with their fan-out wiring."""
        return [
            StageDescriptor(prompt_id=pid, fan_out_source=_FAN_OUT_SOURCES.get(pid))
            for pid in PROMPT_IDS
        ]


def _read_override(path: Path) -> str:
    text = path.read_text(encoding="utf-8-sig")
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    # editors append a final newline; the canonical bodies carry none
    if text.endswith("\n"):
        text = text[:-1]
    return text


def schema_ref_for(prompt_id: str) -> str:
    """Stage to schema-identifier mapping without building a catalog."""
    try:
        return _SCHEMA_REFS[prompt_id]
    except KeyError:
        raise UnknownTemplateError(f"unknown prompt id: {prompt_id}") from None
