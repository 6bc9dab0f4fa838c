"""Tolerant extraction of a JSON object from raw model output.

The prompts demand "strictly limited to the JSON object", but real answers
come wrapped in prose, markdown fences, single quotes (the structure blocks
shown to the model are single-quoted themselves), or with trailing commas.
Repairs are applied in a fixed order and each applied repair is tagged in
the RecoveryReport; the final parse is always the strict ``json`` grammar.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any

JsonValue = Any

REPAIR_STRIPPED_PROSE = "stripped_prose"
REPAIR_STRIPPED_CODE_FENCE = "stripped_code_fence"
REPAIR_SINGLE_TO_DOUBLE_QUOTES = "single_to_double_quotes"
REPAIR_REMOVED_TRAILING_COMMA = "removed_trailing_comma"
REPAIR_KEY_ALIAS = "key_alias"

# Upper-case sentinels from the prompt structure blocks.  A model that merely
# echoes one of these back has reported no information.
PLACEHOLDER_SENTINELS = frozenset(
    {
        "Full_DESCRIPTION",
        "FULL_DESCRIPTION",
        "SHORT_DESCRIPTION",
        "SHORT_DESCRIPTION_AGENT_ROLE",
        "RESEARCH_QUESTION_1",
        "RESEARCH_QUESTION_2",
        "AGENT_SET_1_NAME",
        "VAR1_NAME",
        "VAR2_NAME",
        "VAR1",
        "VAR2",
        "DATA_TYPE",
        "INITIAL_VALUE",
        "VALUE_BOUNDARIES",
        "EQUATION",
        "ORDER_NUMBER",
        "EXCUTION_ORDER",
        "EXECUTION_ORDER",
        "FREQUENCY",
        "TYPE",
        "...",
        "....",
    }
)

# The subset that stands in key position in the structure blocks (names of
# agent sets and variables).  Only these are dropped when echoed as keys; a
# value sentinel misused as a key stays visible to the unknown-key warning.
PLACEHOLDER_KEY_SENTINELS = frozenset(
    {"AGENT_SET_1_NAME", "VAR1_NAME", "VAR2_NAME", "VAR1", "VAR2", "...", "...."}
)


class RecoveryError(Exception):
    """Base class; carries the raw text for the run log."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class NoJsonFoundError(RecoveryError):
    pass


class UnrecoverableJsonError(RecoveryError):
    pass


class DuplicateAfterNormalizationError(Exception):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"conflicting values for key {key!r} after alias normalization")


@dataclass
class RecoveryReport:
    repairs_applied: list[str] = field(default_factory=list)
    original_span: tuple[int, int] = (0, 0)


_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n(.*?)(?:```|\Z)", re.DOTALL)


def _first_fenced_object(raw: str) -> tuple[str, int, tuple[int, int]] | None:
    """First fenced block containing a brace: (content, content offset, fence span)."""
    for match in _FENCE_RE.finditer(raw):
        if "{" in match.group(1):
            return match.group(1), match.start(1), (match.start(), match.end())
    return None


def _balanced_region(text: str) -> tuple[int, int] | None:
    """Span of the first balanced ``{...}`` region, skipping quoted strings.

    Both quote styles are treated as string delimiters because the region may
    still be single-quoted at this point.
    """
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    i = start
    n = len(text)
    while i < n:
        c = text[i]
        if c in "\"'":
            quote = c
            i += 1
            while i < n:
                if text[i] == "\\":
                    i += 2
                    continue
                if text[i] == quote:
                    break
                i += 1
        elif c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return start, i + 1
        i += 1
    return None


def _requote(text: str) -> str:
    """Rewrite single-quoted strings as double-quoted ones.

    Content of double-quoted strings is copied verbatim, so apostrophes
    inside them survive untouched.  Inside single-quoted strings, ``\\'``
    unescapes to an apostrophe and bare double quotes gain an escape.
    """
    out: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == '"':
            out.append(c)
            i += 1
            while i < n:
                ch = text[i]
                out.append(ch)
                if ch == "\\" and i + 1 < n:
                    out.append(text[i + 1])
                    i += 2
                    continue
                i += 1
                if ch == '"':
                    break
        elif c == "'":
            i += 1
            body: list[str] = []
            while i < n:
                ch = text[i]
                if ch == "\\" and i + 1 < n:
                    nxt = text[i + 1]
                    if nxt == "'":
                        body.append("'")
                    else:
                        body.append("\\")
                        body.append(nxt)
                    i += 2
                    continue
                if ch == "'":
                    i += 1
                    break
                if ch == '"':
                    body.append('\\"')
                else:
                    body.append(ch)
                i += 1
            out.append('"')
            out.extend(body)
            out.append('"')
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _strip_trailing_commas(text: str) -> str:
    """Drop commas followed only by whitespace and a closing bracket."""
    out: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == '"':
            out.append(c)
            i += 1
            while i < n:
                ch = text[i]
                out.append(ch)
                if ch == "\\" and i + 1 < n:
                    out.append(text[i + 1])
                    i += 2
                    continue
                i += 1
                if ch == '"':
                    break
        elif c == ",":
            j = i + 1
            while j < n and text[j] in " \t\r\n":
                j += 1
            if j < n and text[j] in "}]":
                i += 1
                continue
            out.append(c)
            i += 1
        else:
            out.append(c)
            i += 1
    return "".join(out)


def extract_json(raw: str) -> tuple[JsonValue, RecoveryReport]:
    """Recover the first top-level JSON object from raw model output.

    Repairs are attempted in order: code-fence stripping, prose stripping
    outside the outermost balanced braces, single-to-double quote rewriting,
    trailing-comma removal.  Raises NoJsonFoundError when no balanced brace
    region exists and UnrecoverableJsonError when the region stays unparseable
    after every repair.
    """
    if not raw:
        raise ValueError("raw text must be non-empty")

    # Fast path: the answer already is one strict JSON object.
    try:
        tree = json.loads(raw)
    except json.JSONDecodeError:
        tree = None
    if isinstance(tree, dict):
        span = (raw.index("{"), raw.rindex("}") + 1)
        return tree, RecoveryReport(repairs_applied=[], original_span=span)

    repairs: list[str] = []
    work = raw
    offset = 0
    prose_outside_fence = False
    fenced = _first_fenced_object(raw)
    if fenced is not None:
        work, offset, fence_span = fenced
        repairs.append(REPAIR_STRIPPED_CODE_FENCE)
        prose_outside_fence = bool(
            raw[: fence_span[0]].strip() or raw[fence_span[1] :].strip()
        )

    region = _balanced_region(work)
    if region is None:
        raise NoJsonFoundError("no balanced JSON object found in output", raw)
    start, end = region
    candidate = work[start:end]
    if prose_outside_fence or work[:start].strip() or work[end:].strip():
        repairs.append(REPAIR_STRIPPED_PROSE)
    span = (offset + start, offset + end)

    def _finish(text: str, extra: list[str]) -> tuple[JsonValue, RecoveryReport] | None:
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            return None
        if not isinstance(value, dict):
            return None
        return value, RecoveryReport(repairs_applied=repairs + extra, original_span=span)

    result = _finish(candidate, [])
    if result is not None:
        return result

    requoted = _requote(candidate)
    quote_tags = [REPAIR_SINGLE_TO_DOUBLE_QUOTES] if requoted != candidate else []
    if quote_tags:
        result = _finish(requoted, quote_tags)
        if result is not None:
            return result

    decommaed = _strip_trailing_commas(requoted)
    if decommaed != requoted:
        result = _finish(decommaed, quote_tags + [REPAIR_REMOVED_TRAILING_COMMA])
        if result is not None:
            return result

    raise UnrecoverableJsonError("JSON object found but unparseable after repairs", raw)


# --- key normalization -----------------------------------------------------

_ORDER_ALIASES = {"order_number", "excution_order", "execution_order"}

# canonical wrapper key per stage, matched case/punctuation-insensitively
_THEME_CANON: dict[str, tuple[str, str]] = {
    "P1": ("model_purpose", "Model_Purpose"),
    "P5": ("space", "SPACE"),
    "P6": ("space", "SPACE"),
    "P7": ("space", "SPACE"),
    "P8": ("model_level", "Model-Level"),
    "P9": ("model_level", "Model-Level"),
}

_DYNAMICS_STAGES = {"P4", "P7", "P9"}


def _theme_fold(key: str) -> str:
    return key.strip().lower().replace("-", "_").replace(" ", "_")


def normalize_keys(value: JsonValue, stage: str) -> JsonValue:
    """Rewrite stage-specific key aliases to their canonical spelling.

    Execution-order aliases (``order_number``, ``excution_order``) become
    ``execution_order`` in dynamics stages; wrapper-key casing variants
    (``Space``/``SPACE``, ``Model-Level``, ``Model_Purpose``) are folded to
    one canonical spelling per stage.  Raises
    DuplicateAfterNormalizationError when two aliases of one canonical key
    carry conflicting values; equal values collapse silently.
    """
    if not isinstance(value, dict):
        raise ValueError("normalize_keys expects a JSON object")
    theme = _THEME_CANON.get(stage)
    return _normalize_node(value, stage, theme, depth=0)


def _normalize_node(node: JsonValue, stage: str, theme, depth: int) -> JsonValue:
    if isinstance(node, dict):
        out: dict[str, JsonValue] = {}
        for key, val in node.items():
            new_key = key
            if depth == 0 and theme is not None and _theme_fold(key) == theme[0]:
                new_key = theme[1]
            elif (
                stage in _DYNAMICS_STAGES
                and key.strip().lower() in _ORDER_ALIASES
                and not isinstance(val, (dict, list))
            ):
                new_key = "execution_order"
            new_val = _normalize_node(val, stage, theme, depth + 1)
            if new_key in out:
                if out[new_key] != new_val:
                    raise DuplicateAfterNormalizationError(new_key)
                continue
            out[new_key] = new_val
        return out
    if isinstance(node, list):
        return [_normalize_node(item, stage, theme, depth + 1) for item in node]
    return node


def recover_payload(raw: str, stage: str) -> tuple[JsonValue, RecoveryReport]:
    """extract_json plus normalize_keys, tagging ``key_alias`` when keys moved."""
    tree, report = extract_json(raw)
    normalized = normalize_keys(tree, stage)
    if normalized != tree:
        report.repairs_applied.append(REPAIR_KEY_ALIAS)
    return normalized, report


# --- placeholder echoes ----------------------------------------------------


def null_placeholder_echoes(value: JsonValue) -> tuple[JsonValue, list[str]]:
    """Replace values that merely echo a template sentinel with null.

    Entries whose *key* echoes a name-position sentinel (VAR1, VAR2, ...)
    are dropped outright.  Returns the cleaned tree plus the slash-delimited
    paths that were touched.
    """
    paths: list[str] = []

    def walk(node: JsonValue, path: str) -> JsonValue:
        if isinstance(node, dict):
            out = {}
            for key, val in node.items():
                child = f"{path}/{key}" if path else key
                if key in PLACEHOLDER_KEY_SENTINELS:
                    paths.append(child)
                    continue
                out[key] = walk(val, child)
            return out
        if isinstance(node, list):
            kept = []
            for index, item in enumerate(node):
                child = f"{path}/{index}" if path else str(index)
                if isinstance(item, str) and item in PLACEHOLDER_SENTINELS:
                    paths.append(child)
                    continue
                kept.append(walk(item, child))
            return kept
        if isinstance(node, str) and node in PLACEHOLDER_SENTINELS:
            paths.append(path)
            return None
        return node

    return walk(value, ""), paths
