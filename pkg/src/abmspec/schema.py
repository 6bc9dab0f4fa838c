"""Canonical specification types, stage-fragment validation, merge, and lint.

The nine stages each yield a small typed fragment; ``merge`` assembles them
into one ModelSpecification.  Leaf values extracted from model output are
kept verbatim in ``raw_*``/string fields, with normalized enumerations added
alongside rather than replacing them.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from typing import Any, Callable, Iterable, Iterator, Optional

from .prompts import schema_ref_for
from .recovery import JsonValue

DATA_TYPES = ("integer", "real", "boolean", "string", "categorical", "list", "unknown")
FREQUENCIES = ("setup_once", "every_tick", "conditional", "unknown")

SCOPE_SPACE = "SPACE"
SCOPE_MODEL_LEVEL = "Model-Level"

TOP_LEVEL_KEYS = ("provenance", "purpose", "agent_sets", "space", "model_level")


class ConflictingFragmentsError(Exception):
    """Two fragments for one (stage, bindings) pair with different content."""


# --- domain types ------------------------------------------------------------


@dataclass(frozen=True)
class ValidationIssue:
    severity: str  # "error" | "warning"
    path: str  # slash-delimited location, "" for the fragment root
    code: str
    message: str

    def to_json_value(self) -> dict:
        return {
            "severity": self.severity,
            "path": self.path,
            "code": self.code,
            "message": self.message,
        }


@dataclass(frozen=True)
class ModelPurpose:
    full_description: Optional[str] = None
    research_questions: tuple[str, ...] = ()
    system_boundaries: tuple[str, ...] = ()
    outcome_variables: tuple[tuple[str, Optional[str]], ...] = ()


@dataclass(frozen=True)
class AgentSetSummary:
    name: str
    short_description: Optional[str] = None
    agent_role: Optional[str] = None


@dataclass(frozen=True)
class VariableDescriptor:
    short_description: Optional[str] = None
    data_type: str = "unknown"
    raw_data_type: Optional[str] = None
    initial_value: Optional[str] = None


EMPTY_DESCRIPTOR = VariableDescriptor()


@dataclass(frozen=True)
class VariableDynamics:
    value_boundaries: Optional[str] = None
    equation: Optional[str] = None
    execution_order: Optional[int] = None
    raw_execution_order: Optional[str] = None
    frequency: str = "unknown"
    raw_frequency: Optional[str] = None


@dataclass(frozen=True)
class VariableSpec:
    name: str
    descriptor: VariableDescriptor = EMPTY_DESCRIPTOR
    dynamics: Optional[VariableDynamics] = None


@dataclass(frozen=True)
class AgentSet:
    name: str
    short_description: Optional[str] = None
    agent_role: Optional[str] = None
    variables: tuple[VariableSpec, ...] = ()


@dataclass(frozen=True)
class SpaceSpec:
    short_description: Optional[str] = None
    space_type: Optional[str] = None
    variables: tuple[VariableSpec, ...] = ()


@dataclass(frozen=True)
class Provenance:
    document_hash: Optional[str] = None
    backend_id: Optional[str] = None
    timestamp: Optional[str] = None
    tool_version: Optional[str] = None


@dataclass(frozen=True)
class ModelSpecification:
    purpose: Optional[ModelPurpose] = None
    agent_sets: tuple[AgentSet, ...] = ()
    space: Optional[SpaceSpec] = None
    model_level: tuple[VariableSpec, ...] = ()
    provenance: Optional[Provenance] = None


# --- stage fragments ----------------------------------------------------------


@dataclass(frozen=True)
class PurposeFragment:
    purpose: ModelPurpose


@dataclass(frozen=True)
class AgentSetsFragment:
    summaries: tuple[AgentSetSummary, ...]


@dataclass(frozen=True)
class VariablesFragment:
    scope: str
    variables: tuple[VariableSpec, ...]


@dataclass(frozen=True)
class DynamicsFragment:
    scope: str
    variable: str
    dynamics: VariableDynamics


@dataclass(frozen=True)
class SpaceHeaderFragment:
    short_description: Optional[str] = None
    space_type: Optional[str] = None


FragmentPayload = Any


@dataclass(frozen=True)
class Fragment:
    stage: str
    bindings: tuple[tuple[str, str], ...]
    payload: FragmentPayload


def make_fragment(stage: str, bindings: dict[str, str], payload: FragmentPayload) -> Fragment:
    return Fragment(stage=stage, bindings=tuple(sorted(bindings.items())), payload=payload)


# --- leaf normalization --------------------------------------------------------

_DATA_TYPE_MAP: dict[str, str] = {}
for _names, _canon in (
    (("int", "integer", "whole number"), "integer"),
    (("float", "double", "real", "number", "numeric"), "real"),
    (("bool", "boolean"), "boolean"),
    (("string", "text"), "string"),
    (("enum", "category", "categorical"), "categorical"),
    (("list", "array", "set"), "list"),
):
    for _name in _names:
        _DATA_TYPE_MAP[_name] = _canon

_FREQUENCY_RULES: tuple[tuple[str, str], ...] = (
    ("once", "setup_once"),
    ("setup", "setup_once"),
    ("initialization", "setup_once"),
    ("at start", "setup_once"),
    ("every tick", "every_tick"),
    ("each tick", "every_tick"),
    ("per step", "every_tick"),
    ("every step", "every_tick"),
    ("each iteration", "every_tick"),
    ("when", "conditional"),
    ("if", "conditional"),
    ("on event", "conditional"),
    ("conditional", "conditional"),
)

_LEADING_INT_RE = re.compile(r"\s*([+-]?\d+)(?![.\d])")


def normalize_data_type(raw: Optional[str]) -> str:
    """Map a free-text data type to the closed enumeration (else ``unknown``)."""
    if raw is None:
        return "unknown"
    return _DATA_TYPE_MAP.get(raw.strip().lower(), "unknown")


def normalize_frequency(raw: Optional[str]) -> str:
    """Classify a free-text execution frequency by substring rules."""
    if raw is None:
        return "unknown"
    folded = raw.strip().lower().replace("_", " ")
    for needle, canon in _FREQUENCY_RULES:
        if needle in folded:
            return canon
    return "unknown"


def verbatim(value: JsonValue) -> Optional[str]:
    """Render any JSON leaf or subtree as the string the model effectively said."""
    if value is None:
        return None
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False)


def parse_execution_order(value: JsonValue) -> tuple[Optional[int], Optional[str]]:
    """Extract a leading integer from an execution-order value, keeping the raw text."""
    if value is None:
        return None, None
    if isinstance(value, bool):
        return None, verbatim(value)
    if isinstance(value, int):
        return value, str(value)
    if isinstance(value, float):
        raw = verbatim(value)
        return (int(value), raw) if value.is_integer() else (None, raw)
    if isinstance(value, str):
        match = _LEADING_INT_RE.match(value)
        return (int(match.group(1)) if match else None), value
    return None, verbatim(value)


# --- stage validation -----------------------------------------------------------


class _IssueLog:
    def __init__(self) -> None:
        self.issues: list[ValidationIssue] = []

    def error(self, path: str, code: str, message: str) -> None:
        self.issues.append(ValidationIssue("error", path, code, message))

    def warning(self, path: str, code: str, message: str) -> None:
        self.issues.append(ValidationIssue("warning", path, code, message))

    @property
    def has_errors(self) -> bool:
        return any(issue.severity == "error" for issue in self.issues)


def _join(path: str, key: str) -> str:
    return f"{path}/{key}" if path else key


def _string_or_null(value: JsonValue, path: str, log: _IssueLog) -> Optional[str]:
    if value is None or isinstance(value, str):
        return value if value != "" else None
    if isinstance(value, (dict, list)):
        log.warning(path, "coerced_value", "non-scalar value rendered as string")
    return verbatim(value)


def _string_list(value: JsonValue, path: str, log: _IssueLog) -> tuple[str, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        log.warning(path, "coerced_scalar", "expected a list; wrapped the single value")
        value = [value]
    items: list[str] = []
    for index, item in enumerate(value):
        if item is None:
            log.warning(_join(path, str(index)), "empty_item", "null entry dropped")
            continue
        text = verbatim(item)
        if not text:
            log.warning(_join(path, str(index)), "empty_string", "empty entry dropped")
            continue
        items.append(text)
    return tuple(items)


def _take_wrapper(
    value: JsonValue, expected: str, path: str, log: _IssueLog
) -> Optional[dict]:
    """Unwrap value[expected], tolerating case variants or a lone object key."""
    if not isinstance(value, dict):
        log.error(path, "invalid_type", "expected a JSON object")
        return None
    match = None
    for key in value:
        if key == expected or key.strip().lower() == expected.strip().lower():
            match = key
            break
    if match is None:
        object_keys = [k for k, v in value.items() if isinstance(v, dict)]
        if len(value) == 1 and len(object_keys) == 1:
            match = object_keys[0]
            log.warning(
                _join(path, match),
                "wrapper_mismatch",
                f"expected wrapper key {expected!r}, accepted {match!r}",
            )
        else:
            log.error(path, "missing_wrapper", f"required wrapper key {expected!r} is absent")
            return None
    for key in value:
        if key != match:
            log.warning(_join(path, key), "unknown_key", "unexpected key ignored")
    wrapper = value[match]
    if wrapper is None:
        return {}
    if not isinstance(wrapper, dict):
        log.error(_join(path, match), "invalid_type", "wrapper value must be an object")
        return None
    return wrapper


def _known_fields(
    value: dict, known: tuple[str, ...], path: str, log: _IssueLog
) -> None:
    for key in value:
        if key not in known:
            log.warning(_join(path, key), "unknown_key", "unexpected key ignored")


def _validate_model_purpose(value, bindings, log: _IssueLog):
    wrapper = _take_wrapper(value, "Model_Purpose", "", log)
    if wrapper is None:
        return None
    base = "Model_Purpose"
    _known_fields(
        wrapper,
        ("full_description", "research_questions", "system_boundaries", "outcome_variables"),
        base,
        log,
    )
    outcome: list[tuple[str, Optional[str]]] = []
    raw_outcome = wrapper.get("outcome_variables")
    if raw_outcome is not None:
        if not isinstance(raw_outcome, dict):
            log.error(_join(base, "outcome_variables"), "invalid_type", "expected an object")
            return None
        for name, description in raw_outcome.items():
            if not name:
                log.warning(
                    _join(base, "outcome_variables"), "empty_name", "unnamed entry dropped"
                )
                continue
            outcome.append(
                (name, _string_or_null(description, _join(base, f"outcome_variables/{name}"), log))
            )
    purpose = ModelPurpose(
        full_description=_string_or_null(
            wrapper.get("full_description"), _join(base, "full_description"), log
        ),
        research_questions=_string_list(
            wrapper.get("research_questions"), _join(base, "research_questions"), log
        ),
        system_boundaries=_string_list(
            wrapper.get("system_boundaries"), _join(base, "system_boundaries"), log
        ),
        # an associative map carries no order; keep it sorted so fragments
        # survive the canonical (key-sorted) serialization unchanged
        outcome_variables=tuple(sorted(outcome)),
    )
    return PurposeFragment(purpose=purpose)


def _validate_agent_sets(value, bindings, log: _IssueLog):
    if not isinstance(value, dict):
        log.error("", "invalid_type", "expected a JSON object")
        return None
    summaries: list[AgentSetSummary] = []
    for name, body in value.items():
        if not name:
            log.warning("", "empty_name", "unnamed agent set dropped")
            continue
        if isinstance(body, str):
            log.warning(name, "coerced_value", "string entry treated as short description")
            summaries.append(AgentSetSummary(name=name, short_description=body or None))
            continue
        if body is None:
            summaries.append(AgentSetSummary(name=name))
            continue
        if not isinstance(body, dict):
            log.error(name, "invalid_type", "agent set entry must be an object")
            continue
        _known_fields(body, ("short_description", "agent_role"), name, log)
        summaries.append(
            AgentSetSummary(
                name=name,
                short_description=_string_or_null(
                    body.get("short_description"), _join(name, "short_description"), log
                ),
                agent_role=_string_or_null(
                    body.get("agent_role"), _join(name, "agent_role"), log
                ),
            )
        )
    if log.has_errors:
        return None
    return AgentSetsFragment(summaries=tuple(summaries))


def _read_descriptor(body: JsonValue, path: str, log: _IssueLog) -> Optional[VariableDescriptor]:
    if body is None:
        return VariableDescriptor()
    if isinstance(body, str):
        log.warning(path, "coerced_value", "string entry treated as short description")
        return VariableDescriptor(short_description=body or None)
    if not isinstance(body, dict):
        log.error(path, "invalid_type", "variable entry must be an object")
        return None
    _known_fields(body, ("short_description", "data_type", "initial_value"), path, log)
    raw_data_type = _string_or_null(body.get("data_type"), _join(path, "data_type"), log)
    return VariableDescriptor(
        short_description=_string_or_null(
            body.get("short_description"), _join(path, "short_description"), log
        ),
        data_type=normalize_data_type(raw_data_type),
        raw_data_type=raw_data_type,
        initial_value=_string_or_null(body.get("initial_value"), _join(path, "initial_value"), log),
    )


def _scope_for(stage: str, bindings: Optional[dict[str, str]]) -> str:
    if stage in ("P3", "P4"):
        if not bindings or "AGENT_SET_NAME" not in bindings:
            raise ValueError(f"{stage} validation requires an AGENT_SET_NAME binding")
        return bindings["AGENT_SET_NAME"]
    if stage in ("P6", "P7"):
        return SCOPE_SPACE
    return SCOPE_MODEL_LEVEL


def _make_variables_validator(stage: str) -> Callable:
    def validator(value, bindings, log: _IssueLog):
        scope = _scope_for(stage, bindings)
        wrapper = _take_wrapper(value, scope, "", log)
        if wrapper is None:
            return None
        variables: list[VariableSpec] = []
        for name, body in wrapper.items():
            if not name:
                log.warning(scope, "empty_name", "unnamed variable dropped")
                continue
            descriptor = _read_descriptor(body, _join(scope, name), log)
            if descriptor is None:
                continue
            variables.append(VariableSpec(name=name, descriptor=descriptor))
        if log.has_errors:
            return None
        return VariablesFragment(scope=scope, variables=tuple(variables))

    return validator


_DYNAMICS_FIELDS = ("value_boundaries", "equation", "execution_order", "frequency")


def _make_dynamics_validator(stage: str) -> Callable:
    def validator(value, bindings, log: _IssueLog):
        scope = _scope_for(stage, bindings)
        if not bindings or "VAR" not in bindings:
            raise ValueError(f"{stage} validation requires a VAR binding")
        variable = bindings["VAR"]
        outer = _take_wrapper(value, scope, "", log)
        if outer is None:
            return None
        inner = _take_wrapper(outer, variable, scope, log)
        if inner is None:
            return None
        path = f"{scope}/{variable}"
        _known_fields(inner, _DYNAMICS_FIELDS, path, log)
        order, raw_order = parse_execution_order(inner.get("execution_order"))
        if order is not None and order < 0:
            log.warning(
                _join(path, "execution_order"), "invalid_order", "negative order ignored"
            )
            order = None
        raw_frequency = _string_or_null(inner.get("frequency"), _join(path, "frequency"), log)
        dynamics = VariableDynamics(
            value_boundaries=_string_or_null(
                inner.get("value_boundaries"), _join(path, "value_boundaries"), log
            ),
            equation=_string_or_null(inner.get("equation"), _join(path, "equation"), log),
            execution_order=order,
            raw_execution_order=raw_order,
            frequency=normalize_frequency(raw_frequency),
            raw_frequency=raw_frequency,
        )
        if log.has_errors:
            return None
        return DynamicsFragment(scope=scope, variable=variable, dynamics=dynamics)

    return validator


def _validate_space_header(value, bindings, log: _IssueLog):
    wrapper = _take_wrapper(value, SCOPE_SPACE, "", log)
    if wrapper is None:
        return None
    _known_fields(wrapper, ("short_description", "type"), SCOPE_SPACE, log)
    return SpaceHeaderFragment(
        short_description=_string_or_null(
            wrapper.get("short_description"), f"{SCOPE_SPACE}/short_description", log
        ),
        space_type=_string_or_null(wrapper.get("type"), f"{SCOPE_SPACE}/type", log),
    )


SCHEMA_VALIDATORS: dict[str, Callable] = {
    "model_purpose": _validate_model_purpose,
    "agent_sets": _validate_agent_sets,
    "agent_variables": _make_variables_validator("P3"),
    "agent_dynamics": _make_dynamics_validator("P4"),
    "space_header": _validate_space_header,
    "space_variables": _make_variables_validator("P6"),
    "space_dynamics": _make_dynamics_validator("P7"),
    "model_variables": _make_variables_validator("P8"),
    "model_dynamics": _make_dynamics_validator("P9"),
}


def validate_stage_payload(
    stage: str, value: JsonValue, bindings: Optional[dict[str, str]] = None
) -> tuple[Optional[FragmentPayload], list[ValidationIssue]]:
    """Validate one stage's normalized JSON payload into its typed fragment.

    Returns (payload, issues); the payload is None exactly when an
    error-severity issue was recorded.  Unknown extra keys only warn.
    """
    validator = SCHEMA_VALIDATORS[schema_ref_for(stage)]
    log = _IssueLog()
    payload = validator(value, bindings, log)
    if log.has_errors:
        payload = None
    return payload, log.issues


# --- merge ---------------------------------------------------------------------


def _payload_key(fragment: Fragment) -> tuple[str, tuple[tuple[str, str], ...]]:
    return fragment.stage, fragment.bindings


def merge(
    fragments: Iterable[Fragment], provenance: Optional[Provenance] = None
) -> tuple[ModelSpecification, list[ValidationIssue]]:
    """Assemble stage fragments into one ModelSpecification.

    The result is independent of fragment collection order.  Dynamics whose
    (scope, variable) has no descriptor are attached with an empty descriptor
    and flagged ``orphan_dynamics``; descriptor fragments for agent sets never
    listed by the agent-set stage are attached and flagged ``orphan_variables``.
    """
    log = _IssueLog()
    index: dict[tuple, Fragment] = {}
    for fragment in fragments:
        key = _payload_key(fragment)
        if key in index:
            if canonical_json(fragment_to_json_value(fragment)) != canonical_json(
                fragment_to_json_value(index[key])
            ):
                raise ConflictingFragmentsError(
                    f"conflicting fragments for stage {fragment.stage} "
                    f"bindings {dict(fragment.bindings)}"
                )
            continue
        index[key] = fragment

    def stage_fragments(stage: str) -> list[Fragment]:
        found = [f for f in index.values() if f.stage == stage]
        return sorted(found, key=lambda f: f.bindings)

    purpose = None
    p1 = index.get(("P1", ()))
    if p1 is not None:
        purpose = p1.payload.purpose

    variables_by_scope = {f.payload.scope: f.payload for f in stage_fragments("P3")}
    dynamics_by_scope: dict[str, dict[str, VariableDynamics]] = {}
    for f in stage_fragments("P4"):
        dynamics_by_scope.setdefault(f.payload.scope, {})[f.payload.variable] = f.payload.dynamics

    agent_sets: list[AgentSet] = []
    p2 = index.get(("P2", ()))
    listed_names = [s.name for s in p2.payload.summaries] if p2 is not None else []
    extra_names = sorted(
        (set(variables_by_scope) | set(dynamics_by_scope)) - set(listed_names)
    )
    summary_by_name = (
        {s.name: s for s in p2.payload.summaries} if p2 is not None else {}
    )
    for name in listed_names + extra_names:
        if name not in summary_by_name and name in variables_by_scope:
            log.warning(
                f"agent_sets/{name}",
                "orphan_variables",
                "variables extracted for an agent set never listed by the agent-set stage",
            )
        variables = _attach_dynamics(
            variables_by_scope.get(name),
            dynamics_by_scope.get(name, {}),
            f"agent_sets/{name}/variables",
            log,
        )
        summary = summary_by_name.get(name, AgentSetSummary(name=name))
        agent_sets.append(
            AgentSet(
                name=name,
                short_description=summary.short_description,
                agent_role=summary.agent_role,
                variables=variables,
            )
        )

    p5 = index.get(("P5", ()))
    p6 = index.get(("P6", ()))
    p7_dynamics = {
        f.payload.variable: f.payload.dynamics for f in stage_fragments("P7")
    }
    space = None
    if p5 is not None or p6 is not None or p7_dynamics:
        space_variables = _attach_dynamics(
            p6.payload if p6 is not None else None, p7_dynamics, "space/variables", log
        )
        header = p5.payload if p5 is not None else SpaceHeaderFragment()
        space = SpaceSpec(
            short_description=header.short_description,
            space_type=header.space_type,
            variables=space_variables,
        )

    p8 = index.get(("P8", ()))
    p9_dynamics = {
        f.payload.variable: f.payload.dynamics for f in stage_fragments("P9")
    }
    model_level = _attach_dynamics(
        p8.payload if p8 is not None else None, p9_dynamics, "model_level/variables", log
    )

    spec = ModelSpecification(
        purpose=purpose,
        agent_sets=tuple(agent_sets),
        space=space,
        model_level=model_level,
        provenance=provenance,
    )
    return spec, log.issues


def _attach_dynamics(
    variables_fragment: Optional[VariablesFragment],
    dynamics: dict[str, VariableDynamics],
    path: str,
    log: _IssueLog,
) -> tuple[VariableSpec, ...]:
    variables = list(variables_fragment.variables) if variables_fragment is not None else []
    known = {v.name for v in variables}
    merged = [
        replace(v, dynamics=dynamics[v.name]) if v.name in dynamics else v for v in variables
    ]
    for name in sorted(set(dynamics) - known):
        log.warning(
            f"{path}/{name}",
            "orphan_dynamics",
            "dynamics extracted for a variable with no descriptor",
        )
        merged.append(VariableSpec(name=name, dynamics=dynamics[name]))
    return tuple(merged)


# --- lint ------------------------------------------------------------------------


def iter_scoped_variables(
    spec: ModelSpecification,
) -> Iterator[tuple[str, str, VariableSpec]]:
    """Yield (scope, issue path, variable) over the whole specification."""
    for agent_set in spec.agent_sets:
        for variable in agent_set.variables:
            yield agent_set.name, f"agent_sets/{agent_set.name}/variables/{variable.name}", variable
    if spec.space is not None:
        for variable in spec.space.variables:
            yield SCOPE_SPACE, f"space/variables/{variable.name}", variable
    for variable in spec.model_level:
        yield SCOPE_MODEL_LEVEL, f"model_level/variables/{variable.name}", variable


def lint(spec: ModelSpecification) -> list[ValidationIssue]:
    """Advisory checks over a merged specification; warnings only."""
    log = _IssueLog()

    groups: dict[tuple[str, str, int], list[tuple[str, str]]] = {}
    for scope, path, variable in iter_scoped_variables(spec):
        dynamics = variable.dynamics
        if dynamics is None:
            continue
        if dynamics.execution_order is not None:
            key = (scope, dynamics.frequency, dynamics.execution_order)
            groups.setdefault(key, []).append((path, variable.name))
        if dynamics.equation is not None and dynamics.frequency == "unknown":
            log.warning(
                f"{path}/dynamics/frequency",
                "equation_no_frequency",
                "variable has an equation but its execution frequency is unknown",
            )
    for (scope, frequency, order), members in groups.items():
        if len(members) > 1:
            names = ", ".join(sorted(name for _, name in members))
            log.warning(
                f"{members[0][0]}/dynamics/execution_order",
                "duplicate_order",
                f"execution order {order} shared by {names} in scope {scope!r} "
                f"({frequency})",
            )

    if spec.purpose is not None:
        extracted = {name.lower() for _, _, v in iter_scoped_variables(spec) for name in [v.name]}
        for name, _ in spec.purpose.outcome_variables:
            if name.lower() not in extracted:
                log.warning(
                    f"purpose/outcome_variables/{name}",
                    "unmatched_outcome",
                    "outcome variable matches no extracted variable name",
                )

    for agent_set in spec.agent_sets:
        if not agent_set.variables:
            log.warning(
                f"agent_sets/{agent_set.name}",
                "empty_agent_set",
                "agent set has no extracted variables",
            )

    return log.issues


# --- canonical serialization -------------------------------------------------------


def _sorted_value(value: JsonValue) -> JsonValue:
    if isinstance(value, dict):
        return {key: _sorted_value(value[key]) for key in sorted(value)}
    if isinstance(value, list):
        return [_sorted_value(item) for item in value]
    return value


def canonical_json(value: JsonValue) -> str:
    """Strict JSON, two-space indent, keys sorted, trailing newline."""
    return json.dumps(_sorted_value(value), indent=2, ensure_ascii=False) + "\n"


def purpose_to_json_value(purpose: ModelPurpose) -> dict:
    return {
        "full_description": purpose.full_description,
        "research_questions": list(purpose.research_questions),
        "system_boundaries": list(purpose.system_boundaries),
        "outcome_variables": dict(purpose.outcome_variables),
    }


def dynamics_to_json_value(dynamics: VariableDynamics) -> dict:
    return {
        "value_boundaries": dynamics.value_boundaries,
        "equation": dynamics.equation,
        "execution_order": dynamics.execution_order,
        "raw_execution_order": dynamics.raw_execution_order,
        "frequency": dynamics.frequency,
        "raw_frequency": dynamics.raw_frequency,
    }


def variable_to_json_value(variable: VariableSpec) -> dict:
    return {
        "name": variable.name,
        "short_description": variable.descriptor.short_description,
        "data_type": variable.descriptor.data_type,
        "raw_data_type": variable.descriptor.raw_data_type,
        "initial_value": variable.descriptor.initial_value,
        "dynamics": (
            dynamics_to_json_value(variable.dynamics) if variable.dynamics is not None else None
        ),
    }


def spec_to_json_value(spec: ModelSpecification) -> dict:
    """Top level in fixed order; everything below sorts at serialization time."""
    return {
        "provenance": (
            {
                "document_hash": spec.provenance.document_hash,
                "backend_id": spec.provenance.backend_id,
                "timestamp": spec.provenance.timestamp,
                "tool_version": spec.provenance.tool_version,
            }
            if spec.provenance is not None
            else None
        ),
        "purpose": purpose_to_json_value(spec.purpose) if spec.purpose is not None else None,
        "agent_sets": [
            {
                "name": agent_set.name,
                "short_description": agent_set.short_description,
                "agent_role": agent_set.agent_role,
                "variables": [variable_to_json_value(v) for v in agent_set.variables],
            }
            for agent_set in spec.agent_sets
        ],
        "space": (
            {
                "short_description": spec.space.short_description,
                "space_type": spec.space.space_type,
                "variables": [variable_to_json_value(v) for v in spec.space.variables],
            }
            if spec.space is not None
            else None
        ),
        "model_level": [variable_to_json_value(v) for v in spec.model_level],
    }


def spec_to_canonical_json(spec: ModelSpecification) -> str:
    value = spec_to_json_value(spec)
    ordered = {key: _sorted_value(value[key]) for key in TOP_LEVEL_KEYS}
    return json.dumps(ordered, indent=2, ensure_ascii=False) + "\n"


# --- fragment persistence ------------------------------------------------------------


def fragment_to_json_value(fragment: Fragment) -> dict:
    payload = fragment.payload
    if isinstance(payload, PurposeFragment):
        body: JsonValue = {"purpose": purpose_to_json_value(payload.purpose)}
    elif isinstance(payload, AgentSetsFragment):
        body = {
            "agent_sets": [
                {
                    "name": s.name,
                    "short_description": s.short_description,
                    "agent_role": s.agent_role,
                }
                for s in payload.summaries
            ]
        }
    elif isinstance(payload, VariablesFragment):
        body = {
            "scope": payload.scope,
            "variables": [variable_to_json_value(v) for v in payload.variables],
        }
    elif isinstance(payload, DynamicsFragment):
        body = {
            "scope": payload.scope,
            "variable": payload.variable,
            "dynamics": dynamics_to_json_value(payload.dynamics),
        }
    elif isinstance(payload, SpaceHeaderFragment):
        body = {
            "short_description": payload.short_description,
            "space_type": payload.space_type,
        }
    else:  # pragma: no cover - programming error
        raise TypeError(f"unknown fragment payload type: {type(payload)!r}")
    return {"stage": fragment.stage, "bindings": dict(fragment.bindings), "payload": body}


def _variable_from_json_value(value: dict) -> VariableSpec:
    dynamics = value.get("dynamics")
    return VariableSpec(
        name=value["name"],
        descriptor=VariableDescriptor(
            short_description=value.get("short_description"),
            data_type=value.get("data_type", "unknown"),
            raw_data_type=value.get("raw_data_type"),
            initial_value=value.get("initial_value"),
        ),
        dynamics=_dynamics_from_json_value(dynamics) if dynamics is not None else None,
    )


def _dynamics_from_json_value(value: dict) -> VariableDynamics:
    return VariableDynamics(
        value_boundaries=value.get("value_boundaries"),
        equation=value.get("equation"),
        execution_order=value.get("execution_order"),
        raw_execution_order=value.get("raw_execution_order"),
        frequency=value.get("frequency", "unknown"),
        raw_frequency=value.get("raw_frequency"),
    )


def fragment_from_json_value(value: dict) -> Fragment:
    """Inverse of fragment_to_json_value; raises ValueError on malformed input."""
    try:
        stage = value["stage"]
        bindings = value["bindings"]
        body = value["payload"]
        ref = schema_ref_for(stage)
        payload: FragmentPayload
        if ref == "model_purpose":
            p = body["purpose"]
            payload = PurposeFragment(
                purpose=ModelPurpose(
                    full_description=p.get("full_description"),
                    research_questions=tuple(p.get("research_questions", ())),
                    system_boundaries=tuple(p.get("system_boundaries", ())),
                    outcome_variables=tuple(sorted(p.get("outcome_variables", {}).items())),
                )
            )
        elif ref == "agent_sets":
            payload = AgentSetsFragment(
                summaries=tuple(
                    AgentSetSummary(
                        name=s["name"],
                        short_description=s.get("short_description"),
                        agent_role=s.get("agent_role"),
                    )
                    for s in body["agent_sets"]
                )
            )
        elif ref in ("agent_variables", "space_variables", "model_variables"):
            payload = VariablesFragment(
                scope=body["scope"],
                variables=tuple(_variable_from_json_value(v) for v in body["variables"]),
            )
        elif ref in ("agent_dynamics", "space_dynamics", "model_dynamics"):
            payload = DynamicsFragment(
                scope=body["scope"],
                variable=body["variable"],
                dynamics=_dynamics_from_json_value(body["dynamics"]),
            )
        elif ref == "space_header":
            payload = SpaceHeaderFragment(
                short_description=body.get("short_description"),
                space_type=body.get("space_type"),
            )
        else:  # pragma: no cover
            raise KeyError(ref)
    except (KeyError, TypeError, AttributeError) as exc:
        raise ValueError(f"malformed fragment record: {exc}") from exc
    return Fragment(stage=stage, bindings=tuple(sorted(bindings.items())), payload=payload)


def fragment_to_stage_payload(fragment: Fragment) -> JsonValue:
    """Reconstruct the canonical stage JSON a fragment was validated from.

    Useful for debugging and for the serialize-then-revalidate fixpoint: the
    raw leaf values are emitted, so validating the result reproduces the
    fragment with zero issues.
    """
    payload = fragment.payload
    if isinstance(payload, PurposeFragment):
        return {"Model_Purpose": purpose_to_json_value(payload.purpose)}
    if isinstance(payload, AgentSetsFragment):
        return {
            s.name: {"short_description": s.short_description, "agent_role": s.agent_role}
            for s in payload.summaries
        }
    if isinstance(payload, VariablesFragment):
        return {
            payload.scope: {
                v.name: {
                    "short_description": v.descriptor.short_description,
                    "data_type": v.descriptor.raw_data_type,
                    "initial_value": v.descriptor.initial_value,
                }
                for v in payload.variables
            }
        }
    if isinstance(payload, DynamicsFragment):
        d = payload.dynamics
        return {
            payload.scope: {
                payload.variable: {
                    "value_boundaries": d.value_boundaries,
                    "equation": d.equation,
                    "execution_order": d.raw_execution_order,
                    "frequency": d.raw_frequency,
                }
            }
        }
    if isinstance(payload, SpaceHeaderFragment):
        return {
            SCOPE_SPACE: {
                "short_description": payload.short_description,
                "type": payload.space_type,
            }
        }
    raise TypeError(f"unknown fragment payload type: {type(payload)!r}")  # pragma: no cover


# --- whole-specification validation ---------------------------------------------------


def validate_specification(
    value: JsonValue,
) -> tuple[Optional[ModelSpecification], list[ValidationIssue]]:
    """Strictly validate a serialized specification file back into types.

    Missing top-level keys, type mismatches, out-of-enumeration values, and
    duplicate (scope, variable) pairs are errors; unknown keys warn.
    """
    log = _IssueLog()
    if not isinstance(value, dict):
        log.error("", "invalid_type", "specification must be a JSON object")
        return None, log.issues
    for key in TOP_LEVEL_KEYS:
        if key not in value:
            log.error("", "missing_key", f"required top-level key {key!r} is absent")
    for key in value:
        if key not in TOP_LEVEL_KEYS:
            log.warning(key, "unknown_key", "unexpected top-level key ignored")
    if log.has_errors:
        return None, log.issues

    provenance = _read_provenance(value.get("provenance"), log)
    purpose = _read_purpose(value.get("purpose"), log)
    agent_sets = _read_agent_sets(value.get("agent_sets"), log)
    space = _read_space(value.get("space"), log)
    model_level = _read_variable_list(value.get("model_level"), "model_level", log)

    if log.has_errors:
        return None, log.issues
    spec = ModelSpecification(
        purpose=purpose,
        agent_sets=agent_sets,
        space=space,
        model_level=model_level,
        provenance=provenance,
    )
    return spec, log.issues


def _strict_string(value, path, log: _IssueLog, allow_null=True) -> Optional[str]:
    if value is None and allow_null:
        return None
    if not isinstance(value, str) or (not allow_null and not value):
        log.error(path, "invalid_type", "expected a string" + (" or null" if allow_null else ""))
        return None
    return value


def _read_provenance(value, log: _IssueLog) -> Optional[Provenance]:
    if value is None:
        return None
    if not isinstance(value, dict):
        log.error("provenance", "invalid_type", "expected an object or null")
        return None
    _known_fields(value, ("document_hash", "backend_id", "timestamp", "tool_version"), "provenance", log)
    return Provenance(
        document_hash=_strict_string(value.get("document_hash"), "provenance/document_hash", log),
        backend_id=_strict_string(value.get("backend_id"), "provenance/backend_id", log),
        timestamp=_strict_string(value.get("timestamp"), "provenance/timestamp", log),
        tool_version=_strict_string(value.get("tool_version"), "provenance/tool_version", log),
    )


def _strict_string_tuple(value, path, log: _IssueLog) -> tuple[str, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        log.error(path, "invalid_type", "expected a list of strings")
        return ()
    out = []
    for index, item in enumerate(value):
        if not isinstance(item, str) or not item:
            log.error(f"{path}/{index}", "invalid_type", "expected a non-empty string")
            continue
        out.append(item)
    return tuple(out)


def _read_purpose(value, log: _IssueLog) -> Optional[ModelPurpose]:
    if value is None:
        return None
    if not isinstance(value, dict):
        log.error("purpose", "invalid_type", "expected an object or null")
        return None
    _known_fields(
        value,
        ("full_description", "research_questions", "system_boundaries", "outcome_variables"),
        "purpose",
        log,
    )
    outcome_raw = value.get("outcome_variables")
    outcome: list[tuple[str, Optional[str]]] = []
    if outcome_raw is not None:
        if not isinstance(outcome_raw, dict):
            log.error("purpose/outcome_variables", "invalid_type", "expected an object")
        else:
            for name, description in outcome_raw.items():
                if not name:
                    log.error("purpose/outcome_variables", "empty_name", "empty variable name")
                    continue
                outcome.append(
                    (name, _strict_string(description, f"purpose/outcome_variables/{name}", log))
                )
    return ModelPurpose(
        full_description=_strict_string(value.get("full_description"), "purpose/full_description", log),
        research_questions=_strict_string_tuple(
            value.get("research_questions"), "purpose/research_questions", log
        ),
        system_boundaries=_strict_string_tuple(
            value.get("system_boundaries"), "purpose/system_boundaries", log
        ),
        outcome_variables=tuple(sorted(outcome)),
    )


def _read_dynamics(value, path, log: _IssueLog) -> Optional[VariableDynamics]:
    if value is None:
        return None
    if not isinstance(value, dict):
        log.error(path, "invalid_type", "expected an object or null")
        return None
    _known_fields(
        value,
        (
            "value_boundaries",
            "equation",
            "execution_order",
            "raw_execution_order",
            "frequency",
            "raw_frequency",
        ),
        path,
        log,
    )
    order = value.get("execution_order")
    if order is not None and (not isinstance(order, int) or isinstance(order, bool) or order < 0):
        log.error(f"{path}/execution_order", "invalid_value", "expected a non-negative integer or null")
        order = None
    frequency = value.get("frequency", "unknown")
    if frequency not in FREQUENCIES:
        log.error(f"{path}/frequency", "invalid_enum", f"not one of {FREQUENCIES}")
        frequency = "unknown"
    return VariableDynamics(
        value_boundaries=_strict_string(value.get("value_boundaries"), f"{path}/value_boundaries", log),
        equation=_strict_string(value.get("equation"), f"{path}/equation", log),
        execution_order=order,
        raw_execution_order=_strict_string(
            value.get("raw_execution_order"), f"{path}/raw_execution_order", log
        ),
        frequency=frequency,
        raw_frequency=_strict_string(value.get("raw_frequency"), f"{path}/raw_frequency", log),
    )


def _read_variable_list(value, path, log: _IssueLog) -> tuple[VariableSpec, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        log.error(path, "invalid_type", "expected a list")
        return ()
    variables = []
    seen: set[str] = set()
    for index, item in enumerate(value):
        item_path = f"{path}/{index}"
        if not isinstance(item, dict):
            log.error(item_path, "invalid_type", "expected an object")
            continue
        _known_fields(
            item,
            ("name", "short_description", "data_type", "raw_data_type", "initial_value", "dynamics"),
            item_path,
            log,
        )
        name = item.get("name")
        if not isinstance(name, str) or not name:
            log.error(f"{item_path}/name", "invalid_type", "expected a non-empty string")
            continue
        if name in seen:
            log.error(f"{item_path}/name", "duplicate_variable", f"variable {name!r} repeats in {path}")
            continue
        seen.add(name)
        data_type = item.get("data_type", "unknown")
        if data_type not in DATA_TYPES:
            log.error(f"{item_path}/data_type", "invalid_enum", f"not one of {DATA_TYPES}")
            data_type = "unknown"
        variables.append(
            VariableSpec(
                name=name,
                descriptor=VariableDescriptor(
                    short_description=_strict_string(
                        item.get("short_description"), f"{item_path}/short_description", log
                    ),
                    data_type=data_type,
                    raw_data_type=_strict_string(
                        item.get("raw_data_type"), f"{item_path}/raw_data_type", log
                    ),
                    initial_value=_strict_string(
                        item.get("initial_value"), f"{item_path}/initial_value", log
                    ),
                ),
                dynamics=_read_dynamics(item.get("dynamics"), f"{item_path}/dynamics", log),
            )
        )
    return tuple(variables)


def _read_agent_sets(value, log: _IssueLog) -> tuple[AgentSet, ...]:
    if value is None:
        return ()
    if not isinstance(value, list):
        log.error("agent_sets", "invalid_type", "expected a list")
        return ()
    sets = []
    seen: set[str] = set()
    for index, item in enumerate(value):
        path = f"agent_sets/{index}"
        if not isinstance(item, dict):
            log.error(path, "invalid_type", "expected an object")
            continue
        _known_fields(item, ("name", "short_description", "agent_role", "variables"), path, log)
        name = item.get("name")
        if not isinstance(name, str) or not name:
            log.error(f"{path}/name", "invalid_type", "expected a non-empty string")
            continue
        if name in seen:
            log.error(f"{path}/name", "duplicate_agent_set", f"agent set {name!r} repeats")
            continue
        seen.add(name)
        sets.append(
            AgentSet(
                name=name,
                short_description=_strict_string(
                    item.get("short_description"), f"{path}/short_description", log
                ),
                agent_role=_strict_string(item.get("agent_role"), f"{path}/agent_role", log),
                variables=_read_variable_list(item.get("variables"), f"{path}/variables", log),
            )
        )
    return tuple(sets)


def _read_space(value, log: _IssueLog) -> Optional[SpaceSpec]:
    if value is None:
        return None
    if not isinstance(value, dict):
        log.error("space", "invalid_type", "expected an object or null")
        return None
    _known_fields(value, ("short_description", "space_type", "variables"), "space", log)
    return SpaceSpec(
        short_description=_strict_string(value.get("short_description"), "space/short_description", log),
        space_type=_strict_string(value.get("space_type"), "space/space_type", log),
        variables=_read_variable_list(value.get("variables"), "space/variables", log),
    )
