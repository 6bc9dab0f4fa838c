"""Execution schedule and pseudocode skeleton derived from a specification.

The schedule realizes the execution-order and frequency semantics: setup
and tick phases are totally ordered by (execution order with nulls last,
scope, variable name); conditional updates are kept aside as stubs.  The
skeleton is deterministic text so it can be pinned byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .schema import (
    ModelSpecification,
    VariableSpec,
    iter_scoped_variables,
)

_PHASE_FOR_FREQUENCY = {
    "setup_once": "setup",
    "every_tick": "tick",
    "conditional": "conditional",
    "unknown": "tick",
}


@dataclass(frozen=True)
class ScheduleEntry:
    scope: str
    variable: str
    phase: str  # setup | tick | conditional
    order_key: tuple[Optional[int], str]
    equation: Optional[str]

    def to_json_value(self) -> dict:
        return {
            "scope": self.scope,
            "variable": self.variable,
            "phase": self.phase,
            "order_key": list(self.order_key),
            "equation": self.equation,
        }


@dataclass(frozen=True)
class Schedule:
    setup: tuple[ScheduleEntry, ...]
    tick: tuple[ScheduleEntry, ...]
    conditional: tuple[ScheduleEntry, ...]
    warnings: tuple[str, ...]

    def to_json_value(self) -> dict:
        return {
            "setup": [entry.to_json_value() for entry in self.setup],
            "tick": [entry.to_json_value() for entry in self.tick],
            "conditional": [entry.to_json_value() for entry in self.conditional],
            "warnings": list(self.warnings),
        }

    def __len__(self) -> int:
        return len(self.setup) + len(self.tick) + len(self.conditional)


def _sort_key(entry: ScheduleEntry) -> tuple:
    order = entry.order_key[0]
    return (0, order) if order is not None else (1, 0), entry.scope, entry.variable


def build_schedule(spec: ModelSpecification) -> Schedule:
    """One entry per variable with dynamics, sorted into phases.

    Unknown frequencies land in the tick phase with a warning; equal
    execution orders within an ordered phase are broken lexicographically
    and flagged.
    """
    phases: dict[str, list[ScheduleEntry]] = {"setup": [], "tick": [], "conditional": []}
    warnings: list[str] = []
    for scope, _, variable in iter_scoped_variables(spec):
        dynamics = variable.dynamics
        if dynamics is None:
            continue
        phase = _PHASE_FOR_FREQUENCY[dynamics.frequency]
        if dynamics.frequency == "unknown":
            warnings.append(
                f"{scope}/{variable.name}: execution frequency unknown; scheduled every tick"
            )
        entry = ScheduleEntry(
            scope=scope,
            variable=variable.name,
            phase=phase,
            order_key=(dynamics.execution_order, f"{scope}/{variable.name}"),
            equation=dynamics.equation,
        )
        phases[phase].append(entry)

    for phase in ("setup", "tick"):
        phases[phase].sort(key=_sort_key)
        by_order: dict[int, list[ScheduleEntry]] = {}
        for entry in phases[phase]:
            if entry.order_key[0] is not None:
                by_order.setdefault(entry.order_key[0], []).append(entry)
        for order in sorted(by_order):
            tied = by_order[order]
            if len(tied) > 1:
                names = ", ".join(sorted(f"{e.scope}/{e.variable}" for e in tied))
                warnings.append(
                    f"{phase}: execution order {order} shared by {names}; "
                    "tie broken lexicographically"
                )
    phases["conditional"].sort(key=_sort_key)

    return Schedule(
        setup=tuple(phases["setup"]),
        tick=tuple(phases["tick"]),
        conditional=tuple(phases["conditional"]),
        warnings=tuple(warnings),
    )


def _declaration_lines(variables: tuple[VariableSpec, ...]) -> list[str]:
    lines = []
    for variable in variables:
        line = f"  var {variable.name}: {variable.descriptor.data_type}"
        if variable.descriptor.initial_value is not None:
            line += f" = {variable.descriptor.initial_value}"
        lines.append(line)
    return lines


def _statement(entry: ScheduleEntry) -> str:
    equation = entry.equation if entry.equation is not None else "TODO"
    return f"  {entry.scope}.{entry.variable} := {equation}"


def emit_skeleton(spec: ModelSpecification, schedule: Schedule) -> str:
    """Deterministic pseudocode: declarations plus setup/tick procedures.

    Every non-null equation appears verbatim in its statement; variables
    without one get a TODO marker.  Conditional updates become commented
    stubs carrying their raw frequency text.
    """
    lines: list[str] = ["# simulation skeleton"]
    if spec.provenance is not None:
        lines.append(f"# document: {spec.provenance.document_hash}")
        lines.append(f"# backend: {spec.provenance.backend_id}")
        lines.append(f"# generated: {spec.provenance.timestamp}")
        lines.append(f"# tool: abmspec {spec.provenance.tool_version}")
    lines.append("")

    if spec.space is not None:
        lines.append("space:")
        if spec.space.short_description is not None:
            lines.append(f"  # {spec.space.short_description}")
        lines.append(f"  type: {spec.space.space_type if spec.space.space_type is not None else 'unspecified'}")
        lines.extend(_declaration_lines(spec.space.variables))
        lines.append("")

    for agent_set in spec.agent_sets:
        lines.append(f"agent-set {agent_set.name}:")
        if agent_set.short_description is not None:
            lines.append(f"  # {agent_set.short_description}")
        if agent_set.agent_role is not None:
            lines.append(f"  # role: {agent_set.agent_role}")
        lines.extend(_declaration_lines(agent_set.variables))
        lines.append("")

    if spec.model_level:
        lines.append("model-level:")
        lines.extend(_declaration_lines(spec.model_level))
        lines.append("")

    lines.append("procedure setup:")
    lines.extend(_statement(entry) for entry in schedule.setup)
    lines.append("")
    lines.append("procedure tick:")
    lines.extend(_statement(entry) for entry in schedule.tick)

    if schedule.conditional:
        lines.append("")
        lines.append("conditional:")
        raw_by_name = {}
        for scope, _, variable in iter_scoped_variables(spec):
            if variable.dynamics is not None:
                raw_by_name[(scope, variable.name)] = variable.dynamics.raw_frequency
        for entry in schedule.conditional:
            raw = raw_by_name.get((entry.scope, entry.variable))
            equation = entry.equation if entry.equation is not None else "TODO"
            lines.append(f"  # {entry.scope}.{entry.variable} [{raw}]: {equation}")

    return "\n".join(lines) + "\n"
