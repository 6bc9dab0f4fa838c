"""Orchestration of the nine-stage extraction workflow.

Static stages (P1, P2, P5, P6, P8) run first and may run concurrently; the
fan-out stages are planned from their predecessors' fragments (one P3 per
agent set, one P4 per agent variable, one P7 per space variable, one P9 per
model-level variable).  Run state is persisted after every status change so
an interrupted run can be resumed without repeating succeeded stages.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from .config import Config, ConfigError
from .document import Document, document_from_text
from .gateway import (
    AuthError,
    BackendRefusalError,
    Gateway,
    GatewayError,
    GenerationParams,
    QARequest,
    RateLimitedError,
    ReplayMissError,
    TransportError,
    rfc3339_now,
)
from .prompts import PromptCatalog
from .recovery import (
    DuplicateAfterNormalizationError,
    RecoveryError,
    null_placeholder_echoes,
    recover_payload,
)
from .schema import (
    Fragment,
    ModelSpecification,
    Provenance,
    ValidationIssue,
    canonical_json,
    fragment_from_json_value,
    fragment_to_json_value,
    lint,
    make_fragment,
    merge,
    spec_to_canonical_json,
    validate_specification,
    validate_stage_payload,
)

STATIC_STAGES = ("P1", "P2", "P5", "P6", "P8")

STATE_FILENAME = "state.json"
DOCUMENT_FILENAME = "document.txt"
SPEC_FILENAME = "spec.abmspec.json"
ISSUES_FILENAME = "issues.json"
FRAGMENTS_DIRNAME = "fragments"

# failed parent stage -> dependent stage recorded as skipped
_SKIP_CHILDREN = {"P2": "P3", "P6": "P7", "P8": "P9"}


class PipelineError(Exception):
    pass


class EmptyDocumentError(PipelineError):
    pass


class AbortedError(PipelineError):
    pass


class BackendUnavailableError(PipelineError):
    pass


class StaleRunError(PipelineError):
    pass


class CorruptStateError(PipelineError):
    pass


@dataclass
class StageInvocation:
    prompt_id: str
    bindings: dict[str, str]
    status: str = "pending"  # pending | succeeded | failed | skipped
    attempts: int = 0
    fragment_file: Optional[str] = None
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, tuple[tuple[str, str], ...]]:
        return self.prompt_id, tuple(sorted(self.bindings.items()))

    def to_json_value(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "bindings": dict(sorted(self.bindings.items())),
            "status": self.status,
            "attempts": self.attempts,
            "fragment_file": self.fragment_file,
            "issues": [issue.to_json_value() for issue in self.issues],
        }

    @classmethod
    def from_json_value(cls, value: dict) -> "StageInvocation":
        return cls(
            prompt_id=value["prompt_id"],
            bindings=dict(value["bindings"]),
            status=value["status"],
            attempts=value["attempts"],
            fragment_file=value.get("fragment_file"),
            issues=[
                ValidationIssue(
                    severity=i["severity"], path=i["path"], code=i["code"], message=i["message"]
                )
                for i in value.get("issues", [])
            ],
        )


@dataclass
class RunState:
    document_hash: str
    invocations: list[StageInvocation]
    config_snapshot: dict
    phase: str = "static_stages"  # static_stages | fanout_stages | merging | done

    def to_json_value(self) -> dict:
        return {
            "document_hash": self.document_hash,
            "phase": self.phase,
            "config_snapshot": self.config_snapshot,
            "invocations": [inv.to_json_value() for inv in self.invocations],
        }

    @classmethod
    def from_json_value(cls, value: dict) -> "RunState":
        return cls(
            document_hash=value["document_hash"],
            invocations=[StageInvocation.from_json_value(v) for v in value["invocations"]],
            config_snapshot=value["config_snapshot"],
            phase=value["phase"],
        )


_SLUG_RE = re.compile(r"[^a-z0-9]+")


def _slug_component(value: str) -> str:
    return _SLUG_RE.sub("-", value.lower()).strip("-") or "x"


def invocation_slug(prompt_id: str, bindings: dict[str, str]) -> str:
    """``P4__wolves__energy``-style identifier used for fragment filenames."""
    parts = [prompt_id] + [_slug_component(value) for _, value in sorted(bindings.items())]
    return "__".join(parts)


FragmentIndex = dict[tuple[str, tuple[tuple[str, str], ...]], Fragment]


def plan(document: Document, fragments: FragmentIndex) -> list[StageInvocation]:
    """Next executable invocations given the fragments gathered so far.

    Static stages come first; each fan-out child appears once per value in
    its parent fragment and never before that parent has succeeded.
    """
    todo: list[StageInvocation] = []

    def missing(prompt_id: str, bindings: dict[str, str]) -> None:
        key = (prompt_id, tuple(sorted(bindings.items())))
        if key not in fragments:
            todo.append(StageInvocation(prompt_id=prompt_id, bindings=bindings))

    for prompt_id in STATIC_STAGES:
        missing(prompt_id, {})

    p2 = fragments.get(("P2", ()))
    agent_order = [s.name for s in p2.payload.summaries] if p2 is not None else []
    for name in agent_order:
        missing("P3", {"AGENT_SET_NAME": name})

    p3_by_scope = {
        fragment.payload.scope: fragment
        for (stage, _), fragment in fragments.items()
        if stage == "P3"
    }
    ordered_scopes = [n for n in agent_order if n in p3_by_scope]
    ordered_scopes += sorted(set(p3_by_scope) - set(ordered_scopes))
    for scope in ordered_scopes:
        for variable in p3_by_scope[scope].payload.variables:
            missing("P4", {"AGENT_SET_NAME": scope, "VAR": variable.name})

    p6 = fragments.get(("P6", ()))
    if p6 is not None:
        for variable in p6.payload.variables:
            missing("P7", {"VAR": variable.name})

    p8 = fragments.get(("P8", ()))
    if p8 is not None:
        for variable in p8.payload.variables:
            missing("P9", {"VAR": variable.name})

    return todo


@dataclass
class _StageOutcome:
    status: str
    attempts: int
    payload: object
    issues: list[ValidationIssue]
    error_kind: Optional[str]


def _classify_gateway_error(exc: GatewayError) -> str:
    if isinstance(exc, (TransportError, RateLimitedError)):
        return "transport"
    if isinstance(exc, AuthError):
        return "auth"
    if isinstance(exc, BackendRefusalError):
        return "refusal"
    if isinstance(exc, ReplayMissError):
        return "replay_miss"
    return "backend"


def _run_stage(
    invocation: StageInvocation,
    document: Document,
    gateway: Gateway,
    catalog: PromptCatalog,
    params: GenerationParams,
    config: Config,
) -> _StageOutcome:
    max_attempts = config.pipeline.max_stage_retries + 1
    last_issues: list[ValidationIssue] = []
    error_kind: Optional[str] = None
    prompt = catalog.render(invocation.prompt_id, invocation.bindings)
    request = QARequest(
        instruction=catalog.instruction.text,
        prompt=prompt,
        document=document,
        params=params,
        prompt_id=invocation.prompt_id,
        bindings=tuple(sorted(invocation.bindings.items())),
    )
    for attempt in range(1, max_attempts + 1):
        try:
            response = gateway.complete(request)
        except GatewayError as exc:
            error_kind = _classify_gateway_error(exc)
            last_issues = [ValidationIssue("error", "", "backend_error", str(exc))]
            continue
        issues: list[ValidationIssue] = []
        try:
            tree, report = recover_payload(response.raw_text, invocation.prompt_id)
        except RecoveryError as exc:
            error_kind = "invalid_output"
            last_issues = [ValidationIssue("error", "", "json_unrecoverable", str(exc))]
            continue
        except DuplicateAfterNormalizationError as exc:
            error_kind = "invalid_output"
            last_issues = [ValidationIssue("error", "", "duplicate_key", str(exc))]
            continue
        if report.repairs_applied:
            issues.append(
                ValidationIssue(
                    "warning",
                    "",
                    "json_repaired",
                    "raw output repaired: " + ", ".join(report.repairs_applied),
                )
            )
        cleaned, echo_paths = null_placeholder_echoes(tree)
        for path in echo_paths:
            issues.append(
                ValidationIssue(
                    "warning", path, "placeholder_echo", "template placeholder echoed; treated as absent"
                )
            )
        payload, validation_issues = validate_stage_payload(
            invocation.prompt_id, cleaned, invocation.bindings
        )
        issues.extend(validation_issues)
        if payload is None:
            error_kind = "invalid_output"
            last_issues = issues
            continue
        return _StageOutcome(
            status="succeeded",
            attempts=attempt,
            payload=payload,
            issues=issues,
            error_kind=None,
        )
    return _StageOutcome(
        status="failed",
        attempts=max_attempts,
        payload=None,
        issues=last_issues,
        error_kind=error_kind,
    )


def _write_state(run_path: Path, state: RunState) -> None:
    (run_path / STATE_FILENAME).write_text(
        canonical_json(state.to_json_value()), encoding="utf-8"
    )


def _clean_previous_artifacts(run_path: Path) -> None:
    """A fresh run owns its artifacts; recorded transcripts are kept."""
    for name in (STATE_FILENAME, SPEC_FILENAME, ISSUES_FILENAME):
        path = run_path / name
        if path.is_file():
            path.unlink()
    fragments_dir = run_path / FRAGMENTS_DIRNAME
    if fragments_dir.is_dir():
        for path in fragments_dir.glob("*.json"):
            path.unlink()


def _write_fragment(run_path: Path, invocation: StageInvocation, fragment: Fragment) -> str:
    fragments_dir = run_path / FRAGMENTS_DIRNAME
    fragments_dir.mkdir(parents=True, exist_ok=True)
    name = f"{invocation_slug(invocation.prompt_id, invocation.bindings)}.json"
    target = fragments_dir / name
    if target.is_file():
        existing = json.loads(target.read_text(encoding="utf-8"))
        existing_key = (
            existing.get("stage"),
            tuple(sorted(dict(existing.get("bindings", {})).items())),
        )
        if existing_key != invocation.key:
            raise PipelineError(
                f"fragment filename collision at {name}: bindings "
                f"{dict(existing_key[1])} and {invocation.bindings} slugify identically"
            )
    target.write_text(canonical_json(fragment_to_json_value(fragment)), encoding="utf-8")
    return f"{FRAGMENTS_DIRNAME}/{name}"


def _record_skips(state: RunState, by_key: dict) -> None:
    def add_marker(prompt_id: str, bindings: dict[str, str]) -> None:
        key = (prompt_id, tuple(sorted(bindings.items())))
        if key not in by_key:
            marker = StageInvocation(prompt_id=prompt_id, bindings=bindings, status="skipped")
            state.invocations.append(marker)
            by_key[key] = marker

    for parent, child in _SKIP_CHILDREN.items():
        inv = by_key.get((parent, ()))
        if inv is not None and inv.status == "failed":
            add_marker(child, {})
    for invocation in list(state.invocations):
        if invocation.prompt_id == "P3" and invocation.status == "failed":
            add_marker("P4", dict(invocation.bindings))


def _build_params(config: Config) -> GenerationParams:
    if not config.backend.model_name:
        raise ConfigError("backend.model_name must be configured")
    return GenerationParams(
        model_name=config.backend.model_name,
        temperature=config.generation.temperature,
        max_output_tokens=config.generation.max_output_tokens,
    )


def _make_provenance(
    document: Document, gateway: Gateway, params: GenerationParams, clock: Callable[[], str]
) -> Provenance:
    timestamp = None
    if gateway.store is not None:
        timestamp = gateway.store.latest_timestamp()
    return Provenance(
        document_hash=document.content_hash,
        backend_id=params.model_name,
        timestamp=timestamp if timestamp is not None else clock(),
        tool_version=__version__,
    )


def _load_catalog(config: Config, catalog: Optional[PromptCatalog]) -> PromptCatalog:
    if catalog is not None:
        return catalog
    if config.paths.prompt_override_dir:
        return PromptCatalog.with_overrides(config.paths.prompt_override_dir)
    return PromptCatalog.default()


def execute(
    document: Document,
    gateway: Gateway,
    config: Config,
    run_dir: str | Path,
    *,
    catalog: Optional[PromptCatalog] = None,
    clock: Callable[[], str] = rfc3339_now,
) -> tuple[ModelSpecification, RunState]:
    """Run the full extraction workflow into ``run_dir``.

    Raises EmptyDocumentError before any backend call when the document has
    no text; AbortedError in strict mode once a stage exhausts its retries;
    BackendUnavailableError when every static stage failed on transport.
    """
    if not document.text:
        raise EmptyDocumentError("document has no text; nothing to extract")
    config.validate()
    catalog = _load_catalog(config, catalog)
    run_path = Path(run_dir)
    run_path.mkdir(parents=True, exist_ok=True)
    _clean_previous_artifacts(run_path)
    (run_path / DOCUMENT_FILENAME).write_text(document.text, encoding="utf-8")
    state = RunState(
        document_hash=document.content_hash,
        invocations=[],
        config_snapshot=config.to_snapshot(),
        phase="static_stages",
    )
    _write_state(run_path, state)
    return _drive(document, gateway, config, run_path, catalog, clock, state, {})


def resume(
    run_dir: str | Path,
    gateway: Gateway,
    config: Optional[Config] = None,
    *,
    catalog: Optional[PromptCatalog] = None,
    clock: Callable[[], str] = rfc3339_now,
) -> tuple[ModelSpecification, RunState]:
    """Continue an interrupted run: succeeded fragments are reused untouched.

    Raises StaleRunError when the stored document no longer matches the
    persisted hash and CorruptStateError when the run directory is unusable.
    """
    run_path = Path(run_dir)
    state_path = run_path / STATE_FILENAME
    if not state_path.is_file():
        raise CorruptStateError(f"no {STATE_FILENAME} in {run_path}")
    try:
        state = RunState.from_json_value(json.loads(state_path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptStateError(f"unreadable run state: {exc}") from exc
    document_path = run_path / DOCUMENT_FILENAME
    if not document_path.is_file():
        raise CorruptStateError(f"no {DOCUMENT_FILENAME} in {run_path}")
    document = document_from_text(
        document_path.read_text(encoding="utf-8"), source_path=str(document_path)
    )
    if document.content_hash != state.document_hash:
        raise StaleRunError("stored document does not match the run's document hash")
    if config is None:
        config = Config.from_snapshot(state.config_snapshot)
    config.validate()
    catalog = _load_catalog(config, catalog)

    if state.phase == "done":
        spec_path = run_path / SPEC_FILENAME
        if spec_path.is_file():
            try:
                value = json.loads(spec_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise CorruptStateError(f"unreadable specification file: {exc}") from exc
            spec, issues = validate_specification(value)
            if spec is None:
                raise CorruptStateError(
                    "stored specification fails validation: "
                    + "; ".join(i.message for i in issues if i.severity == "error")
                )
            return spec, state

    fragments: FragmentIndex = {}
    for invocation in state.invocations:
        if invocation.status != "succeeded":
            continue
        if not invocation.fragment_file:
            raise CorruptStateError(
                f"succeeded invocation {invocation.prompt_id} has no fragment file"
            )
        fragment_path = run_path / invocation.fragment_file
        if not fragment_path.is_file():
            raise CorruptStateError(f"missing fragment file {invocation.fragment_file}")
        try:
            fragment = fragment_from_json_value(
                json.loads(fragment_path.read_text(encoding="utf-8"))
            )
        except (json.JSONDecodeError, ValueError) as exc:
            raise CorruptStateError(
                f"unreadable fragment {invocation.fragment_file}: {exc}"
            ) from exc
        fragments[invocation.key] = fragment

    # skip markers are derived records; drop them and give failed stages a fresh chance
    state.invocations = [inv for inv in state.invocations if inv.status != "skipped"]
    for invocation in state.invocations:
        if invocation.status == "failed":
            invocation.status = "pending"
            invocation.attempts = 0
            invocation.issues = []
    return _drive(document, gateway, config, run_path, catalog, clock, state, fragments)


def _drive(
    document: Document,
    gateway: Gateway,
    config: Config,
    run_path: Path,
    catalog: PromptCatalog,
    clock: Callable[[], str],
    state: RunState,
    fragments: FragmentIndex,
) -> tuple[ModelSpecification, RunState]:
    params = _build_params(config)
    by_key = {inv.key: inv for inv in state.invocations}
    error_kinds: dict[tuple, Optional[str]] = {}

    while True:
        fresh = [inv for inv in plan(document, fragments) if inv.key not in by_key]
        for invocation in fresh:
            state.invocations.append(invocation)
            by_key[invocation.key] = invocation
        pending = [inv for inv in state.invocations if inv.status == "pending"]
        state.phase = (
            "static_stages"
            if any(inv.prompt_id in STATIC_STAGES for inv in pending)
            else "fanout_stages"
        )
        _write_state(run_path, state)
        if not pending:
            break

        hard_failures: list[BaseException] = []
        with ThreadPoolExecutor(max_workers=config.pipeline.parallelism) as pool:
            futures = {
                pool.submit(_run_stage, inv, document, gateway, catalog, params, config): inv
                for inv in pending
            }
            for future in as_completed(futures):
                invocation = futures[future]
                try:
                    outcome = future.result()
                except BaseException as exc:  # noqa: BLE001 - preserved and re-raised below
                    hard_failures.append(exc)
                    continue
                invocation.attempts = outcome.attempts
                invocation.issues = outcome.issues
                error_kinds[invocation.key] = outcome.error_kind
                if outcome.status == "succeeded":
                    fragment = make_fragment(
                        invocation.prompt_id, invocation.bindings, outcome.payload
                    )
                    invocation.fragment_file = _write_fragment(run_path, invocation, fragment)
                    invocation.status = "succeeded"
                    fragments[invocation.key] = fragment
                else:
                    invocation.status = "failed"
                _write_state(run_path, state)
        if hard_failures:
            _write_state(run_path, state)
            raise hard_failures[0]

        static = [by_key.get((pid, ())) for pid in STATIC_STAGES]
        if all(inv is not None and inv.status == "failed" for inv in static) and all(
            error_kinds.get(inv.key) == "transport" for inv in static
        ):
            raise BackendUnavailableError("every static stage failed on transport")

        if config.pipeline.strict and any(
            inv.status == "failed" for inv in state.invocations
        ):
            _record_skips(state, by_key)
            _write_state(run_path, state)
            failed = [inv.prompt_id for inv in state.invocations if inv.status == "failed"]
            raise AbortedError(f"strict mode: stages exhausted retries: {', '.join(failed)}")

    _record_skips(state, by_key)
    state.phase = "merging"
    _write_state(run_path, state)

    provenance = _make_provenance(document, gateway, params, clock)
    ordered = [fragments[key] for key in sorted(fragments)]
    spec, merge_issues = merge(ordered, provenance=provenance)
    lint_issues = lint(spec)

    (run_path / SPEC_FILENAME).write_text(spec_to_canonical_json(spec), encoding="utf-8")
    (run_path / ISSUES_FILENAME).write_text(
        canonical_json(_issues_json(state, merge_issues, lint_issues)), encoding="utf-8"
    )
    state.phase = "done"
    _write_state(run_path, state)
    return spec, state


def _issues_json(
    state: RunState,
    merge_issues: list[ValidationIssue],
    lint_issues: list[ValidationIssue],
) -> list[dict]:
    entries: list[dict] = []
    for invocation in state.invocations:
        source = invocation_slug(invocation.prompt_id, invocation.bindings)
        for issue in invocation.issues:
            entries.append({"source": source, **issue.to_json_value()})
    for issue in merge_issues:
        entries.append({"source": "merge", **issue.to_json_value()})
    for issue in lint_issues:
        entries.append({"source": "lint", **issue.to_json_value()})
    return entries


def summarize_state(state: RunState) -> dict[str, int]:
    counts = {"succeeded": 0, "failed": 0, "skipped": 0, "pending": 0}
    for invocation in state.invocations:
        counts[invocation.status] = counts.get(invocation.status, 0) + 1
    return counts
