"""Command-line front door: extract, validate, scaffold, prompts.

Exit codes are a stable contract: 0 full success, 2 partial extraction
(some stages failed, non-strict), 1 abort or runtime error, 64 usage
errors, 65 unreadable/undecodable input files, 78 configuration errors.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import click

from . import __version__
from .config import Config, ConfigError, default_config, load_config
from .document import DocumentError, load_document
from .gateway import Gateway, HttpBackend, MissingTranscriptError, open_transcript_store
from .pipeline import (
    ISSUES_FILENAME,
    SPEC_FILENAME,
    STATE_FILENAME,
    AbortedError,
    PipelineError,
    execute,
    summarize_state,
)
from .prompts import PromptCatalog, PromptCatalogError, UnknownTemplateError
from .scaffold import build_schedule, emit_skeleton
from .schema import canonical_json, lint, validate_specification

EX_OK = 0
EX_ERROR = 1
EX_PARTIAL = 2
EX_USAGE = 64
EX_DATAERR = 65
EX_CONFIG = 78


@dataclass
class CliOptions:
    config_path: Optional[str] = None
    run_dir: Optional[str] = None
    quiet: bool = False


def _err(message: str) -> None:
    click.echo(f"abmspec: {message}", err=True)


@click.group()
@click.version_option(version=__version__, prog_name="abmspec")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Path to the TOML configuration file.")
@click.option("--run-dir", "run_dir", type=click.Path(file_okay=False), default=None,
              help="Run directory for extraction artifacts.")
@click.option("--quiet", is_flag=True, help="Suppress the summary line.")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], run_dir: Optional[str], quiet: bool) -> None:
    """Extract agent-based-model specifications from conceptual documents."""
    ctx.obj = CliOptions(config_path=config_path, run_dir=run_dir, quiet=quiet)


def _load_cli_config(options: CliOptions, replay: bool, run_path: Optional[Path]) -> Config:
    if options.config_path:
        return load_config(options.config_path)
    if replay and run_path is not None:
        state_path = run_path / STATE_FILENAME
        if state_path.is_file():
            try:
                snapshot = json.loads(state_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"cannot reuse config from {state_path}: {exc}") from exc
            return Config.from_snapshot(snapshot.get("config_snapshot", {}))
    return default_config()


def _catalog_from(config: Config) -> PromptCatalog:
    if config.paths.prompt_override_dir:
        return PromptCatalog.with_overrides(config.paths.prompt_override_dir)
    return PromptCatalog.default()


@cli.command()
@click.argument("document_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--replay", is_flag=True, help="Serve responses from the run directory's transcripts.")
@click.option("--record", is_flag=True, help="Record every backend call to transcripts.jsonl.")
@click.option("--strict", is_flag=True, help="Abort the run when any stage exhausts its retries.")
@click.pass_obj
def extract(options: CliOptions, document_path: str, replay: bool, record: bool, strict: bool) -> int:
    """Run the nine-stage extraction pipeline over DOCUMENT_PATH."""
    if replay and record:
        raise click.UsageError("--replay and --record are mutually exclusive")
    if not options.run_dir:
        raise click.UsageError("--run-dir is required for extract")
    run_path = Path(options.run_dir)

    try:
        config = _load_cli_config(options, replay, run_path)
        if strict:
            config = replace(config, pipeline=replace(config.pipeline, strict=True))
        config.validate()
        if not config.backend.model_name:
            raise ConfigError("backend.model_name must be configured")
        if not replay and not config.backend.url:
            raise ConfigError("backend.url must be configured for live extraction")
    except ConfigError as exc:
        _err(str(exc))
        return EX_CONFIG

    try:
        document = load_document(document_path)
    except DocumentError as exc:
        _err(str(exc))
        return EX_DATAERR

    try:
        if replay:
            store = open_transcript_store(run_path, "replay")
            gateway = Gateway(store=store)
        else:
            credential = None
            if config.backend.credential_env_var:
                credential = os.environ.get(config.backend.credential_env_var)
            backend = HttpBackend(config.backend.url, credential=credential)
            store = open_transcript_store(run_path, "record") if record else None
            gateway = Gateway(
                backend,
                store,
                max_retries=config.backend.max_retries,
                parallelism=config.pipeline.parallelism,
            )
    except MissingTranscriptError as exc:
        _err(str(exc))
        return EX_ERROR

    try:
        catalog = _catalog_from(config)
        spec, state = execute(document, gateway, config, run_path, catalog=catalog)
    except AbortedError as exc:
        _err(str(exc))
        return EX_ERROR
    except (PipelineError, PromptCatalogError) as exc:
        _err(str(exc))
        return EX_ERROR

    counts = summarize_state(state)
    errors = warnings = 0
    issues_path = run_path / ISSUES_FILENAME
    if issues_path.is_file():
        for issue in json.loads(issues_path.read_text(encoding="utf-8")):
            if issue.get("severity") == "error":
                errors += 1
            else:
                warnings += 1
    if not options.quiet:
        click.echo(
            f"extract: {counts['succeeded']} succeeded, {counts['failed']} failed, "
            f"{counts['skipped']} skipped; {errors} errors, {warnings} warnings; "
            f"wrote {run_path / SPEC_FILENAME}"
        )
    return EX_OK if counts["failed"] == 0 else EX_PARTIAL


def _read_spec_file(spec_path: str) -> tuple[Optional[dict], Optional[str]]:
    path = Path(spec_path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        return None, f"cannot read {path}: {exc}"
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, f"cannot decode {path} as JSON: {exc}"
    return value, None


@cli.command()
@click.argument("spec_path", type=click.Path(dir_okay=False))
@click.pass_obj
def validate(options: CliOptions, spec_path: str) -> int:
    """Re-validate and lint a specification file."""
    value, failure = _read_spec_file(spec_path)
    if failure is not None:
        _err(failure)
        return EX_DATAERR
    spec, issues = validate_specification(value)
    if spec is not None:
        issues = issues + lint(spec)
    issues_path = Path(spec_path).parent / ISSUES_FILENAME
    issues_path.write_text(
        canonical_json([issue.to_json_value() for issue in issues]), encoding="utf-8"
    )
    for issue in issues:
        click.echo(f"{issue.severity}: /{issue.path} [{issue.code}] {issue.message}")
    error_count = sum(1 for issue in issues if issue.severity == "error")
    if not options.quiet:
        click.echo(
            f"validate: {error_count} errors, {len(issues) - error_count} warnings; "
            f"issues written to {issues_path}"
        )
    return EX_OK if error_count == 0 else EX_ERROR


@cli.command()
@click.argument("spec_path", type=click.Path(dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.pass_obj
def scaffold(options: CliOptions, spec_path: str, out_dir: str) -> int:
    """Derive schedule.json and skeleton.txt from a validated specification."""
    value, failure = _read_spec_file(spec_path)
    if failure is not None:
        _err(failure)
        return EX_DATAERR
    spec, issues = validate_specification(value)
    error_count = sum(1 for issue in issues if issue.severity == "error")
    if spec is None or error_count:
        for issue in issues:
            if issue.severity == "error":
                click.echo(f"error: /{issue.path} [{issue.code}] {issue.message}", err=True)
        _err("specification fails validation; nothing written")
        return EX_ERROR
    schedule = build_schedule(spec)
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    (out_path / "schedule.json").write_text(
        canonical_json(schedule.to_json_value()), encoding="utf-8"
    )
    (out_path / "skeleton.txt").write_text(emit_skeleton(spec, schedule), encoding="utf-8")
    if not options.quiet:
        click.echo(
            f"scaffold: {len(schedule)} scheduled updates "
            f"({len(schedule.setup)} setup, {len(schedule.tick)} tick, "
            f"{len(schedule.conditional)} conditional); wrote {out_path}"
        )
    return EX_OK


@cli.group()
def prompts() -> None:
    """Inspect and render the extraction prompts."""


def _prompts_catalog(options: CliOptions) -> PromptCatalog:
    config = load_config(options.config_path) if options.config_path else default_config()
    return _catalog_from(config)


@prompts.command("list")
@click.pass_obj
def prompts_list(options: CliOptions) -> int:
    """List prompt ids, themes, placeholders, and fan-out wiring."""
    catalog = _prompts_catalog(options)
    for stage in catalog.list_stages():
        template = catalog.get(stage.prompt_id)
        placeholders = ", ".join(sorted(template.placeholders)) or "-"
        fan_out = stage.fan_out_source or "-"
        click.echo(
            f"{template.id}  {template.theme:<14} placeholders: {placeholders:<24} "
            f"fan-out: {fan_out}"
        )
    return EX_OK


@prompts.command("show")
@click.argument("prompt_id")
@click.pass_obj
def prompts_show(options: CliOptions, prompt_id: str) -> int:
    """Print a prompt body verbatim."""
    catalog = _prompts_catalog(options)
    try:
        template = catalog.get(prompt_id)
    except UnknownTemplateError as exc:
        raise click.UsageError(str(exc)) from exc
    click.echo(template.body)
    return EX_OK


@prompts.command("render")
@click.argument("prompt_id")
@click.option("--bind", "binds", multiple=True, metavar="NAME=VALUE",
              help="Placeholder binding; repeat for multiple placeholders.")
@click.pass_obj
def prompts_render(options: CliOptions, prompt_id: str, binds: tuple[str, ...]) -> int:
    """Render a prompt with placeholder bindings."""
    catalog = _prompts_catalog(options)
    bindings: dict[str, str] = {}
    for bind in binds:
        name, separator, value = bind.partition("=")
        if not separator or not name:
            raise click.UsageError(f"--bind expects NAME=VALUE, got {bind!r}")
        bindings[name] = value
    try:
        rendered = catalog.render(prompt_id, bindings)
    except PromptCatalogError as exc:
        raise click.UsageError(str(exc)) from exc
    click.echo(rendered)
    return EX_OK


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point with the stable exit-code mapping."""
    try:
        result = cli.main(args=argv, prog_name="abmspec", standalone_mode=False)
    except click.UsageError as exc:
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        click.echo(f"abmspec: {exc.format_message()}", err=True)
        return EX_USAGE
    except click.ClickException as exc:
        exc.show()
        return EX_ERROR
    except click.exceptions.Exit as exc:  # raised by --version/--help
        return exc.exit_code
    except click.exceptions.Abort:
        return EX_ERROR
    return result if isinstance(result, int) else EX_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
