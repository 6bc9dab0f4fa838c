"""Operator configuration: a flat TOML file with four sections.

Credentials are never stored in config or run directories; only the *name*
of the environment variable holding them is.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class BackendConfig:
    url: str | None = None
    model_name: str | None = None
    credential_env_var: str | None = None
    max_retries: int = 3  # transport-level retries per backend call


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.0
    max_output_tokens: int = 1024


@dataclass(frozen=True)
class PipelineConfig:
    max_stage_retries: int = 2
    parallelism: int = 4
    strict: bool = False


@dataclass(frozen=True)
class PathsConfig:
    prompt_override_dir: str | None = None


@dataclass(frozen=True)
class Config:
    backend: BackendConfig = field(default_factory=BackendConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> None:
        if self.generation.temperature < 0:
            raise ConfigError("generation.temperature must be >= 0")
        if self.generation.max_output_tokens < 1:
            raise ConfigError("generation.max_output_tokens must be >= 1")
        if self.backend.max_retries < 0:
            raise ConfigError("backend.max_retries must be >= 0")
        if self.pipeline.parallelism < 1:
            raise ConfigError("pipeline.parallelism must be >= 1")
        if self.pipeline.max_stage_retries < 0:
            raise ConfigError("pipeline.max_stage_retries must be >= 0")

    def to_snapshot(self) -> dict:
        """Serializable view for the run state; never includes the credential value."""
        return {
            "backend": {
                "url": self.backend.url,
                "model_name": self.backend.model_name,
                "credential_env_var": self.backend.credential_env_var,
                "max_retries": self.backend.max_retries,
            },
            "generation": {
                "temperature": self.generation.temperature,
                "max_output_tokens": self.generation.max_output_tokens,
            },
            "pipeline": {
                "max_stage_retries": self.pipeline.max_stage_retries,
                "parallelism": self.pipeline.parallelism,
                "strict": self.pipeline.strict,
            },
            "paths": {"prompt_override_dir": self.paths.prompt_override_dir},
        }

    @classmethod
    def from_snapshot(cls, value: dict) -> "Config":
        try:
            return _from_sections(value)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config snapshot: {exc}") from exc


def _from_sections(sections: dict) -> Config:
    backend = sections.get("backend", {})
    generation = sections.get("generation", {})
    pipeline = sections.get("pipeline", {})
    paths = sections.get("paths", {})
    known = {"backend", "generation", "pipeline", "paths"}
    unknown = set(sections) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    config = Config(
        backend=BackendConfig(
            url=backend.get("url"),
            model_name=backend.get("model_name"),
            credential_env_var=backend.get("credential_env_var"),
            max_retries=int(backend.get("max_retries", 3)),
        ),
        generation=GenerationConfig(
            temperature=float(generation.get("temperature", 0.0)),
            max_output_tokens=int(generation.get("max_output_tokens", 1024)),
        ),
        pipeline=PipelineConfig(
            max_stage_retries=int(pipeline.get("max_stage_retries", 2)),
            parallelism=int(pipeline.get("parallelism", 4)),
            strict=bool(pipeline.get("strict", False)),
        ),
        paths=PathsConfig(prompt_override_dir=paths.get("prompt_override_dir")),
    )
    config.validate()
    return config


def load_config(path: str | Path) -> Config:
    p = Path(path)
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config file {p}: {exc}") from exc
    try:
        return _from_sections(data)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config value in {p}: {exc}") from exc


def default_config() -> Config:
    return Config()
