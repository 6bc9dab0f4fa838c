"""Backend gateway: send (instruction, prompt, document) triples to a QA model.

The document text is inlined into the user message as a delimited context
block, so any chat-completion-style HTTP backend works without file-upload
support.  Every call can be recorded as a transcript line, and a recorded
run can be replayed byte-for-byte with zero network activity.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path
from typing import Callable, Optional

import requests

from .document import Document

DOCUMENT_START = "--- DOCUMENT START ---"
DOCUMENT_END = "--- DOCUMENT END ---"

TRANSCRIPT_FILENAME = "transcripts.jsonl"


class GatewayError(Exception):
    """Base class for backend failures."""


class TransportError(GatewayError):
    pass


class RateLimitedError(GatewayError):
    def __init__(self, message: str, retry_after: Optional[float] = None):
        super().__init__(message)
        self.retry_after = retry_after


class AuthError(GatewayError):
    pass


class BackendRefusalError(GatewayError):
    pass


class ReplayMissError(GatewayError):
    pass


class MissingTranscriptError(GatewayError):
    pass


class CorruptTranscriptError(GatewayError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    model_name: str
    temperature: float = 0.0
    max_output_tokens: int = 1024


@dataclass(frozen=True)
class QARequest:
    instruction: str
    prompt: str
    document: Document
    params: GenerationParams
    prompt_id: str
    bindings: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class QAResponse:
    raw_text: str
    latency: float
    attempt_count: int
    backend_id: str


@dataclass(frozen=True)
class QATranscript:
    request_key: str
    prompt_id: str
    bindings: dict[str, str]
    document_hash: str
    params: GenerationParams
    raw_text: str
    latency_ms: int
    attempts: int
    timestamp: str

    def to_json_value(self) -> dict:
        return {
            "request_key": self.request_key,
            "prompt_id": self.prompt_id,
            "bindings": dict(sorted(self.bindings.items())),
            "document_hash": self.document_hash,
            "params": {
                "model_name": self.params.model_name,
                "temperature": self.params.temperature,
                "max_output_tokens": self.params.max_output_tokens,
            },
            "raw_text": self.raw_text,
            "latency_ms": self.latency_ms,
            "attempts": self.attempts,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json_value(cls, value: dict) -> "QATranscript":
        params = value["params"]
        return cls(
            request_key=value["request_key"],
            prompt_id=value["prompt_id"],
            bindings=dict(value["bindings"]),
            document_hash=value["document_hash"],
            params=GenerationParams(
                model_name=params["model_name"],
                temperature=params["temperature"],
                max_output_tokens=params["max_output_tokens"],
            ),
            raw_text=value["raw_text"],
            latency_ms=value["latency_ms"],
            attempts=value["attempts"],
            timestamp=value["timestamp"],
        )


def request_key(
    prompt_id: str,
    bindings: dict[str, str] | tuple[tuple[str, str], ...],
    document_hash: str,
    params: GenerationParams,
) -> str:
    """Pure digest of the request identity; wall-clock time plays no part."""
    material = json.dumps(
        {
            "prompt_id": prompt_id,
            "bindings": dict(sorted(dict(bindings).items())),
            "document_hash": document_hash,
            "params": {
                "model_name": params.model_name,
                "temperature": params.temperature,
                "max_output_tokens": params.max_output_tokens,
            },
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return sha256(material.encode("utf-8")).hexdigest()


def rfc3339_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def build_user_message(document_text: str, prompt: str) -> str:
    """The wire form of the 'attachment': a delimited context block, then the prompt."""
    return f"{DOCUMENT_START}\n{document_text}\n{DOCUMENT_END}\n\n{prompt}"


# --- transcript store -------------------------------------------------------------


class TranscriptStore:
    """Newline-delimited JSON record of backend calls under a run directory.

    ``record`` appends; ``replay`` loads an index of request_key to response;
    ``off`` is inert.  Appends are serialized internally.
    """

    def __init__(self, run_dir: str | Path, mode: str):
        if mode not in ("record", "replay", "off"):
            raise ValueError(f"unknown transcript mode: {mode}")
        self.mode = mode
        self.path = Path(run_dir) / TRANSCRIPT_FILENAME
        self._lock = threading.Lock()
        self._index: dict[str, QATranscript] = {}
        if mode == "record":
            self.path.parent.mkdir(parents=True, exist_ok=True)
        elif mode == "replay":
            if not self.path.is_file():
                raise MissingTranscriptError(f"no transcript file at {self.path}")
            self._load()

    def _load(self) -> None:
        for line_number, line in enumerate(
            self.path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                record = QATranscript.from_json_value(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorruptTranscriptError(
                    f"{self.path}:{line_number}: undecodable transcript line: {exc}"
                ) from exc
            self._index[record.request_key] = record

    def append(self, transcript: QATranscript) -> None:
        if self.mode != "record":
            return
        line = json.dumps(transcript.to_json_value(), ensure_ascii=False)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")
            self._index[transcript.request_key] = transcript

    def lookup(self, key: str) -> QATranscript:
        try:
            return self._index[key]
        except KeyError:
            raise ReplayMissError(f"no recorded response for request key {key}") from None

    def latest_timestamp(self) -> Optional[str]:
        if not self._index:
            return None
        return max(record.timestamp for record in self._index.values())

    def __len__(self) -> int:
        return len(self._index)


def open_transcript_store(run_dir: str | Path, mode: str) -> TranscriptStore:
    return TranscriptStore(run_dir, mode)


# --- backends ----------------------------------------------------------------------


class QABackend:
    """A transport that turns a QARequest into raw model text."""

    backend_id = "abstract"

    def send(self, request: QARequest) -> str:  # pragma: no cover - interface
        raise NotImplementedError


class ScriptedBackend(QABackend):
    """Identity lookup over canned responses, keyed by (prompt id, bindings).

    When ``document_hash`` is given, requests for any other document fail.
    Used for tests and golden runs; counts every send.
    """

    backend_id = "scripted"

    def __init__(
        self,
        responses: dict[tuple[str, tuple[tuple[str, str], ...]], str],
        document_hash: Optional[str] = None,
    ):
        self._responses = dict(responses)
        self._document_hash = document_hash
        self.calls = 0
        self._lock = threading.Lock()

    def send(self, request: QARequest) -> str:
        with self._lock:
            self.calls += 1
        if self._document_hash is not None and request.document.content_hash != self._document_hash:
            raise TransportError("scripted backend keyed to a different document")
        key = (request.prompt_id, tuple(sorted(request.bindings)))
        try:
            return self._responses[key]
        except KeyError:
            raise TransportError(
                f"no scripted response for {request.prompt_id} {dict(request.bindings)}"
            ) from None


class FlakyBackend(QABackend):
    """Wrapper that fails the first ``failures`` sends with TransportError."""

    def __init__(self, inner: QABackend, failures: int):
        self._inner = inner
        self._remaining = failures
        self.backend_id = inner.backend_id

    def send(self, request: QARequest) -> str:
        if self._remaining > 0:
            self._remaining -= 1
            raise TransportError("injected transport failure")
        return self._inner.send(request)


class HttpBackend(QABackend):
    """Minimal chat-completion-style HTTP JSON backend.

    The system message carries the instruction; the user message carries the
    delimited document block followed by the prompt.
    """

    def __init__(
        self,
        url: str,
        credential: Optional[str] = None,
        timeout: float = 120.0,
        session: Optional[requests.Session] = None,
    ):
        self.url = url
        self.backend_id = url
        self._credential = credential
        self._timeout = timeout
        self._session = session or requests.Session()

    def send(self, request: QARequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self._credential:
            headers["Authorization"] = f"Bearer {self._credential}"
        body = {
            "model": request.params.model_name,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
            "messages": [
                {"role": "system", "content": request.instruction},
                {
                    "role": "user",
                    "content": build_user_message(request.document.text, request.prompt),
                },
            ],
        }
        try:
            response = self._session.post(
                self.url, json=body, headers=headers, timeout=self._timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthError(f"backend rejected credentials (HTTP {response.status_code})")
        if response.status_code == 429:
            retry_after = response.headers.get("Retry-After")
            raise RateLimitedError(
                "backend rate limited the request",
                retry_after=float(retry_after) if retry_after else None,
            )
        if response.status_code >= 500:
            raise TransportError(f"backend error (HTTP {response.status_code})")
        if response.status_code >= 400:
            raise BackendRefusalError(
                f"backend refused the request (HTTP {response.status_code}): "
                f"{response.text[:500]}"
            )
        try:
            data = response.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed backend response: {exc}") from exc


# --- gateway -----------------------------------------------------------------------


class Gateway:
    """Retry, record/replay, and concurrency bounds around a backend.

    Transport and rate-limit errors are retried with exponential backoff up
    to ``max_retries``; auth failures and content refusals are not.  An
    in-flight semaphore caps parallel fan-out calls.
    """

    def __init__(
        self,
        backend: Optional[QABackend] = None,
        store: Optional[TranscriptStore] = None,
        *,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        parallelism: int = 4,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], str] = rfc3339_now,
    ):
        if backend is None and (store is None or store.mode != "replay"):
            raise ValueError("a backend is required unless replaying a transcript store")
        self.backend = backend
        self.store = store
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._clock = clock
        self._semaphore = threading.Semaphore(max(1, parallelism))

    @property
    def replaying(self) -> bool:
        return self.store is not None and self.store.mode == "replay"

    def complete(self, request: QARequest) -> QAResponse:
        """Send one request and return the raw text exactly as received."""
        if not request.document.text:
            raise ValueError("document text must be non-empty")
        key = request_key(
            request.prompt_id, request.bindings, request.document.content_hash, request.params
        )
        if self.replaying:
            record = self.store.lookup(key)
            return QAResponse(
                raw_text=record.raw_text,
                latency=record.latency_ms / 1000.0,
                attempt_count=1,
                backend_id="replay",
            )

        with self._semaphore:
            attempt = 0
            delay = self.backoff_base
            while True:
                attempt += 1
                started = time.perf_counter()
                try:
                    raw_text = self.backend.send(request)
                    break
                except RateLimitedError as exc:
                    if attempt > self.max_retries:
                        raise
                    self._sleep(exc.retry_after if exc.retry_after is not None else delay)
                    delay *= 2
                except TransportError:
                    if attempt > self.max_retries:
                        raise
                    self._sleep(delay)
                    delay *= 2
            latency = time.perf_counter() - started

        response = QAResponse(
            raw_text=raw_text,
            latency=latency,
            attempt_count=attempt,
            backend_id=self.backend.backend_id,
        )
        if self.store is not None and self.store.mode == "record":
            self.store.append(
                QATranscript(
                    request_key=key,
                    prompt_id=request.prompt_id,
                    bindings=dict(request.bindings),
                    document_hash=request.document.content_hash,
                    params=request.params,
                    raw_text=raw_text,
                    latency_ms=int(latency * 1000),
                    attempts=attempt,
                    timestamp=self._clock(),
                )
            )
        return response
