"""Loading and normalization of the conceptual model document.

Every prompt stage attaches the same document text, so the pipeline depends
on the text and its hash being stable: line endings are normalized to LF and
the hash is computed over the normalized text only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

DEFAULT_MAX_BYTES = 2 * 1024 * 1024


class DocumentError(Exception):
    """Base class for document loading failures."""


class DocumentNotFoundError(DocumentError):
    pass


class DocumentTooLargeError(DocumentError):
    pass


class DocumentEncodingError(DocumentError):
    pass


@dataclass(frozen=True)
class Document:
    source_path: str
    text: str
    byte_length: int
    content_hash: str


def normalize_text(raw: str) -> str:
    """Normalize CRLF and lone CR line endings to LF."""
    return raw.replace("\r\n", "\n").replace("\r", "\n")


def content_hash(text: str) -> str:
    """Stable digest of normalized document text (path and mtime play no part)."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def document_from_text(text: str, source_path: str = "<memory>") -> Document:
    """Build a Document from already-loaded text (used by resume and tests)."""
    normalized = normalize_text(text)
    return Document(
        source_path=source_path,
        text=normalized,
        byte_length=len(text.encode("utf-8")),
        content_hash=content_hash(normalized),
    )


def load_document(path: str | Path, max_bytes: int = DEFAULT_MAX_BYTES) -> Document:
    """Read a UTF-8 text file (BOM tolerated) and return the normalized Document.

    Raises DocumentNotFoundError, DocumentTooLargeError, or
    DocumentEncodingError.
    """
    p = Path(path)
    if not p.is_file():
        raise DocumentNotFoundError(f"document not found: {p}")
    data = p.read_bytes()
    if len(data) > max_bytes:
        raise DocumentTooLargeError(
            f"{p} is {len(data)} bytes; the configured limit is {max_bytes}"
        )
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise DocumentEncodingError(f"{p} is not decodable as UTF-8: {exc}") from exc
    normalized = normalize_text(text)
    return Document(
        source_path=str(p),
        text=normalized,
        byte_length=len(data),
        content_hash=content_hash(normalized),
    )
