from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from abmspec.document import (
    DocumentEncodingError,
    DocumentNotFoundError,
    DocumentTooLargeError,
    content_hash,
    document_from_text,
    load_document,
    normalize_text,
)


def test_empty_file(tmp_path: Path):
    path = tmp_path / "empty.md"
    path.write_bytes(b"")
    doc = load_document(path)
    assert doc.text == ""
    assert doc.byte_length == 0


def test_crlf_normalized(tmp_path: Path):
    path = tmp_path / "doc.md"
    path.write_bytes(b"a\r\nb")
    doc = load_document(path)
    assert doc.text == "a\nb"
    assert "\r" not in doc.text


def test_lone_cr_normalized(tmp_path: Path):
    path = tmp_path / "doc.md"
    path.write_bytes(b"a\rb\r\nc")
    assert load_document(path).text == "a\nb\nc"


def test_hash_stable_across_loads(tmp_path: Path):
    path = tmp_path / "doc.md"
    path.write_text("wolves eat sheep\n", encoding="utf-8")
    first = load_document(path)
    second = load_document(path)
    assert first == second
    assert first.content_hash == second.content_hash


def test_hash_independent_of_path(tmp_path: Path):
    a = tmp_path / "a.md"
    b = tmp_path / "sub" / "b.md"
    b.parent.mkdir()
    a.write_text("same content", encoding="utf-8")
    b.write_text("same content", encoding="utf-8")
    assert load_document(a).content_hash == load_document(b).content_hash


def test_hash_depends_only_on_normalized_text(tmp_path: Path):
    crlf = tmp_path / "crlf.md"
    lf = tmp_path / "lf.md"
    crlf.write_bytes(b"line one\r\nline two\r\n")
    lf.write_bytes(b"line one\nline two\n")
    assert load_document(crlf).content_hash == load_document(lf).content_hash


def test_bom_stripped(tmp_path: Path):
    path = tmp_path / "bom.md"
    path.write_bytes(b"\xef\xbb\xbfhello")
    doc = load_document(path)
    assert doc.text == "hello"
    # hash is over the stripped text
    assert doc.content_hash == content_hash("hello")


def test_missing_file(tmp_path: Path):
    with pytest.raises(DocumentNotFoundError):
        load_document(tmp_path / "nope.md")


def test_too_large(tmp_path: Path):
    path = tmp_path / "big.md"
    path.write_bytes(b"x" * 100)
    with pytest.raises(DocumentTooLargeError):
        load_document(path, max_bytes=99)
    assert load_document(path, max_bytes=100).byte_length == 100


def test_invalid_encoding(tmp_path: Path):
    path = tmp_path / "bin.md"
    path.write_bytes(b"\xff\xfe\x00garbage\xff")
    with pytest.raises(DocumentEncodingError):
        load_document(path)


@given(st.text())
def test_normalize_removes_all_carriage_returns(text: str):
    assert "\r" not in normalize_text(text)


@given(st.text())
def test_hash_matches_document_from_text(text: str):
    doc = document_from_text(text)
    assert doc.content_hash == content_hash(doc.text)
    assert doc == document_from_text(text)
