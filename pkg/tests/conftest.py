from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import corpus  # noqa: E402
from abmspec.config import load_config  # noqa: E402
from abmspec.gateway import Gateway  # noqa: E402


@pytest.fixture(scope="session")
def golden_document():
    return corpus.load_golden_document()


@pytest.fixture(scope="session")
def golden_config():
    return load_config(corpus.CONFIG_PATH)


@pytest.fixture()
def scripted_gateway(golden_document):
    """Gateway over the canned golden responses; no store, no sleeping."""
    backend = corpus.scripted_backend(golden_document)
    gateway = Gateway(backend, parallelism=1, sleep=lambda _: None)
    gateway.scripted = backend  # test handle for call counting
    return gateway
