from __future__ import annotations

from pathlib import Path

import pytest

from cueval.embed import HashEmbeddingProvider
from cueval.taxonomy import load_taxonomy

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def mini_taxonomy_path() -> Path:
    return FIXTURES / "mini_taxonomy.json"


@pytest.fixture(scope="session")
def tree(mini_taxonomy_path):
    return load_taxonomy(mini_taxonomy_path)


@pytest.fixture()
def provider():
    return HashEmbeddingProvider(256)
