from __future__ import annotations

from pathlib import Path

import pytest

from mmgraphrag.corpus import load_corpus
from mmgraphrag.embedding import seeded_embedder
from mmgraphrag.evalkit import load_testset
from mmgraphrag.extraction import FallbackExtractor, extract_document_triplets
from mmgraphrag.graph import GraphBuildConfig, LinkKind, build_graph
from mmgraphrag.retrieval import Providers

FIXTURES = Path(__file__).parent / "fixtures"
FULL = frozenset({LinkKind.CA, LinkKind.LS, LinkKind.SI})


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def embedder():
    return seeded_embedder(0)


@pytest.fixture(scope="session")
def extractor():
    return FallbackExtractor()


@pytest.fixture(scope="session")
def providers(extractor, embedder):
    return Providers(extractor, embedder)


def corpus_triplets(corpus, extractor):
    return [t for doc in corpus.documents for t in extract_document_triplets(doc, extractor)]


@pytest.fixture(scope="session")
def mini_corpus():
    return load_corpus(FIXTURES / "mini_corpus.json")


@pytest.fixture(scope="session")
def fixture_corpus():
    return load_corpus(FIXTURES / "corpus.json")


@pytest.fixture(scope="session")
def fixture_questions():
    return load_testset(FIXTURES / "testset.jsonl")


@pytest.fixture(scope="session")
def fixture_graph(fixture_corpus, extractor, embedder):
    """The shipped corpus built with caption, section and similarity links."""
    triplets = corpus_triplets(fixture_corpus, extractor)
    return build_graph(fixture_corpus, triplets, GraphBuildConfig(link_kinds=FULL), embedder, extractor)
