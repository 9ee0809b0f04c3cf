"""Multi-modal graph retrieval: a unified image-text graph, PCST sub-graph
refinement and bidirectional text/image retrieval, with an evaluation kit."""

from .corpus import Corpus, Document, ImageAsset, Section, chunk_corpus, chunk_text, load_corpus, paginate
from .embedding import Embedder, EmbeddingVector, HashEmbedder, cosine, seeded_embedder, top_k_similar
from .extraction import FallbackExtractor, FixtureExtractor, Triplet, extract_document_triplets, extract_query_entities
from .generation import PromptConfig, build_prompt, generate_answer
from .graph import GraphBuildConfig, LinkKind, MMGraph, build_graph, components
from .pcst import PCSTConfig, solve_pcst, solve_pcst_exact
from .retrieval import Providers, RetrievalConfig, RetrievedContext, baseline_retrieve, retrieve

__version__ = "0.1.0"

__all__ = [
    "Corpus", "Document", "ImageAsset", "Section", "chunk_corpus", "chunk_text", "load_corpus", "paginate",
    "Embedder", "EmbeddingVector", "HashEmbedder", "cosine", "seeded_embedder", "top_k_similar",
    "FallbackExtractor", "FixtureExtractor", "Triplet", "extract_document_triplets", "extract_query_entities",
    "PromptConfig", "build_prompt", "generate_answer",
    "GraphBuildConfig", "LinkKind", "MMGraph", "build_graph", "components",
    "PCSTConfig", "solve_pcst", "solve_pcst_exact",
    "Providers", "RetrievalConfig", "RetrievedContext", "baseline_retrieve", "retrieve",
]
