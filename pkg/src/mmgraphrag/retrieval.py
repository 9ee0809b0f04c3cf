"""Query-time retrieval over the multi-modal graph.

The pipeline:

1. extract named entities from the query (whole query as a pseudo-entity when
   none are found) and embed them;
2. keep the components whose best node/entity cosine exceeds the threshold;
3. refine each kept component with a prize-collecting Steiner tree;
4. text-to-image: among images linked to the retrieved nodes, take the one whose
   linked node is most relevant to the query;
5. image-to-text: take the top-k images by query/image cosine and collect the
   texts of the nodes linked to them.

Every step is logged to a trace; :func:`replay_trace` rebuilds the context
from the trace alone and :func:`verify_trace` checks each item is justified.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .corpus import TextChunk
from .embedding import Embedder, EmbeddingVector, cosine, top_k_similar
from .extraction import EntityMention, ExtractionProvider, Triplet, extract_query_entities
from .graph import LINK_ORDER, Component, ImageNode, LinkKind, MMGraph, format_link_kinds
from .pcst import PCSTConfig, PCSTSolution, assign_prizes, relevance, solve_pcst

SIMILARITY = "similarity"
TEXT_TO_IMAGE = "text_to_image"


def _r(x: float) -> float:
    return round(float(x), 6)


@dataclass(frozen=True)
class RetrievalConfig:
    prune_threshold: float = 0.75
    pcst: PCSTConfig = field(default_factory=PCSTConfig)
    image_top_k: int = 1
    link_kinds: frozenset[LinkKind] | None = None  # None: whatever the graph has
    baseline_chunk_top_k: int = 2
    baseline_image_top_k: int = 2

    def __post_init__(self):
        if not 0.0 <= self.prune_threshold <= 1.0:
            raise ValueError("prune_threshold must lie in [0, 1]")
        for name in ("image_top_k", "baseline_chunk_top_k", "baseline_image_top_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.link_kinds is not None:
            object.__setattr__(self, "link_kinds", frozenset(LinkKind(k) for k in self.link_kinds))

    def kinds_for(self, graph: MMGraph) -> frozenset[LinkKind]:
        return graph.link_kinds_present() if self.link_kinds is None else self.link_kinds

    def to_dict(self) -> dict:
        return {
            "prune_threshold": self.prune_threshold,
            "pcst": self.pcst.to_dict(),
            "image_top_k": self.image_top_k,
            "link_kinds": None if self.link_kinds is None else format_link_kinds(self.link_kinds),
            "baseline_chunk_top_k": self.baseline_chunk_top_k,
            "baseline_image_top_k": self.baseline_image_top_k,
        }


@dataclass
class Providers:
    extractor: ExtractionProvider
    embedder: Embedder


@dataclass(frozen=True)
class ImageHit:
    image_id: str
    reason: str
    score: float
    node_id: str | None = None
    link_kind: str | None = None


@dataclass(frozen=True)
class LinkedText:
    text: str
    image_id: str | None = None
    node_id: str | None = None
    link_kind: str | None = None
    edge_id: str | None = None
    chunk_id: str | None = None


@dataclass(frozen=True)
class TraceEvent:
    kind: str
    data: Mapping

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.data}

    @classmethod
    def from_dict(cls, row: Mapping) -> TraceEvent:
        row = dict(row)
        return cls(row.pop("kind"), row)


@dataclass
class RetrievedContext:
    triplets: list[Triplet] = field(default_factory=list)
    images: list[ImageHit] = field(default_factory=list)
    linked_texts: list[LinkedText] = field(default_factory=list)
    trace: list[TraceEvent] = field(default_factory=list)

    def image_ids(self) -> list[str]:
        return [hit.image_id for hit in self.images]

    def texts(self) -> list[str]:
        """Every retrieved text: triplet source sentences and linked texts."""
        return [t.source_text for t in self.triplets if t.source_text] + [lt.text for lt in self.linked_texts]

    def content_dict(self) -> dict:
        return {
            "triplets": [t.to_dict() for t in self.triplets],
            "images": [hit.__dict__ for hit in self.images],
            "linked_texts": [lt.__dict__ for lt in self.linked_texts],
        }

    def to_dict(self) -> dict:
        return {**self.content_dict(), "trace": [ev.to_dict() for ev in self.trace]}

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(ev.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for ev in self.trace)


class NoQueryEntities(ValueError):
    """Raised by pruning when there is nothing to compare components against."""


# -- query entities ----------------------------------------------------------


def query_vectors(query: str, providers: Providers) -> tuple[list[EntityMention], list[EmbeddingVector], bool]:
    """Embed the query's named entities, or the whole query when there are none."""
    mentions = extract_query_entities(query, providers.extractor)
    if mentions:
        return mentions, [providers.embedder.embed_text(m.surface) for m in mentions], False
    return [], [providers.embedder.embed_text(query)], True


# -- sub-graph retrieval -------------------------------------------------------


@dataclass(frozen=True)
class ComponentScore:
    component: Component
    score: float
    node_id: str

    def kept(self, threshold: float) -> bool:
        return self.score > threshold


def score_components(graph: MMGraph, query_vecs: Sequence[EmbeddingVector], embedder: Embedder) -> list[ComponentScore]:
    if not query_vecs:
        raise NoQueryEntities("no query entities to score components against")
    out = []
    for comp in graph.components():
        best_node, best = None, -2.0
        for node_id in comp.node_ids:
            s = relevance(embedder.embed_text(graph.nodes[node_id].surface), query_vecs)
            if s > best:
                best_node, best = node_id, s
        out.append(ComponentScore(comp, best, best_node))
    return out


def prune_components(
    graph: MMGraph, query_vecs: Sequence[EmbeddingVector], embedder: Embedder, threshold: float = 0.75
) -> list[Component]:
    """Components whose best node-to-query-entity cosine is strictly above ``threshold``."""
    return [cs.component for cs in score_components(graph, query_vecs, embedder) if cs.kept(threshold)]


@dataclass
class SubgraphResult:
    scores: list[ComponentScore]
    solutions: list[tuple[int, PCSTSolution]]
    node_ids: list[str]
    triplets: list[Triplet]
    node_relevance: dict[str, float]


def _subgraph(graph: MMGraph, query_vecs, embedder: Embedder, config: RetrievalConfig) -> SubgraphResult:
    scores = score_components(graph, query_vecs, embedder)
    solutions, node_ids, triplets, seen, rel = [], [], [], set(), {}
    for cs in scores:
        if not cs.kept(config.prune_threshold):
            continue
        prized = assign_prizes(cs.component, query_vecs, embedder, config.pcst, graph)
        solution = solve_pcst(prized, config.pcst)
        solutions.append((cs.component.component_id, solution))
        for n in solution.nodes:
            node_ids.append(n)
            rel[n] = prized.node_relevance[n]
        for edge_id in solution.edges:
            t = graph.edges[edge_id].triplet()
            if t.key not in seen:
                seen.add(t.key)
                triplets.append(t)
    return SubgraphResult(scores, solutions, node_ids, triplets, rel)


def retrieve_subgraph(graph: MMGraph, query: str, providers: Providers, config: RetrievalConfig | None = None) -> SubgraphResult:
    """Prune components against the query and refine the survivors with PCST."""
    config = config or RetrievalConfig()
    _, vecs, _ = query_vectors(query, providers)
    return _subgraph(graph, vecs, providers.embedder, config)


# -- linked-context retrieval ----------------------------------------------------


def _first_kind(links) -> LinkKind:
    return min((l.kind for l in links), key=LINK_ORDER.index)


def text_to_image(
    graph: MMGraph,
    retrieved_nodes: Iterable[str],
    query_vecs: Sequence[EmbeddingVector],
    embedder: Embedder,
    link_kinds: Iterable[LinkKind] | None = None,
) -> list[ImageHit]:
    """The single image whose linked retrieved node is most relevant to the query.

    When equally relevant nodes (or one node) point at several images, an image
    tied through a structural link (caption, section, page) beats one tied only
    by embedding similarity, then more distinct link kinds win, then the
    smaller image id.
    """
    kinds = set(LINK_ORDER if link_kinds is None else link_kinds)
    nodes = sorted(set(retrieved_nodes))
    rel = {n: relevance(embedder.embed_text(graph.nodes[n].surface), query_vecs) for n in nodes}
    pairs: dict[tuple[str, str], set[LinkKind]] = {}
    for node_id in nodes:
        for link in graph.links_of_node(node_id, kinds):
            pairs.setdefault((link.image_id, node_id), set()).add(link.kind)
    if not pairs:
        return []

    def strength(pair):
        (image_id, node_id), found = pair
        return (-rel[node_id], not (found - {LinkKind.SI}), -len(found), image_id, node_id)

    (image_id, node_id), _ = min(pairs.items(), key=strength)
    score = rel[node_id]
    witness = [l for l in graph.links_of_image(image_id, kinds) if l.node_id == node_id]
    return [ImageHit(image_id, TEXT_TO_IMAGE, _r(score), node_id, _first_kind(witness).value)]


def node_texts(graph: MMGraph, node_id: str) -> list[tuple[str, str | None]]:
    """(text, edge_id) pairs describing a node: its source sentences, else its surface."""
    out, seen = [], set()
    for edge_id in graph.incident_edges(node_id):
        text = graph.edges[edge_id].source_text
        if text and text not in seen:
            seen.add(text)
            out.append((text, edge_id))
    return out or [(graph.nodes[node_id].surface, None)]


def image_to_text(
    graph: MMGraph,
    query: str,
    embedder: Embedder,
    image_top_k: int = 1,
    link_kinds: Iterable[LinkKind] | None = None,
) -> tuple[list[ImageHit], list[LinkedText], list[tuple[str, float]]]:
    """Top-k images by query similarity plus the texts of the nodes linked to them.

    Returns the image hits, the linked texts and the full similarity ranking
    consulted (for the trace).
    """
    if not graph.images:
        return [], [], []
    kinds = set(LINK_ORDER if link_kinds is None else link_kinds)
    qvec = embedder.embed_text(query)
    ranked = top_k_similar(qvec, [(i.image_id, embedder.embed_image(i.uri)) for i in graph.images.values()], image_top_k)
    hits = [ImageHit(image_id, SIMILARITY, _r(score)) for image_id, score in ranked]
    texts, seen = [], set()
    for hit in hits:
        by_node: dict[str, list] = {}
        for link in graph.links_of_image(hit.image_id, kinds):
            by_node.setdefault(link.node_id, []).append(link)
        for node_id in sorted(by_node):
            kind = _first_kind(by_node[node_id]).value
            for text, edge_id in node_texts(graph, node_id):
                if text not in seen:
                    seen.add(text)
                    texts.append(LinkedText(text, hit.image_id, node_id, kind, edge_id))
    return hits, texts, [(i, _r(s)) for i, s in ranked]


def retrieve(graph: MMGraph, query: str, providers: Providers, config: RetrievalConfig | None = None) -> RetrievedContext:
    """Full bidirectional retrieval for one query."""
    config = config or RetrievalConfig()
    embedder = providers.embedder
    trace = [TraceEvent("query", {"query": query})]
    if not graph.nodes and not graph.images:
        return RetrievedContext(trace=trace)
    kinds = config.kinds_for(graph)

    mentions, vecs, fallback = query_vectors(query, providers)
    trace.append(TraceEvent("query_entities", {"entities": [m.normalized for m in mentions], "fallback": fallback}))

    sub = _subgraph(graph, vecs, embedder, config) if graph.nodes else SubgraphResult([], [], [], [], {})
    for cs in sub.scores:
        trace.append(TraceEvent("component", {
            "component": cs.component.component_id, "score": _r(cs.score), "node_id": cs.node_id,
            "kept": cs.kept(config.prune_threshold),
        }))
    for cid, sol in sub.solutions:
        trace.append(TraceEvent("pcst", {
            "component": cid, "nodes": list(sol.nodes), "edges": list(sol.edges),
            "objective": _r(sol.objective), "method": sol.method,
        }))

    t2i = text_to_image(graph, sub.node_ids, vecs, embedder, kinds) if sub.node_ids else []
    for hit in t2i:
        trace.append(TraceEvent("text_to_image", {"image_id": hit.image_id, "node_id": hit.node_id, "link_kind": hit.link_kind, "score": hit.score}))

    sim_hits, linked, ranked = image_to_text(graph, query, embedder, config.image_top_k, kinds)
    if ranked:
        trace.append(TraceEvent("image_similarity", {"ranked": [[i, s] for i, s in ranked]}))

    context = RetrievedContext()
    edge_of = {}
    for _, sol in sub.solutions:
        for edge_id in sol.edges:
            key = graph.edges[edge_id].triplet().key
            edge_of.setdefault(key, edge_id)
    context.triplets = list(sub.triplets)
    seen_images = set()
    for hit in t2i + sim_hits:
        if hit.image_id not in seen_images:
            seen_images.add(hit.image_id)
            context.images.append(hit)
    context.linked_texts = linked

    for t in context.triplets:
        trace.append(TraceEvent("emit_triplet", {"edge_id": edge_of[t.key]}))
    for hit in context.images:
        trace.append(TraceEvent("emit_image", dict(hit.__dict__)))
    for lt in context.linked_texts:
        trace.append(TraceEvent("emit_text", dict(lt.__dict__)))
    context.trace = trace
    return context


# -- similarity-only baseline ---------------------------------------------------------


def baseline_retrieve(
    chunks: Sequence[TextChunk],
    images: Iterable[ImageNode],
    query: str,
    embedder: Embedder,
    config: RetrievalConfig | None = None,
) -> RetrievedContext:
    """Top chunks and top images by query similarity, each modality on its own."""
    config = config or RetrievalConfig()
    qvec = embedder.embed_text(query)
    trace = [TraceEvent("query", {"query": query})]
    context = RetrievedContext()
    by_id = {c.chunk_id: c for c in chunks}
    if chunks:
        ranked = top_k_similar(qvec, [(c.chunk_id, embedder.embed_text(c.text)) for c in chunks if c.text], config.baseline_chunk_top_k)
        trace.append(TraceEvent("chunk_similarity", {"ranked": [[i, _r(s)] for i, s in ranked]}))
        context.linked_texts = [LinkedText(by_id[i].text, chunk_id=i) for i, _ in ranked]
    images = list(images)
    if images:
        ranked = top_k_similar(qvec, [(i.image_id, embedder.embed_image(i.uri)) for i in images], config.baseline_image_top_k)
        trace.append(TraceEvent("image_similarity", {"ranked": [[i, _r(s)] for i, s in ranked]}))
        context.images = [ImageHit(i, SIMILARITY, _r(s)) for i, s in ranked]
    for hit in context.images:
        trace.append(TraceEvent("emit_image", dict(hit.__dict__)))
    for lt in context.linked_texts:
        trace.append(TraceEvent("emit_text", dict(lt.__dict__)))
    context.trace = trace
    return context


# -- trace replay and audit ---------------------------------------------------------


def replay_trace(graph: MMGraph | None, trace: Sequence[TraceEvent], chunks: Sequence[TextChunk] = ()) -> RetrievedContext:
    """Rebuild a context from the emit events of a trace."""
    context = RetrievedContext(trace=list(trace))
    for ev in trace:
        if ev.kind == "emit_triplet":
            context.triplets.append(graph.edges[ev.data["edge_id"]].triplet())
        elif ev.kind == "emit_image":
            context.images.append(ImageHit(**ev.data))
        elif ev.kind == "emit_text":
            context.linked_texts.append(LinkedText(**ev.data))
    return context


def verify_trace(graph: MMGraph | None, context: RetrievedContext, chunks: Sequence[TextChunk] = ()) -> list[str]:
    """Problems found when checking every context item against its trace; empty when sound."""
    problems = []
    events = context.trace
    pcst_nodes, pcst_edges, similar_images, similar_chunks = set(), set(), set(), set()
    for ev in events:
        if ev.kind == "pcst":
            pcst_nodes.update(ev.data["nodes"])
            pcst_edges.update(ev.data["edges"])
        elif ev.kind == "image_similarity":
            similar_images.update(i for i, _ in ev.data["ranked"])
        elif ev.kind == "chunk_similarity":
            similar_chunks.update(i for i, _ in ev.data["ranked"])
    chunk_text = {c.chunk_id: c.text for c in chunks}

    for ev in events:
        if ev.kind == "emit_triplet" and ev.data["edge_id"] not in pcst_edges:
            problems.append(f"triplet edge {ev.data['edge_id']} is not part of any PCST solution")
        elif ev.kind == "emit_image":
            hit = ImageHit(**ev.data)
            if hit.reason == SIMILARITY:
                if hit.image_id not in similar_images:
                    problems.append(f"image {hit.image_id} claims similarity but was not ranked")
            elif hit.reason == TEXT_TO_IMAGE:
                if hit.node_id not in pcst_nodes:
                    problems.append(f"image {hit.image_id} witnessed by non-retrieved node {hit.node_id}")
                elif graph is None or not graph.has_link(hit.image_id, hit.node_id, LinkKind(hit.link_kind)):
                    problems.append(f"image {hit.image_id} has no {hit.link_kind} link to {hit.node_id}")
            else:
                problems.append(f"image {hit.image_id} has unknown reason {hit.reason!r}")
        elif ev.kind == "emit_text":
            lt = LinkedText(**ev.data)
            if lt.chunk_id is not None:
                if lt.chunk_id not in similar_chunks:
                    problems.append(f"chunk {lt.chunk_id} was not ranked")
                elif chunks and chunk_text.get(lt.chunk_id) != lt.text:
                    problems.append(f"chunk {lt.chunk_id} text differs from the corpus chunk")
                continue
            if lt.image_id not in similar_images:
                problems.append(f"linked text reached from image {lt.image_id}, which was not a similarity hit")
            elif graph is None or not graph.has_link(lt.image_id, lt.node_id, LinkKind(lt.link_kind)):
                problems.append(f"no {lt.link_kind} link between {lt.image_id} and {lt.node_id}")
            elif (lt.text, lt.edge_id) not in node_texts(graph, lt.node_id):
                problems.append(f"text {lt.text[:30]!r} does not describe node {lt.node_id}")

    replayed = replay_trace(graph, events, chunks)
    if replayed.content_dict() != context.content_dict():
        problems.append("replaying the trace does not reproduce the context")
    return problems


def with_link_kinds(config: RetrievalConfig, kinds: Iterable[LinkKind]) -> RetrievalConfig:
    return replace(config, link_kinds=frozenset(kinds))
