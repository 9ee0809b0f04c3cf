"""The unified multi-modal graph.

Entity nodes and relation edges come from triplets and fall apart into
disjoint textual components. Image nodes hang off entity nodes through typed
link edges produced by four linkers: caption entities (``ca``), embedding
similarity (``si``), shared page (``lp``) and shared section (``ls``). Link
edges never participate in the component structure.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .corpus import Corpus, Document, paginate, DEFAULT_TRIPLETS_PER_PAGE
from .embedding import Embedder, top_k_similar
from .extraction import ExtractionProvider, FallbackExtractor, Triplet, extract_caption_entities, normalize

log = logging.getLogger(__name__)

SCORE_DIGITS = 6


class GraphError(ValueError):
    pass


class LinkKind(str, Enum):
    CA = "ca"  # caption entities
    SI = "si"  # embedding similarity
    LP = "lp"  # same page
    LS = "ls"  # same section

    def __str__(self) -> str:
        return self.value


LINK_ORDER = (LinkKind.CA, LinkKind.SI, LinkKind.LP, LinkKind.LS)


def parse_link_kinds(value: str | Iterable[str] | None) -> frozenset[LinkKind]:
    """``"ca,ls"`` / ``"ca+ls"`` / ``["ca", "ls"]`` -> frozenset of kinds; ``""`` or ``"none"`` -> empty."""
    if value is None:
        return frozenset()
    if isinstance(value, str):
        parts = [p for p in value.replace("+", ",").split(",") if p.strip()]
    else:
        parts = list(value)
    kinds = set()
    for part in parts:
        part = str(part).strip().lower()
        if part == "none":
            continue
        try:
            kinds.add(LinkKind(part))
        except ValueError:
            raise ValueError(f"unknown link kind {part!r}; expected one of ca, si, lp, ls") from None
    return frozenset(kinds)


def format_link_kinds(kinds: Iterable[LinkKind]) -> str:
    ordered = [k.value for k in LINK_ORDER if k in set(kinds)]
    return "+".join(ordered) if ordered else "none"


@dataclass(frozen=True)
class SpanRef:
    doc_id: str
    section_id: str
    span_id: str
    page_index: int | None = None


@dataclass(frozen=True)
class EntityNode:
    node_id: str
    surface: str
    spans: tuple[SpanRef, ...] = ()
    origin: str = "triplet"  # or "caption"

    @property
    def normalized(self) -> str:
        return normalize(self.surface)


@dataclass(frozen=True)
class RelationEdge:
    edge_id: str
    src: str
    dst: str
    subject: str
    relation: str
    object: str
    doc_id: str
    span_id: str
    source_text: str

    def triplet(self) -> Triplet:
        return Triplet(self.subject, self.relation, self.object, self.doc_id, self.span_id, self.source_text)


@dataclass(frozen=True)
class ImageNode:
    image_id: str
    doc_id: str
    section_id: str
    uri: str
    caption: str | None = None
    page_index: int | None = None


@dataclass(frozen=True)
class LinkEdge:
    image_id: str
    node_id: str
    kind: LinkKind
    score: float | None = None

    @property
    def key(self) -> tuple[str, str, LinkKind]:
        return self.image_id, self.node_id, self.kind


@dataclass(frozen=True)
class Component:
    component_id: int
    node_ids: tuple[str, ...]
    edge_ids: tuple[str, ...]


@dataclass(frozen=True)
class GraphBuildConfig:
    link_kinds: frozenset[LinkKind] = frozenset({LinkKind.CA, LinkKind.LS, LinkKind.SI})
    si_top_n: int = 3
    triplets_per_page: int = DEFAULT_TRIPLETS_PER_PAGE
    merge_across_documents: bool = True

    def __post_init__(self):
        if self.si_top_n < 1:
            raise ValueError("si_top_n must be >= 1")
        object.__setattr__(self, "link_kinds", frozenset(LinkKind(k) for k in self.link_kinds))

    def to_dict(self) -> dict:
        return {
            "link_kinds": format_link_kinds(self.link_kinds),
            "si_top_n": self.si_top_n,
            "triplets_per_page": self.triplets_per_page,
            "merge_across_documents": self.merge_across_documents,
        }


def _link_sort_key(link: LinkEdge):
    return link.image_id, link.node_id, LINK_ORDER.index(link.kind)


class MMGraph:
    """Immutable multi-modal graph with a precomputed component index."""

    def __init__(
        self,
        nodes: Iterable[EntityNode],
        edges: Iterable[RelationEdge],
        images: Iterable[ImageNode],
        links: Iterable[LinkEdge],
        *,
        corpus_id: str = "",
        meta: Mapping | None = None,
    ):
        self.nodes: Mapping[str, EntityNode] = MappingProxyType({n.node_id: n for n in sorted(nodes, key=lambda n: n.node_id)})
        self.edges: Mapping[str, RelationEdge] = MappingProxyType({e.edge_id: e for e in sorted(edges, key=lambda e: e.edge_id)})
        self.images: Mapping[str, ImageNode] = MappingProxyType({i.image_id: i for i in sorted(images, key=lambda i: i.image_id)})
        self.links: tuple[LinkEdge, ...] = tuple(sorted(links, key=_link_sort_key))
        self.corpus_id = corpus_id
        self.meta = dict(meta or {})
        self._check()
        self._index()

    def _check(self) -> None:
        for edge in self.edges.values():
            if edge.src not in self.nodes or edge.dst not in self.nodes:
                raise GraphError(f"relation edge {edge.edge_id} must connect two entity nodes")
        seen = set()
        for link in self.links:
            if link.image_id not in self.images or link.node_id not in self.nodes:
                raise GraphError(f"link {link.key} must connect an image to an entity node")
            if link.key in seen:
                raise GraphError(f"duplicate link {link.key}")
            seen.add(link.key)

    def _index(self) -> None:
        parent = {node_id: node_id for node_id in self.nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        incident: dict[str, list[str]] = {node_id: [] for node_id in self.nodes}
        for edge in self.edges.values():
            incident[edge.src].append(edge.edge_id)
            if edge.dst != edge.src:
                incident[edge.dst].append(edge.edge_id)
            a, b = find(edge.src), find(edge.dst)
            if a != b:
                parent[max(a, b)] = min(a, b)
        groups: dict[str, list[str]] = {}
        for node_id in self.nodes:
            groups.setdefault(find(node_id), []).append(node_id)
        members = sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])
        self._component_of = {}
        comps = []
        for cid, node_ids in enumerate(members):
            for node_id in node_ids:
                self._component_of[node_id] = cid
            edge_ids = sorted({e for n in node_ids for e in incident[n]})
            comps.append(Component(cid, tuple(node_ids), tuple(edge_ids)))
        self._components = tuple(comps)
        self._incident = {k: tuple(v) for k, v in incident.items()}
        self._links_by_image: dict[str, list[LinkEdge]] = {}
        self._links_by_node: dict[str, list[LinkEdge]] = {}
        for link in self.links:
            self._links_by_image.setdefault(link.image_id, []).append(link)
            self._links_by_node.setdefault(link.node_id, []).append(link)

    # -- queries ---------------------------------------------------------

    @property
    def component_index(self) -> Mapping[str, int]:
        return MappingProxyType(self._component_of)

    def components(self) -> list[Component]:
        return list(self._components)

    def incident_edges(self, node_id: str) -> tuple[str, ...]:
        return self._incident.get(node_id, ())

    def links_of_image(self, image_id: str, kinds: Iterable[LinkKind] | None = None) -> list[LinkEdge]:
        links = self._links_by_image.get(image_id, [])
        return links if kinds is None else [l for l in links if l.kind in set(kinds)]

    def links_of_node(self, node_id: str, kinds: Iterable[LinkKind] | None = None) -> list[LinkEdge]:
        links = self._links_by_node.get(node_id, [])
        return links if kinds is None else [l for l in links if l.kind in set(kinds)]

    def has_link(self, image_id: str, node_id: str, kind: LinkKind) -> bool:
        return any(l.node_id == node_id and l.kind == kind for l in self._links_by_image.get(image_id, []))

    def link_kinds_present(self) -> frozenset[LinkKind]:
        return frozenset(l.kind for l in self.links)

    def with_link_kinds(self, kinds: Iterable[LinkKind]) -> MMGraph:
        keep = set(kinds)
        return MMGraph(
            self.nodes.values(), self.edges.values(), self.images.values(),
            [l for l in self.links if l.kind in keep], corpus_id=self.corpus_id, meta=self.meta,
        )

    def without_links(self) -> MMGraph:
        return self.with_link_kinds(())

    def counts(self) -> dict:
        per_kind = {k.value: 0 for k in LINK_ORDER}
        for link in self.links:
            per_kind[link.kind.value] += 1
        return {
            "nodes": len(self.nodes),
            "edges": len(self.edges),
            "images": len(self.images),
            "components": len(self._components),
            "links": per_kind,
        }

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "corpus_id": self.corpus_id,
            "meta": self.meta,
            "nodes": [
                {"id": n.node_id, "surface": n.surface, "origin": n.origin, "spans": [asdict(s) for s in n.spans]}
                for n in self.nodes.values()
            ],
            "edges": [
                {
                    "id": e.edge_id, "src": e.src, "dst": e.dst, "subject": e.subject, "relation": e.relation,
                    "object": e.object, "doc_id": e.doc_id, "span_id": e.span_id, "source_text": e.source_text,
                }
                for e in self.edges.values()
            ],
            "images": [
                {"id": i.image_id, "doc_id": i.doc_id, "section_id": i.section_id, "uri": i.uri, "caption": i.caption, "page_index": i.page_index}
                for i in self.images.values()
            ],
            "links": [
                {"image_id": l.image_id, "node_id": l.node_id, "kind": l.kind.value,
                 "score": None if l.score is None else round(l.score, SCORE_DIGITS)}
                for l in self.links
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, data: Mapping) -> MMGraph:
        try:
            nodes = [EntityNode(n["id"], n["surface"], tuple(SpanRef(**s) for s in n.get("spans", [])), n.get("origin", "triplet")) for n in data["nodes"]]
            edges = [
                RelationEdge(e["id"], e["src"], e["dst"], e["subject"], e["relation"], e["object"], e["doc_id"], e["span_id"], e["source_text"])
                for e in data["edges"]
            ]
            images = [ImageNode(i["id"], i["doc_id"], i["section_id"], i["uri"], i.get("caption"), i.get("page_index")) for i in data["images"]]
            links = [LinkEdge(l["image_id"], l["node_id"], LinkKind(l["kind"]), l.get("score")) for l in data["links"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed graph file: {exc}") from exc
        return cls(nodes, edges, images, links, corpus_id=data.get("corpus_id", ""), meta=data.get("meta"))

    @classmethod
    def load(cls, path: str | Path) -> MMGraph:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def __eq__(self, other) -> bool:
        return isinstance(other, MMGraph) and self.to_dict() == other.to_dict()


def components(graph: MMGraph) -> list[Component]:
    """Connected components over relation edges, ordered by smallest member id."""
    return graph.components()


# -- building --------------------------------------------------------------


@dataclass
class GraphBuilder:
    """Mutable draft of an :class:`MMGraph`; linkers run against it before freezing."""

    corpus_id: str = ""
    merge_across_documents: bool = True
    nodes: dict[str, EntityNode] = field(default_factory=dict)
    edges: dict[str, RelationEdge] = field(default_factory=dict)
    images: dict[str, ImageNode] = field(default_factory=dict)
    links: dict[tuple, LinkEdge] = field(default_factory=dict)
    _edge_keys: set = field(default_factory=set)

    def node_key(self, surface: str, doc_id: str) -> str:
        norm = normalize(surface)
        return norm if self.merge_across_documents else f"{doc_id}/{norm}"

    def add_entity(self, surface: str, doc_id: str, span: SpanRef | None = None, origin: str = "triplet") -> str:
        key = self.node_key(surface, doc_id)
        node = self.nodes.get(key)
        if node is None:
            node = EntityNode(key, surface.strip(), (), origin)
        if span is not None and span not in node.spans:
            node = EntityNode(node.node_id, node.surface, node.spans + (span,), node.origin)
        self.nodes[key] = node
        return key

    def add_triplet(self, triplet: Triplet, span: SpanRef) -> str | None:
        src = self.add_entity(triplet.subject, triplet.doc_id, span)
        dst = self.add_entity(triplet.object, triplet.doc_id, span)
        key = (src, normalize(triplet.relation), dst)
        if src == dst or key in self._edge_keys:
            return None
        self._edge_keys.add(key)
        edge_id = f"r{len(self.edges):05d}"
        self.edges[edge_id] = RelationEdge(
            edge_id, src, dst, triplet.subject, triplet.relation, triplet.object, triplet.doc_id, triplet.span_id, triplet.source_text
        )
        return edge_id

    def add_link(self, link: LinkEdge) -> bool:
        if link.key in self.links:
            return False
        self.links[link.key] = link
        return True

    # -- linkers ------------------------------------------------------------

    def link_caption(self, image: ImageNode, provider: ExtractionProvider) -> list[LinkEdge]:
        out = []
        for mention in extract_caption_entities(image.caption, provider):
            node_id = self.node_key(mention.surface, image.doc_id)
            if node_id not in self.nodes:
                self.add_entity(mention.surface, image.doc_id, origin="caption")
            link = LinkEdge(image.image_id, node_id, LinkKind.CA)
            if self.add_link(link):
                out.append(link)
        return out

    def link_similarity(self, image: ImageNode, embedder: Embedder, top_n: int) -> list[LinkEdge]:
        if top_n < 1:
            raise ValueError("top_n must be >= 1")
        if not self.nodes:
            return []
        image_vec = embedder.embed_image(image.uri)
        candidates = [(node_id, embedder.embed_text(node.surface)) for node_id, node in sorted(self.nodes.items())]
        out = []
        for node_id, score in top_k_similar(image_vec, candidates, top_n):
            link = LinkEdge(image.image_id, node_id, LinkKind.SI, score)
            if self.add_link(link):
                out.append(link)
        return out

    def link_layout(self, image: ImageNode, mode: str) -> list[LinkEdge]:
        if mode not in ("page", "section"):
            raise ValueError("mode must be 'page' or 'section'")
        if mode == "page" and image.page_index is None:
            raise GraphError(f"image {image.image_id!r} has no page: page linking needs a paginated document")
        kind = LinkKind.LP if mode == "page" else LinkKind.LS
        out = []
        for node_id, node in sorted(self.nodes.items()):
            for span in node.spans:
                if span.doc_id != image.doc_id:
                    continue
                same = span.page_index == image.page_index if mode == "page" else span.section_id == image.section_id
                if same:
                    link = LinkEdge(image.image_id, node_id, kind)
                    if self.add_link(link):
                        out.append(link)
                    break
        return out

    def freeze(self, meta: Mapping | None = None) -> MMGraph:
        return MMGraph(self.nodes.values(), self.edges.values(), self.images.values(), self.links.values(), corpus_id=self.corpus_id, meta=meta)


def link_caption(builder: GraphBuilder, image: ImageNode, provider: ExtractionProvider) -> list[LinkEdge]:
    return builder.link_caption(image, provider)


def link_similarity(builder: GraphBuilder, image: ImageNode, embedder: Embedder, top_n: int) -> list[LinkEdge]:
    return builder.link_similarity(image, embedder, top_n)


def link_layout(builder: GraphBuilder, image: ImageNode, mode: str) -> list[LinkEdge]:
    return builder.link_layout(image, mode)


def _prepare_documents(corpus: Corpus, triplets: Sequence[Triplet], config: GraphBuildConfig) -> dict[str, Document]:
    docs = {doc.doc_id: doc for doc in corpus.documents}
    if LinkKind.LP not in config.link_kinds:
        return docs
    by_doc: dict[str, list[Triplet]] = {}
    for t in triplets:
        by_doc.setdefault(t.doc_id, []).append(t)
    return {
        doc_id: doc if doc.pages is not None else paginate(doc, config.triplets_per_page, by_doc.get(doc_id, []))
        for doc_id, doc in docs.items()
    }


def build_graph(
    corpus: Corpus,
    triplets: Sequence[Triplet],
    config: GraphBuildConfig | None = None,
    embedder: Embedder | None = None,
    extractor: ExtractionProvider | None = None,
) -> MMGraph:
    """Assemble the multi-modal graph from a corpus and its extracted triplets.

    Entities with equal normalized surface merge into one node (corpus-wide
    unless ``merge_across_documents`` is off). Linkers run in the fixed order
    CA, LS, LP, SI so that caption-created nodes are visible to the later ones.
    Documents without pagination are paginated on the fly when page linking is
    enabled.
    """
    config = config or GraphBuildConfig()
    extractor = extractor or FallbackExtractor()
    if LinkKind.SI in config.link_kinds and embedder is None:
        raise GraphError("similarity linking needs an embedder")
    docs = _prepare_documents(corpus, triplets, config)

    builder = GraphBuilder(corpus_id=corpus.corpus_id, merge_across_documents=config.merge_across_documents)
    span_info: dict[tuple[str, str], SpanRef] = {}
    for doc in docs.values():
        pages = doc.page_of_span()
        for span in doc.spans():
            span_info[(doc.doc_id, span.span_id)] = SpanRef(doc.doc_id, span.section_id, span.span_id, pages.get(span.span_id))
    for t in triplets:
        ref = span_info.get((t.doc_id, t.span_id))
        if ref is None:
            raise GraphError(f"triplet {t.key} references unknown span {t.doc_id}/{t.span_id}")
        builder.add_triplet(t, ref)

    for doc in docs.values():
        for asset in doc.images:
            if asset.image_id in builder.images:
                raise GraphError(f"image id {asset.image_id!r} is not unique across the corpus")
            builder.images[asset.image_id] = ImageNode(asset.image_id, doc.doc_id, asset.section_id, asset.uri, asset.caption, asset.page_index)

    images = sorted(builder.images.values(), key=lambda i: i.image_id)
    if LinkKind.CA in config.link_kinds:
        for image in images:
            builder.link_caption(image, extractor)
    if LinkKind.LS in config.link_kinds:
        for image in images:
            builder.link_layout(image, "section")
    if LinkKind.LP in config.link_kinds:
        for image in images:
            builder.link_layout(image, "page")
    if LinkKind.SI in config.link_kinds:
        for image in images:
            builder.link_similarity(image, embedder, config.si_top_n)

    meta = {"build": config.to_dict(), "embedder": embedder.identity if embedder else None, "extractor": extractor.identity}
    graph = builder.freeze(meta)
    log.info("built graph %s", graph.counts())
    return graph
