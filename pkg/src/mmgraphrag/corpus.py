"""Multi-modal document corpus: loading, validation, pagination and chunking.

A corpus file is a single UTF-8 JSON document::

    {"corpus_id": str,
     "documents": [{"doc_id": str, "title": str,
                    "sections": [{"section_id": str, "heading": str, "body": str}],
                    "images": [{"image_id": str, "uri": str, "caption": str|null,
                                "section_id": str, "page_index": int|null}]}]}

Section bodies are split into sentence spans; spans are the unit of triplet
provenance and of pagination.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

DEFAULT_TRIPLETS_PER_PAGE = 20
DEFAULT_CHUNK_SIZE_WORDS = 100

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


class CorpusError(ValueError):
    """Raised when a corpus file or document violates the schema or an invariant."""


def words(text: str) -> list[str]:
    """Split text into words (maximal runs of non-whitespace)."""
    return text.split()


def word_count(text: str) -> int:
    return len(text.split())


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_END.split(text.strip()) if s.strip()]


@dataclass(frozen=True)
class Span:
    """A sentence of a section body; the provenance unit for triplets."""

    span_id: str
    section_id: str
    text: str


@dataclass(frozen=True)
class Section:
    section_id: str
    heading: str
    body: str

    def spans(self) -> list[Span]:
        return [
            Span(f"{self.section_id}#s{i}", self.section_id, sentence)
            for i, sentence in enumerate(split_sentences(self.body))
        ]


@dataclass(frozen=True)
class ImageAsset:
    image_id: str
    uri: str
    caption: str | None
    section_id: str
    page_index: int | None = None


@dataclass(frozen=True)
class PageAssignment:
    page_index: int
    member_span_ids: tuple[str, ...] = ()
    member_image_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    sections: tuple[Section, ...]
    images: tuple[ImageAsset, ...] = ()
    pages: tuple[PageAssignment, ...] | None = None

    def spans(self) -> list[Span]:
        """All sentence spans in document order."""
        return [span for section in self.sections for span in section.spans()]

    def section(self, section_id: str) -> Section:
        for section in self.sections:
            if section.section_id == section_id:
                return section
        raise KeyError(section_id)

    def image(self, image_id: str) -> ImageAsset:
        for image in self.images:
            if image.image_id == image_id:
                return image
        raise KeyError(image_id)

    @property
    def body(self) -> str:
        return "\n".join(section.body for section in self.sections if section.body)

    def page_of_span(self) -> dict[str, int]:
        if self.pages is None:
            return {}
        return {span_id: page.page_index for page in self.pages for span_id in page.member_span_ids}


@dataclass(frozen=True)
class Corpus:
    corpus_id: str
    documents: tuple[Document, ...] = field(default_factory=tuple)

    def document(self, doc_id: str) -> Document:
        for doc in self.documents:
            if doc.doc_id == doc_id:
                return doc
        raise KeyError(doc_id)

    def images(self) -> list[tuple[str, ImageAsset]]:
        return [(doc.doc_id, image) for doc in self.documents for image in doc.images]

    def replace_document(self, document: Document) -> Corpus:
        docs = tuple(document if d.doc_id == document.doc_id else d for d in self.documents)
        return replace(self, documents=docs)


@dataclass(frozen=True)
class TextChunk:
    chunk_id: str
    doc_id: str
    text: str
    word_count: int


# -- loading ---------------------------------------------------------------


def _require(obj: dict, key: str, kind: type | tuple[type, ...], where: str, nullable: bool = False) -> Any:
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: expected an object")
    if key not in obj:
        raise CorpusError(f"{where}.{key}: missing field")
    value = obj[key]
    if value is None and nullable:
        return None
    if not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise CorpusError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _parse_document(raw: dict, where: str) -> Document:
    doc_id = _require(raw, "doc_id", str, where)
    title = _require(raw, "title", str, where)
    sections = []
    for i, rs in enumerate(_require(raw, "sections", list, where)):
        w = f"{where}.sections[{i}]"
        sections.append(Section(_require(rs, "section_id", str, w), _require(rs, "heading", str, w), _require(rs, "body", str, w)))
    images = []
    for i, ri in enumerate(raw.get("images", []) or []):
        w = f"{where}.images[{i}]"
        images.append(
            ImageAsset(
                image_id=_require(ri, "image_id", str, w),
                uri=_require(ri, "uri", str, w),
                caption=_require(ri, "caption", str, w, nullable=True) if "caption" in ri else None,
                section_id=_require(ri, "section_id", str, w),
                page_index=_require(ri, "page_index", int, w, nullable=True) if "page_index" in ri else None,
            )
        )
    pages = None
    if raw.get("pages") is not None:
        pages = []
        for i, rp in enumerate(raw["pages"]):
            w = f"{where}.pages[{i}]"
            pages.append(
                PageAssignment(
                    page_index=_require(rp, "page_index", int, w),
                    member_span_ids=tuple(_require(rp, "member_span_ids", list, w)),
                    member_image_ids=tuple(_require(rp, "member_image_ids", list, w)),
                )
            )
        pages = tuple(pages)
    doc = Document(doc_id, title, tuple(sections), tuple(images), pages)
    validate_document(doc)
    return doc


def validate_document(doc: Document) -> None:
    """Check every document invariant, raising CorpusError on the first breach."""
    where = f"document {doc.doc_id!r}"
    section_ids = [s.section_id for s in doc.sections]
    if len(set(section_ids)) != len(section_ids):
        raise CorpusError(f"{where}: duplicate section id")
    image_ids = [img.image_id for img in doc.images]
    if len(set(image_ids)) != len(image_ids):
        raise CorpusError(f"{where}: duplicate image id")
    imaged_sections = {img.section_id for img in doc.images}
    for img in doc.images:
        if img.section_id not in section_ids:
            raise CorpusError(f"{where}: image {img.image_id!r} has dangling section reference {img.section_id!r}")
    for section in doc.sections:
        if not section.body.strip() and section.section_id not in imaged_sections:
            raise CorpusError(f"{where}: section {section.section_id!r} has an empty body and no image")
    if doc.pages is None:
        return
    indices = [p.page_index for p in doc.pages]
    if indices != list(range(len(indices))):
        raise CorpusError(f"{where}: pages must be indexed contiguously from 0")
    known_spans = {span.span_id for span in doc.spans()}
    seen: set[str] = set()
    for page in doc.pages:
        for span_id in page.member_span_ids:
            if span_id not in known_spans:
                raise CorpusError(f"{where}: page {page.page_index} references unknown span {span_id!r}")
            if span_id in seen:
                raise CorpusError(f"{where}: span {span_id!r} assigned to more than one page")
            seen.add(span_id)
        for image_id in page.member_image_ids:
            if image_id not in image_ids:
                raise CorpusError(f"{where}: page {page.page_index} references unknown image {image_id!r}")
    for img in doc.images:
        if img.page_index is not None and img.page_index not in indices:
            raise CorpusError(f"{where}: image {img.image_id!r} refers to missing page {img.page_index}")


def parse_corpus(data: Any) -> Corpus:
    if not isinstance(data, dict):
        raise CorpusError("corpus: expected a JSON object")
    corpus_id = _require(data, "corpus_id", str, "corpus")
    docs = [_parse_document(raw, f"documents[{i}]") for i, raw in enumerate(_require(data, "documents", list, "corpus"))]
    doc_ids = [d.doc_id for d in docs]
    if len(set(doc_ids)) != len(doc_ids):
        raise CorpusError("corpus: duplicate doc id")
    return Corpus(corpus_id, tuple(docs))


def load_corpus(path: str | Path) -> Corpus:
    """Load and validate a corpus JSON file.

    Raises:
        FileNotFoundError: if ``path`` does not exist.
        CorpusError: on schema violations, dangling references or duplicate ids.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"corpus: invalid JSON ({exc})") from exc
    return parse_corpus(data)


def corpus_to_dict(corpus: Corpus) -> dict:
    documents = []
    for doc in corpus.documents:
        raw: dict[str, Any] = {
            "doc_id": doc.doc_id,
            "title": doc.title,
            "sections": [{"section_id": s.section_id, "heading": s.heading, "body": s.body} for s in doc.sections],
            "images": [
                {"image_id": i.image_id, "uri": i.uri, "caption": i.caption, "section_id": i.section_id, "page_index": i.page_index}
                for i in doc.images
            ],
        }
        if doc.pages is not None:
            raw["pages"] = [
                {"page_index": p.page_index, "member_span_ids": list(p.member_span_ids), "member_image_ids": list(p.member_image_ids)}
                for p in doc.pages
            ]
        documents.append(raw)
    return {"corpus_id": corpus.corpus_id, "documents": documents}


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(json.dumps(corpus_to_dict(corpus), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# -- pagination ------------------------------------------------------------


def paginate(document: Document, triplets_per_page: int, triplets: Sequence[Any]) -> Document:
    """Split a document into pages holding at most ``triplets_per_page`` triplets.

    Triplet-bearing spans are packed greedily in document order; a span is never
    split across pages, so a single span carrying more triplets than the page
    capacity gets a page of its own. An image lands on the page of the first
    triplet-bearing span of its section, or failing that the first such span
    after its section; images after the last span go to the last page.
    """
    if triplets_per_page < 1:
        raise ValueError("triplets_per_page must be >= 1")
    spans = document.spans()
    known = {span.span_id for span in spans}
    counts: dict[str, int] = {}
    for t in triplets:
        if t.doc_id != document.doc_id or t.span_id not in known:
            raise ValueError(f"triplet {t!r} does not belong to document {document.doc_id!r}")
        counts[t.span_id] = counts.get(t.span_id, 0) + 1

    pages: list[list[str]] = []
    load = 0
    for span in spans:
        n = counts.get(span.span_id, 0)
        if n == 0:
            continue
        if not pages or load + n > triplets_per_page:
            pages.append([])
            load = 0
        pages[-1].append(span.span_id)
        load += n

    span_page = {sid: i for i, members in enumerate(pages) for sid in members}
    order = [s.section_id for s in document.sections]
    first_page_from: dict[str, int] = {}
    last = max(len(pages) - 1, 0)
    pending = last
    # walk sections backwards so each one knows the first page at or after it
    for section_id in reversed(order):
        section_pages = [span_page[s.span_id] for s in document.section(section_id).spans() if s.span_id in span_page]
        if section_pages:
            pending = section_pages[0]
        first_page_from[section_id] = pending

    image_pages: list[list[str]] = [[] for _ in range(max(len(pages), 1))]
    images = []
    for image in document.images:
        index = first_page_from.get(image.section_id, last) if pages else 0
        image_pages[index].append(image.image_id)
        images.append(replace(image, page_index=index))

    assignments = tuple(
        PageAssignment(i, tuple(pages[i]) if i < len(pages) else (), tuple(image_pages[i])) for i in range(len(image_pages))
    )
    return replace(document, images=tuple(images), pages=assignments)


# -- chunking --------------------------------------------------------------


def chunk_text(document: Document, chunk_size_words: int = DEFAULT_CHUNK_SIZE_WORDS) -> list[TextChunk]:
    """Cut the concatenated section bodies into consecutive fixed-size word windows."""
    if chunk_size_words < 1:
        raise ValueError("chunk_size_words must be >= 1")
    tokens = words(document.body)
    chunks = []
    for n, start in enumerate(range(0, len(tokens), chunk_size_words)):
        piece = tokens[start : start + chunk_size_words]
        chunks.append(TextChunk(f"{document.doc_id}:c{n}", document.doc_id, " ".join(piece), len(piece)))
    return chunks


def chunk_corpus(corpus: Corpus, chunk_size_words: int = DEFAULT_CHUNK_SIZE_WORDS) -> list[TextChunk]:
    return [chunk for doc in corpus.documents for chunk in chunk_text(doc, chunk_size_words)]


def iter_spans(corpus: Corpus) -> Iterable[tuple[Document, Span]]:
    for doc in corpus.documents:
        for span in doc.spans():
            yield doc, span
