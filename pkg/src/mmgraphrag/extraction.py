"""Triplet and named-entity extraction behind a pluggable provider interface.

Three providers ship with the package:

* :class:`FallbackExtractor` -- deterministic, offline, rule based.
* :class:`FixtureExtractor` -- replays pre-extracted output from a JSONL sidecar.
* :class:`HTTPExtractor` -- talks to a remote service over a small JSON protocol.
* :class:`LMMEntityExtractor` -- prompts a generation client for entities.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import unicodedata
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

from .corpus import Document, split_sentences

log = logging.getLogger(__name__)

STOPWORDS = frozenset(
    """
    a about above after again against all also an and any are as at be because been before being
    below between both but by can could did do does doing down during each few for from further
    had has have having he her here hers him his how i if in into is it its just may me might
    more most my no nor not now of off on once only or other our out over own same she should so
    some such than that the their them then there these they this those through to too under
    until up very was we were what when where which while who whom whose why will with would
    yes you your
    """.split()
)


class ProviderError(RuntimeError):
    """A provider failed (transport error or malformed output)."""

    def __init__(self, identity: str, message: str):
        super().__init__(f"[{identity}] {message}")
        self.identity = identity


def normalize(surface: str) -> str:
    """Case-fold, collapse whitespace and trim surrounding punctuation."""
    collapsed = " ".join(surface.casefold().split())
    start, end = 0, len(collapsed)
    while start < end and _is_trim(collapsed[start]):
        start += 1
    while end > start and _is_trim(collapsed[end - 1]):
        end -= 1
    return collapsed[start:end]


def _is_trim(ch: str) -> bool:
    return ch.isspace() or unicodedata.category(ch).startswith("P")


@dataclass(frozen=True)
class EntityMention:
    surface: str
    normalized: str

    @classmethod
    def of(cls, surface: str) -> EntityMention:
        return cls(surface.strip(), normalize(surface))


@dataclass(frozen=True)
class Triplet:
    """A <subject, relation, object> fact with provenance into its source text."""

    subject: str
    relation: str
    object: str
    doc_id: str = ""
    span_id: str = ""
    source_text: str = ""

    def __post_init__(self):
        for name in ("subject", "relation", "object"):
            if not normalize(getattr(self, name)):
                raise ValueError(f"triplet {name} must be non-empty")

    @property
    def key(self) -> tuple[str, str, str]:
        return normalize(self.subject), normalize(self.relation), normalize(self.object)

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "relation": self.relation,
            "object": self.object,
            "doc_id": self.doc_id,
            "span_id": self.span_id,
            "source_text": self.source_text,
        }


class ExtractionProvider(Protocol):
    identity: str
    capabilities: frozenset[str]

    def triplets(self, text: str) -> list[tuple[str, str, str]]: ...

    def entities(self, text: str) -> list[str]: ...


# -- rule-based fallback ---------------------------------------------------

_TOKEN = re.compile(r"\S+")
_EDGE_PUNCT = "\"'“”‘’()[]{}<>«»"
_BREAK_PUNCT = ",.;:!?)]}\"”’"
_OPENERS = "([{\"“'‘"


def _core(token: str) -> str:
    core = token.strip(_EDGE_PUNCT + ",.;:!?")
    if core.endswith(("'s", "’s")):
        core = core[:-2]
    return core


def _is_capitalized(core: str) -> bool:
    letters = [c for c in core if c.isalpha()]
    return bool(letters) and letters[0].isupper()


def _entity_spans(sentence: str) -> list[tuple[int, int, str]]:
    """Character spans of capitalized-token runs in one sentence."""
    spans: list[tuple[int, int, str]] = []
    run: list[tuple[int, int, str]] = []

    def flush():
        if run:
            spans.append((run[0][0], run[-1][1], " ".join(c for _, _, c in run)))
            run.clear()

    for i, m in enumerate(_TOKEN.finditer(sentence)):
        token = m.group()
        core = _core(token)
        if token[0] in _OPENERS:
            flush()
        if not _is_capitalized(core) or core == "I" or (i == 0 and core.casefold() in STOPWORDS):
            flush()
            continue
        start = m.start() + token.find(core)
        run.append((start, start + len(core), core))
        if token[-1] in _BREAK_PUNCT or len(core) < len(token.strip(_EDGE_PUNCT + ",.;:!?")):
            flush()
    flush()
    return spans


class FallbackExtractor:
    """Deterministic rule-based extractor; needs no model and no network.

    Entities are maximal runs of capitalized (or all-caps) tokens, ignoring a
    sentence-initial stop-word. A sentence with at least two entities yields one
    triplet: first entity, the words between the first and last entity, last
    entity.
    """

    identity = "deterministic"
    capabilities = frozenset({"triplets", "entities"})

    def entities(self, text: str) -> list[str]:
        return [surface for sentence in split_sentences(text) for _, _, surface in _entity_spans(sentence)]

    def triplets(self, text: str) -> list[tuple[str, str, str]]:
        out = []
        for sentence in split_sentences(text):
            spans = _entity_spans(sentence)
            if len(spans) < 2:
                continue
            first, last = spans[0], spans[-1]
            between = re.sub(r"^['’]s\b", "", sentence[first[1] : last[0]].strip())
            relation = " ".join(_core(t) for t in between.split() if _core(t))
            if not relation:
                continue
            out.append((first[2], relation, last[2]))
        return out


# -- replay and remote providers --------------------------------------------


def input_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class FixtureExtractor:
    """Replays extraction output stored in a JSONL sidecar.

    Each line is ``{"hash": sha256(text), "task": "triplets"|"entities", ...}``
    carrying either a ``"triplets": [[s, r, o], ...]`` or an ``"entities"`` list.
    Misses go to ``fallback`` when one is given, otherwise raise ProviderError.
    """

    capabilities = frozenset({"triplets", "entities"})

    def __init__(self, path: str | Path, fallback: ExtractionProvider | None = None):
        self.path = Path(path)
        self.identity = f"fixture:{self.path.name}"
        self.fallback = fallback
        self._table: dict[tuple[str, str], list] = {}
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                self._table[(row["task"], row["hash"])] = row[row["task"]]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ProviderError(self.identity, f"line {lineno}: malformed sidecar row ({exc})") from exc

    @staticmethod
    def record(task: str, text: str, payload: list) -> dict:
        return {"hash": input_hash(text), "task": task, task: payload}

    def _lookup(self, task: str, text: str):
        key = (task, input_hash(text))
        if key in self._table:
            return self._table[key]
        if self.fallback is None:
            raise ProviderError(self.identity, f"no {task} recorded for input {key[1][:12]}")
        return getattr(self.fallback, task)(text)

    def triplets(self, text: str) -> list[tuple[str, str, str]]:
        return [tuple(t) for t in self._lookup("triplets", text)]

    def entities(self, text: str) -> list[str]:
        return list(self._lookup("entities", text))


class HTTPExtractor:
    """Remote provider: POST ``{"task", "text"}``, expect ``{"triplets"}`` or ``{"entities"}``."""

    capabilities = frozenset({"triplets", "entities"})

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout
        self.identity = f"http:{url}"

    def _call(self, task: str, text: str):
        body = json.dumps({"task": task, "text": text}).encode("utf-8")
        request = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                payload = json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise ProviderError(self.identity, f"{task} request failed: {exc}") from exc
        if not isinstance(payload, dict) or not isinstance(payload.get(task), list):
            raise ProviderError(self.identity, f"malformed {task} response")
        return payload[task]

    def triplets(self, text: str) -> list[tuple[str, str, str]]:
        rows = self._call("triplets", text)
        if not all(isinstance(r, list) and len(r) == 3 and all(isinstance(x, str) for x in r) for r in rows):
            raise ProviderError(self.identity, "triplets must be [subject, relation, object] string triples")
        return [tuple(r) for r in rows]

    def entities(self, text: str) -> list[str]:
        rows = self._call("entities", text)
        if not all(isinstance(r, str) for r in rows):
            raise ProviderError(self.identity, "entities must be strings")
        return rows


class LMMEntityExtractor:
    """Entities from a prompted LMM client; triplets from ``triplet_provider``.

    The client only needs ``complete(prompt, images, temperature) -> str`` and
    must answer with a JSON list of strings.
    """

    def __init__(self, client, triplet_provider: ExtractionProvider | None = None, template: str | None = None):
        self.client = client
        self.triplet_provider = triplet_provider or FallbackExtractor()
        self.identity = f"lmm:{getattr(client, 'identity', 'client')}"
        self.template = template or resources.files("mmgraphrag").joinpath("prompts/query_entities.txt").read_text("utf-8")

    def entities(self, text: str) -> list[str]:
        raw = self.client.complete(self.template.replace("{text}", text), [], getattr(self.client, "temperature", 0.0))
        match = re.search(r"\[.*\]", raw, re.DOTALL)
        try:
            rows = json.loads(match.group(0)) if match else None
        except json.JSONDecodeError:
            rows = None
        if not isinstance(rows, list) or not all(isinstance(r, str) for r in rows):
            raise ProviderError(self.identity, f"expected a JSON list of strings, got {raw[:60]!r}")
        return rows

    def triplets(self, text: str) -> list[tuple[str, str, str]]:
        return self.triplet_provider.triplets(text)


# -- operations ------------------------------------------------------------


def extract_triplets(
    text: str, provider: ExtractionProvider, *, doc_id: str = "", span_id: str = ""
) -> list[Triplet]:
    """Extract de-duplicated triplets from ``text``, tagging each with provenance."""
    if not text or not text.strip():
        raise ValueError("text must be non-empty")
    try:
        raw = provider.triplets(text)
    except ProviderError:
        raise
    except Exception as exc:  # provider bugs surface with provider identity
        raise ProviderError(provider.identity, f"triplet extraction failed: {exc}") from exc
    seen: set[tuple[str, str, str]] = set()
    out = []
    for item in raw:
        try:
            s, r, o = item
            triplet = Triplet(s, r, o, doc_id=doc_id, span_id=span_id, source_text=text)
        except (ValueError, TypeError) as exc:
            raise ProviderError(provider.identity, f"malformed triplet {item!r}") from exc
        if triplet.key not in seen:
            seen.add(triplet.key)
            out.append(triplet)
    return out


def extract_document_triplets(document: Document, provider: ExtractionProvider, jobs: int = 1) -> list[Triplet]:
    """Run triplet extraction over every span of a document.

    Spans may be processed by up to ``jobs`` threads; results are merged in span
    order and de-duplicated per document by normalized (s, r, o).
    """
    spans = document.spans()

    def one(span):
        return extract_triplets(span.text, provider, doc_id=document.doc_id, span_id=span.span_id)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, spans))
    else:
        results = [one(span) for span in spans]
    seen: set[tuple[str, str, str]] = set()
    out = []
    for batch in results:
        for t in batch:
            if t.key not in seen:
                seen.add(t.key)
                out.append(t)
    return out


def _entities(text: str, provider: ExtractionProvider, *, allow_empty: bool) -> list[EntityMention]:
    if not text or not text.strip():
        if allow_empty:
            return []
        raise ValueError("text must be non-empty")
    try:
        surfaces = provider.entities(text)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(provider.identity, f"entity extraction failed: {exc}") from exc
    seen: set[str] = set()
    mentions = []
    for surface in surfaces:
        mention = EntityMention.of(surface)
        if mention.normalized and mention.normalized not in seen:
            seen.add(mention.normalized)
            mentions.append(mention)
    return mentions


def extract_query_entities(query: str, provider: ExtractionProvider) -> list[EntityMention]:
    return _entities(query, provider, allow_empty=False)


def extract_caption_entities(caption: str | None, provider: ExtractionProvider) -> list[EntityMention]:
    """Named entities of an image caption; an empty or missing caption yields none."""
    return _entities(caption or "", provider, allow_empty=True)


def triplets_from_records(rows: Sequence[dict]) -> list[Triplet]:
    return [Triplet(**row) for row in rows]
