"""Named-entity anonymization of image questions.

The phrase in a question that identifies its target image is swapped for an
invented alias, and the document gains one sentence tying the alias back to
the phrase. Similarity-only retrievers lose the cue; a graph retriever can
still follow it through the injected relation.
"""

from __future__ import annotations

import random
import re
from dataclasses import asdict, dataclass, replace

from ..corpus import Corpus, Document
from ..extraction import STOPWORDS, ExtractionProvider, FallbackExtractor, extract_query_entities
from .testset import EvalQuestion

_WORD = re.compile(r"[a-z0-9]+")
_ONSETS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_CODAS = "klmnrsx"

# words that must never be produced as aliases even if absent from the corpus
COMMON_WORDS = frozenset(
    """
    baker banks bison borax cobalt delta dinner donor fever gamma gravel kilos lemon level liver
    lotus madam manor metal model motor nomad paper polar radar rival robot salad salon sonar
    tenor token total vapor visor vodka water zebra
    """.split()
) | STOPWORDS


class NEAError(ValueError):
    pass


@dataclass(frozen=True)
class NEARecord:
    qid: str
    anonymized_qid: str
    original_question: str
    anonymized_question: str
    alias: str
    original_phrase: str
    injected_sentence: str
    doc_id: str
    section_id: str

    def to_dict(self) -> dict:
        return asdict(self)


def corpus_tokens(source: Corpus | Document) -> set[str]:
    docs = source.documents if isinstance(source, Corpus) else (source,)
    texts = []
    for doc in docs:
        texts.append(doc.title)
        for section in doc.sections:
            texts += [section.heading, section.body]
        for image in doc.images:
            texts += [image.caption or "", image.uri]
    return {t for text in texts for t in _WORD.findall(text.casefold())}


def generate_alias(rng: random.Random, forbidden: set[str] | frozenset[str] = frozenset()) -> str:
    """A pronounceable nonsense word (two or three syllables), capitalized."""
    for _ in range(10_000):
        syllables = rng.choice((2, 2, 3))
        word = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables - 1))
        word += rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS)
        if word not in forbidden and word not in COMMON_WORDS:
            return word.capitalize()
    raise NEAError("could not generate an unused alias")


def pick_target_phrase(question: EvalQuestion, document: Document, extractor: ExtractionProvider | None = None) -> str:
    """The longest named entity of the question that the document also mentions."""
    extractor = extractor or FallbackExtractor()
    tokens = corpus_tokens(document)
    text = " ".join([document.title] + [s.body for s in document.sections] + [i.caption or "" for i in document.images]).casefold()
    candidates = [
        m.surface for m in extract_query_entities(question.question, extractor)
        if m.surface.casefold() in text and all(t in tokens for t in _WORD.findall(m.surface.casefold()))
    ]
    if not candidates:
        raise NEAError(f"question {question.qid!r}: no named entity shared with document {document.doc_id!r}")
    return max(candidates, key=lambda s: (len(s), s))


def apply_nea(
    question: EvalQuestion,
    document: Document,
    alias: str,
    target_phrase: str,
    corpus: Corpus | None = None,
) -> tuple[EvalQuestion, Document, NEARecord]:
    """Replace ``target_phrase`` by ``alias`` in the question and register the alias.

    The sentence ``"<alias> is also known as <target_phrase>."`` is appended to
    the section holding the question's gold image (the last section when the
    image is not found).

    Raises:
        NEAError: if the phrase is not in the question or the alias already
            occurs in the corpus (or the document when no corpus is given).
    """
    pattern = re.compile(re.escape(target_phrase), re.IGNORECASE)
    if not target_phrase.strip() or not pattern.search(question.question):
        raise NEAError(f"phrase {target_phrase!r} not found in question {question.qid!r}")
    alias_tokens = set(_WORD.findall(alias.casefold()))
    if not alias_tokens:
        raise NEAError("alias must contain letters or digits")
    used = corpus_tokens(corpus if corpus is not None else document) | corpus_tokens(document)
    clash = alias_tokens & used
    if clash:
        raise NEAError(f"alias {alias!r} collides with corpus token(s) {sorted(clash)}")

    anonymized_text = pattern.sub(alias, question.question)
    sentence = f"{alias} is also known as {target_phrase}."
    section_id = document.sections[-1].section_id
    for image in document.images:
        if image.image_id == question.gold_image_id:
            section_id = image.section_id
    sections = tuple(
        replace(s, body=f"{s.body.rstrip()} {sentence}".strip()) if s.section_id == section_id else s for s in document.sections
    )
    new_doc = replace(document, sections=sections, pages=None)
    new_question = replace(question, qid=f"{question.qid}-nea", question=anonymized_text)
    record = NEARecord(
        question.qid, new_question.qid, question.question, anonymized_text, alias, target_phrase, sentence, document.doc_id, section_id
    )
    return new_question, new_doc, record
