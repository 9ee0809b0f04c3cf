"""Question authoring through an LMM client.

The shipped templates ask for output in a loose key/value format::

    "question" : "...",
    "choices" : ['(A) ...', '(B) ...'],
    "answer" : '(B)',
    "used textual facts" : '...'

Keys may use single or double quotes and values are Python literals.
"""

from __future__ import annotations

import ast
import random
import re
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

from ..corpus import Document
from .testset import COMPLEX_QTYPES, IMAGE_IMAGE, IMAGE_TEXT, QTYPES, TEXT_IMAGE, EvalQuestion, TestSetError

PROMPT_FILES = {TEXT_IMAGE: "text_image.txt", IMAGE_TEXT: "image_text.txt", IMAGE_IMAGE: "image_image.txt"}
_KEY = re.compile(r"""["'](question|choices|answer|used textual facts)["']\s*:""", re.IGNORECASE)


class ParseError(ValueError):
    """Generated output could not be turned into a question; ``raw`` keeps the text."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


def load_prompt(qtype: str) -> str:
    if qtype not in PROMPT_FILES:
        raise ValueError(f"unknown question type {qtype!r}")
    return resources.files("mmgraphrag").joinpath("prompts", PROMPT_FILES[qtype]).read_text("utf-8")


def _literal(value: str):
    value = value.strip().rstrip(",").strip()
    # drop trailing comment lines such as "# Used caption: ..."
    value = "\n".join(line for line in value.splitlines() if not line.lstrip().startswith("#")).strip().rstrip(",").strip()
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return value


def parse_generated(raw: str) -> dict:
    """Extract ``question``, ``choices``, ``answer`` and ``used textual facts``.

    Raises:
        ParseError: if question, choices or answer is missing or malformed.
    """
    matches = list(_KEY.finditer(raw or ""))
    fields: dict = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        key = m.group(1).lower()
        fields.setdefault(key, _literal(raw[m.end():end]))
    for key in ("question", "choices", "answer"):
        if key not in fields:
            raise ParseError(f"generated output lacks {key!r}", raw)
    if not isinstance(fields["question"], str) or not fields["question"].strip():
        raise ParseError("question must be a non-empty string", raw)
    if not isinstance(fields["choices"], (list, tuple)) or not all(isinstance(c, str) for c in fields["choices"]):
        raise ParseError("choices must be a list of strings", raw)
    if not isinstance(fields["answer"], str):
        raise ParseError("answer must be a string", raw)
    facts = fields.get("used textual facts")
    fields["used textual facts"] = facts if isinstance(facts, str) else None
    return fields


def to_question(fields: dict, *, qid: str, qtype: str, gold_image_id: str, doc_id: str, raw: str = "") -> EvalQuestion:
    try:
        return EvalQuestion(
            qid=qid,
            qtype=qtype,
            question=fields["question"].strip(),
            choices=tuple(c.strip() for c in fields["choices"]),
            answer=fields["answer"].strip(),
            gold_image_id=gold_image_id,
            gold_source_text=fields.get("used textual facts"),
            doc_id=doc_id,
        )
    except TestSetError as exc:
        raise ParseError(str(exc), raw) from exc


@dataclass(frozen=True)
class GenerationFailure:
    qtype: str
    image_id: str
    error: str
    raw: str


def textual_context(document: Document, image_id: str) -> str:
    image = document.image(image_id)
    return (image.caption or "").strip() or document.section(image.section_id).body


def generate_questions(
    document: Document,
    client,
    *,
    page_index: int | None = None,
    qtypes: Sequence[str] = QTYPES,
    seed: int = 0,
    prompts: dict[str, str] | None = None,
) -> tuple[list[EvalQuestion], list[GenerationFailure]]:
    """One question per type about a seeded pick among the page's images.

    Images are drawn without replacement, so a page needs as many images as
    requested types. Failed generations are returned with their raw output.
    """
    images = [i for i in document.images if page_index is None or i.page_index == page_index]
    if len(images) < len(qtypes):
        raise ValueError(f"need {len(qtypes)} images, page has {len(images)}")
    picks = random.Random(seed).sample(sorted(i.image_id for i in images), len(qtypes))
    questions, failures = [], []
    for qtype, image_id in zip(qtypes, picks):
        template = (prompts or {}).get(qtype) or load_prompt(qtype)
        prompt = template.replace("{textual_context}", textual_context(document, image_id))
        raw = client.complete(prompt, [document.image(image_id).uri], getattr(client, "temperature", 0.0))
        try:
            fields = parse_generated(raw)
            if qtype in COMPLEX_QTYPES and not fields["used textual facts"]:
                fields["used textual facts"] = textual_context(document, image_id)
            questions.append(to_question(fields, qid=f"{document.doc_id}-{qtype}-{image_id}", qtype=qtype,
                                         gold_image_id=image_id, doc_id=document.doc_id, raw=raw))
        except ParseError as exc:
            failures.append(GenerationFailure(qtype, image_id, str(exc), exc.raw))
    return questions, failures
