"""Retrieval recall, retrieved-volume means and multiple-choice QA grading."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from statistics import fmean
from typing import Mapping, Sequence

from ..generation import context_word_count
from ..retrieval import RetrievedContext
from .testset import COMPLEX_QTYPES, IMAGE_TEXT, QTYPES, EvalQuestion, TestSetError

_TOKEN = re.compile(r"\w+")


@dataclass(frozen=True)
class MatchConfig:
    f1_threshold: float = 0.5


def token_f1(gold: str, candidate: str) -> float:
    """Bag-of-tokens F1 over lower-cased word tokens."""
    g = Counter(_TOKEN.findall(gold.lower()))
    c = Counter(_TOKEN.findall(candidate.lower()))
    overlap = sum((g & c).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(c.values())
    recall = overlap / sum(g.values())
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class HitRecord:
    qid: str
    qtype: str
    hit: bool
    evidence: str
    best_f1: float | None = None


def judge_hit(question: EvalQuestion, context: RetrievedContext, match: MatchConfig | None = None) -> HitRecord:
    """Whether the question's gold evidence is in the retrieved context.

    Image-text questions need their gold source text: some retrieved text must
    reach the F1 threshold against it. The other types need the gold image.
    """
    match = match or MatchConfig()
    if question.qtype == IMAGE_TEXT:
        if not question.gold_source_text:
            raise TestSetError(f"question {question.qid!r} lacks gold_source_text")
        best = max((token_f1(question.gold_source_text, text) for text in context.texts()), default=0.0)
        return HitRecord(question.qid, question.qtype, best >= match.f1_threshold, "text", round(best, 6))
    if not question.gold_image_id:
        raise TestSetError(f"question {question.qid!r} lacks gold_image_id")
    return HitRecord(question.qid, question.qtype, question.gold_image_id in context.image_ids(), "image")


@dataclass
class RecallReport:
    per_type: dict[str, float | None]
    overall: float | None
    mean_words: float
    mean_images: float
    counts: dict[str, int]
    records: list[HitRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "recall": dict(self.per_type),
            "overall": self.overall,
            "overall_definition": "mean of text_image and image_text recall",
            "mean_retrieved_words": self.mean_words,
            "mean_retrieved_images": self.mean_images,
            "counts": dict(self.counts),
            "records": [asdict(r) for r in self.records],
        }


def recall_ratio(records: Sequence[HitRecord], contexts: Sequence[RetrievedContext], delimiter: str = ". ") -> RecallReport:
    """Hit fraction per question type, their complex-type mean, and context volume means."""
    if not records:
        raise ValueError("recall_ratio needs at least one hit record")
    per_type: dict[str, float | None] = {}
    counts: dict[str, int] = {}
    for qtype in QTYPES:
        rows = [r for r in records if r.qtype == qtype]
        counts[qtype] = len(rows)
        per_type[qtype] = sum(r.hit for r in rows) / len(rows) if rows else None
    complex_recalls = [per_type[t] for t in COMPLEX_QTYPES if per_type[t] is not None]
    overall = fmean(complex_recalls) if complex_recalls else None
    mean_words = fmean(context_word_count(c, delimiter) for c in contexts) if contexts else 0.0
    mean_images = fmean(len(c.images) for c in contexts) if contexts else 0.0
    return RecallReport(per_type, overall, mean_words, mean_images, counts, list(records))


# -- QA grading --------------------------------------------------------------

_PAREN = re.compile(r"\(\s*([A-D])\s*\)")
_BARE = re.compile(r"\b([A-D])\b")


def parse_answer_letter(raw: str) -> str | None:
    """First parenthesized letter A-D, else the first standalone capital A-D."""
    m = _PAREN.search(raw or "") or _BARE.search(raw or "")
    return m.group(1) if m else None


@dataclass(frozen=True)
class QARecord:
    qid: str
    qtype: str
    predicted: str | None
    gold: str
    correct: bool
    flagged: bool


@dataclass
class QAReport:
    accuracy: float
    per_type: dict[str, float | None]
    records: list[QARecord]

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "per_type": dict(self.per_type), "records": [asdict(r) for r in self.records]}


def grade_qa(raw_answers: Mapping[str, str], questions: Sequence[EvalQuestion]) -> QAReport:
    """Exact letter-match accuracy; unparseable answers count as wrong and are flagged."""
    missing = [q.qid for q in questions if q.qid not in raw_answers]
    if missing:
        raise ValueError(f"no raw answer for questions {missing}")
    records = []
    for q in sorted(questions, key=lambda q: q.qid):
        predicted = parse_answer_letter(raw_answers[q.qid])
        records.append(QARecord(q.qid, q.qtype, predicted, q.answer_letter, predicted == q.answer_letter, predicted is None))
    per_type = {}
    for qtype in QTYPES:
        rows = [r for r in records if r.qtype == qtype]
        per_type[qtype] = sum(r.correct for r in rows) / len(rows) if rows else None
    accuracy = sum(r.correct for r in records) / len(records) if records else 0.0
    return QAReport(accuracy, per_type, records)
