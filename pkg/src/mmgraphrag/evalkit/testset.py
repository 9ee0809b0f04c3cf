"""Test-set questions and their JSONL file format.

One question per line::

    {"qid": str, "qtype": "text_image"|"image_text"|"image_image", "question": str,
     "choices": [str], "answer": str, "gold_image_id": str|null,
     "gold_source_text": str|null, "doc_id": str}
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

TEXT_IMAGE = "text_image"
IMAGE_TEXT = "image_text"
IMAGE_IMAGE = "image_image"
QTYPES = (TEXT_IMAGE, IMAGE_TEXT, IMAGE_IMAGE)
COMPLEX_QTYPES = (TEXT_IMAGE, IMAGE_TEXT)
LETTERS = "ABCD"

_LETTERED = re.compile(r"^\s*\(\s*([A-Za-z])\s*\)")
_ANSWER = re.compile(r"^\s*\(?\s*([A-Za-z])\s*\)?\s*$")


class TestSetError(ValueError):
    __test__ = False


def choice_letters(choices: Iterable[str]) -> list[str]:
    """Letter of each choice: its own ``(X)`` prefix, else its position."""
    letters = []
    for i, choice in enumerate(choices):
        m = _LETTERED.match(choice)
        letters.append(m.group(1).upper() if m else LETTERS[i])
    return letters


def answer_letter(answer: str) -> str | None:
    m = _ANSWER.match(answer or "")
    return m.group(1).upper() if m else None


@dataclass(frozen=True)
class EvalQuestion:
    qid: str
    qtype: str
    question: str
    choices: tuple[str, ...]
    answer: str
    gold_image_id: str | None = None
    gold_source_text: str | None = None
    doc_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        where = f"question {self.qid!r}"
        if self.qtype not in QTYPES:
            raise TestSetError(f"{where}: unknown qtype {self.qtype!r}")
        if not self.question.strip():
            raise TestSetError(f"{where}: empty question text")
        if not 2 <= len(self.choices) <= 4:
            raise TestSetError(f"{where}: expected 2 to 4 choices, got {len(self.choices)}")
        letters = choice_letters(self.choices)
        if len(set(letters)) != len(letters):
            raise TestSetError(f"{where}: repeated choice letters")
        if answer_letter(self.answer) not in letters:
            raise TestSetError(f"{where}: answer {self.answer!r} is not among the choices")
        if not self.gold_image_id:
            raise TestSetError(f"{where}: {self.qtype} questions need gold_image_id")
        if self.qtype in COMPLEX_QTYPES and not self.gold_source_text:
            raise TestSetError(f"{where}: {self.qtype} questions need gold_source_text")

    @property
    def answer_letter(self) -> str:
        return answer_letter(self.answer)

    def to_dict(self) -> dict:
        row = asdict(self)
        row["choices"] = list(self.choices)
        return row


_FIELDS = {
    "qid": str, "qtype": str, "question": str, "choices": list, "answer": str,
    "gold_image_id": (str, type(None)), "gold_source_text": (str, type(None)), "doc_id": str,
}


def parse_question(row: dict, where: str = "question") -> EvalQuestion:
    if not isinstance(row, dict):
        raise TestSetError(f"{where}: expected a JSON object")
    for name, kind in _FIELDS.items():
        if name not in row:
            if name in ("gold_image_id", "gold_source_text"):
                continue
            raise TestSetError(f"{where}.{name}: missing field")
        if not isinstance(row[name], kind):
            raise TestSetError(f"{where}.{name}: wrong type {type(row[name]).__name__}")
    if not all(isinstance(c, str) for c in row["choices"]):
        raise TestSetError(f"{where}.choices: choices must be strings")
    return EvalQuestion(**{k: row.get(k) for k in _FIELDS})


def load_testset(path: str | Path) -> list[EvalQuestion]:
    questions = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TestSetError(f"line {lineno}: invalid JSON ({exc})") from exc
        questions.append(parse_question(row, f"line {lineno}"))
    qids = [q.qid for q in questions]
    if len(set(qids)) != len(qids):
        raise TestSetError("duplicate qid in test set")
    return questions


def dumps_testset(questions: Iterable[EvalQuestion]) -> str:
    return "".join(json.dumps(q.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for q in questions)


def save_testset(questions: Iterable[EvalQuestion], path: str | Path) -> None:
    Path(path).write_text(dumps_testset(questions), encoding="utf-8")
