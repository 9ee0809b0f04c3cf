"""Test-set format, retrieval and QA metrics, anonymization and question validation."""

from .metrics import (
    HitRecord,
    MatchConfig,
    QARecord,
    QAReport,
    RecallReport,
    grade_qa,
    judge_hit,
    parse_answer_letter,
    recall_ratio,
    token_f1,
)
from .nea import COMMON_WORDS, NEAError, NEARecord, apply_nea, corpus_tokens, generate_alias, pick_target_phrase
from .questions import GenerationFailure, ParseError, generate_questions, load_prompt, parse_generated
from .testset import (
    COMPLEX_QTYPES,
    IMAGE_IMAGE,
    IMAGE_TEXT,
    QTYPES,
    TEXT_IMAGE,
    EvalQuestion,
    TestSetError,
    dumps_testset,
    load_testset,
    parse_question,
    save_testset,
)
from .validation import ACCEPTED, REJECTED, LMMReviser, ScriptedReviser, ValidationResult, ValidationStep, validate_question

__all__ = [name for name in dir() if not name.startswith("_")]
