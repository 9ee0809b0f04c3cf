"""Question validation: reject questions that paraphrase their source text.

A question is accepted once the cosine similarity between its embedding and
the embedding of the text it was written from drops below a threshold. An
optional reviser (usually an LMM) rewrites rejected questions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Protocol, Sequence

from ..embedding import Embedder, cosine
from ..extraction import ProviderError

ACCEPTED = "accepted"
REJECTED = "rejected"


class QuestionReviser(Protocol):
    identity: str

    def revise(self, question: str, source_text: str, similarity: float) -> str: ...


@dataclass(frozen=True)
class ValidationStep:
    iteration: int
    question: str
    similarity: float
    accepted: bool


@dataclass
class ValidationResult:
    status: str
    question: str
    similarity: float
    iterations: list[ValidationStep] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "question": self.question,
            "similarity": self.similarity,
            "iterations": [asdict(s) for s in self.iterations],
        }


def validate_question(
    question: str,
    source_text: str,
    embedder: Embedder,
    sim_threshold: float = 0.6,
    max_iters: int = 3,
    reviser: QuestionReviser | None = None,
) -> ValidationResult:
    """Check a question against its source text, revising it while too similar.

    A threshold of 1.0 or more accepts unconditionally: cosine can reach 1.0
    (identical texts), and a strict comparison would otherwise reject those.

    Raises:
        ValueError: if ``max_iters`` < 1.
        ProviderError: if the reviser fails or returns an empty question.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    source_vec = embedder.embed_text(source_text)
    steps: list[ValidationStep] = []
    current = question
    for iteration in range(1, max_iters + 1):
        sim = round(cosine(embedder.embed_text(current), source_vec), 9)
        ok = sim < sim_threshold or sim_threshold >= 1.0
        steps.append(ValidationStep(iteration, current, sim, ok))
        if ok:
            return ValidationResult(ACCEPTED, current, sim, steps)
        if reviser is None or iteration == max_iters:
            break
        try:
            revised = reviser.revise(current, source_text, sim)
        except ProviderError:
            raise
        except Exception as exc:  # reviser plugins may raise anything
            raise ProviderError(getattr(reviser, "identity", "reviser"), f"revision failed: {exc}") from exc
        if not isinstance(revised, str) or not revised.strip():
            raise ProviderError(getattr(reviser, "identity", "reviser"), "reviser returned an empty question")
        current = revised.strip()
    return ValidationResult(REJECTED, current, steps[-1].similarity, steps)


class ScriptedReviser:
    """Returns canned revisions in order; handy for tests and dry runs."""

    def __init__(self, revisions: Sequence[str]):
        self.identity = "scripted"
        self._revisions = list(revisions)
        self.calls: list[tuple[str, float]] = []

    def revise(self, question: str, source_text: str, similarity: float) -> str:
        self.calls.append((question, similarity))
        if not self._revisions:
            raise ProviderError(self.identity, "no scripted revision left")
        return self._revisions.pop(0)


class LMMReviser:
    """Asks an LMM client to reword a question away from its source text."""

    def __init__(self, client, template: str | None = None):
        self.client = client
        self.identity = f"lmm:{getattr(client, 'identity', 'client')}"
        self.template = template or resources.files("mmgraphrag").joinpath("prompts/revise_question.txt").read_text("utf-8")

    def revise(self, question: str, source_text: str, similarity: float) -> str:
        prompt = self.template.format(question=question, source_text=source_text, similarity=f"{similarity:.3f}")
        return self.client.complete(prompt, [], getattr(self.client, "temperature", 0.0)).strip()
