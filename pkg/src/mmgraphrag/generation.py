"""Prompt assembly and the answer-generation client interface."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .corpus import word_count
from .extraction import ProviderError, Triplet
from .retrieval import RetrievedContext

log = logging.getLogger(__name__)

DEFAULT_SYSTEM = (
    "Answer the multiple-choice question using the retrieved context and images. "
    "Reply with the letter of the correct choice in parentheses, for example (A)."
)
LETTERS = "ABCD"
_LETTERED = re.compile(r"^\(\s*([A-Z])\s*\)\s*")


@dataclass(frozen=True)
class PromptConfig:
    delimiter: str = ". "
    image_cap: int = 4
    system: str = DEFAULT_SYSTEM

    def __post_init__(self):
        if self.image_cap < 0:
            raise ValueError("image_cap must be >= 0")

    def to_dict(self) -> dict:
        return {"delimiter": self.delimiter, "image_cap": self.image_cap}


@dataclass(frozen=True)
class Prompt:
    system: str
    context: str
    linked_texts: tuple[str, ...]
    images: tuple[str, ...]
    question: str
    choices: tuple[str, ...] = ()
    word_count: int = 0

    def render(self) -> str:
        blocks = [self.system] if self.system else []
        if self.context:
            blocks.append("Context:\n" + self.context)
        if self.linked_texts:
            blocks.append("Related texts:\n" + "\n".join(self.linked_texts))
        if self.images:
            blocks.append("Images: " + ", ".join(self.images))
        question = "Question: " + self.question
        if self.choices:
            question += "\n" + "\n".join(self.choices)
        blocks.append(question)
        return "\n\n".join(blocks)

    def digest(self) -> str:
        return prompt_hash(self.render(), self.images)


def prompt_hash(prompt: str, images: Sequence[str]) -> str:
    payload = json.dumps({"prompt": prompt, "images": list(images)}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def verbalize_triplets(triplets: Sequence[Triplet], delimiter: str = ". ") -> str:
    """``subject relation object`` sentences joined by ``delimiter`` in input order."""
    return delimiter.join(" ".join(f"{t.subject} {t.relation} {t.object}".split()) for t in triplets)


def letter_choices(choices: Sequence[str]) -> tuple[str, ...]:
    """Prefix choices with ``(A)``, ``(B)``, ... unless they already carry a letter."""
    out = []
    for i, choice in enumerate(choices):
        out.append(choice.strip() if _LETTERED.match(choice.strip()) else f"({LETTERS[i]}) {choice.strip()}")
    return tuple(out)


def context_word_count(context: RetrievedContext, delimiter: str = ". ") -> int:
    """Words of retrieved text: verbalized triplets plus linked texts."""
    return word_count(verbalize_triplets(context.triplets, delimiter)) + sum(word_count(lt.text) for lt in context.linked_texts)


def build_prompt(
    context: RetrievedContext, question: str, choices: Sequence[str] = (), config: PromptConfig | None = None
) -> Prompt:
    config = config or PromptConfig()
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    verbalized = verbalize_triplets(context.triplets, config.delimiter)
    linked = tuple(lt.text for lt in context.linked_texts)
    words = word_count(verbalized) + sum(word_count(t) for t in linked)
    images = tuple(context.image_ids()[: config.image_cap])
    return Prompt(config.system, verbalized, linked, images, question.strip(), letter_choices(choices), words)


# -- clients -----------------------------------------------------------------


class LMMClient(Protocol):
    identity: str
    temperature: float

    def complete(self, prompt: str, images: Sequence[str], temperature: float) -> str: ...


class FixtureClient:
    """Replays answers from a JSONL file of ``{"hash": prompt digest, "text": answer}`` rows."""

    def __init__(self, path: str | Path | None = None, responses: dict[str, str] | None = None, temperature: float = 0.0):
        self.identity = f"fixture:{Path(path).name}" if path else "fixture:memory"
        self.temperature = temperature
        self.responses = dict(responses or {})
        self.calls: list[dict] = []
        if path:
            for line in Path(path).read_text(encoding="utf-8").splitlines():
                if line.strip():
                    row = json.loads(line)
                    self.responses[row["hash"]] = row["text"]

    def complete(self, prompt: str, images: Sequence[str], temperature: float) -> str:
        self.calls.append({"prompt": prompt, "images": list(images), "temperature": temperature})
        key = prompt_hash(prompt, images)
        if key not in self.responses:
            raise ProviderError(self.identity, f"no recorded response for prompt {key[:12]}")
        return self.responses[key]


class HTTPClient:
    """Remote LMM: POST ``{"prompt", "images", "temperature"}`` and read ``{"text"}``."""

    def __init__(self, url: str, temperature: float = 0.0, timeout: float = 60.0):
        self.url = url
        self.temperature = temperature
        self.timeout = timeout
        self.identity = f"http:{url}"

    def complete(self, prompt: str, images: Sequence[str], temperature: float) -> str:
        body = json.dumps({"prompt": prompt, "images": list(images), "temperature": temperature}).encode("utf-8")
        request = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                data = json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise ProviderError(self.identity, f"generation request failed: {exc}") from exc
        if not isinstance(data, dict) or not isinstance(data.get("text"), str):
            raise ProviderError(self.identity, "malformed generation response")
        return data["text"]


def generate_answer(prompt: Prompt, client: LMMClient) -> str:
    """Send a prompt to the client and return its raw answer text."""
    text = client.complete(prompt.render(), list(prompt.images), client.temperature)
    log.info("answer for prompt %s: %r", prompt.digest()[:12], text[:80])
    return text
