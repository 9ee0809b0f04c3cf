"""Shared test doubles and hand-computed evaluation cases."""

from __future__ import annotations

from mmgraphrag.embedding import Embedder
from mmgraphrag.evalkit import EvalQuestion
from mmgraphrag.retrieval import SIMILARITY, ImageHit, LinkedText, RetrievedContext


class TableProvider:
    """Embeds payloads through a lookup table; unknown payloads map to the last axis."""

    identity = "table"

    def __init__(self, table, dim=3):
        self.table = table
        self.dim = dim

    def embed(self, modality, payload):
        return self.table.get(payload, [0.0] * (self.dim - 1) + [1.0])


def table_embedder(table, dim=3):
    return Embedder(TableProvider(table, dim))


CHOICES = ("(A) yes", "(B) no")


def _q(qid, qtype, gold_image, gold_text=None):
    return EvalQuestion(qid, qtype, f"Question {qid}?", CHOICES, "(A)", gold_image, gold_text, "h")


def _ctx(images=(), texts=()):
    return RetrievedContext(images=[ImageHit(i, SIMILARITY, 0.5) for i in images], linked_texts=[LinkedText(t) for t in texts])


# Ten questions with contexts; the hit column and the token-F1 values were worked out by hand.
HAND_CASES = [
    # text_image: gold image membership
    (_q("ti1", "text_image", "img1", "x"), _ctx(["img1"]), True),
    (_q("ti2", "text_image", "img2", "x"), _ctx(["img3"]), False),
    (_q("ti3", "text_image", "img3", "x"), _ctx(["img1", "img3"]), True),
    (_q("ti4", "text_image", "img4", "x"), _ctx(["img2", "img4"]), True),
    # image_text: F1 = 2 * (6/10 * 6/6) / (6/10 + 6/6) = 0.75
    (_q("it1", "image_text", "img5", "Oskar Brandt designed the Marlow Pavilion"),
     _ctx(texts=["Oskar Brandt designed the Marlow Pavilion for the Carrow Festival."]), True),
    # F1 = 0.6 (3 of 5 tokens shared each way)
    (_q("it2", "image_text", "img6", "the Quenby windmill burned down"), _ctx(texts=["the Quenby mill fell down"]), True),
    # F1 = 2 * (2/5 * 2/7) / (2/5 + 2/7) = 1/3
    (_q("it3", "image_text", "img7", "Hanna Kolb won the race in Velden"), _ctx(texts=["Velden Stadium opened in 1936"]), False),
    (_q("it4", "image_text", "img8", "Ansel Moray painted the harbor"), _ctx(), False),
    # image_image: gold image membership
    (_q("ii1", "image_image", "img9"), _ctx(["img9"]), True),
    (_q("ii2", "image_image", "img10"), _ctx(["img2"]), False),
]

HAND_F1 = {"it1": 0.75, "it2": 0.6, "it3": 1 / 3, "it4": 0.0}

# per type: 3/4, 2/4, 1/2; overall averages the two complex types
HAND_RECALL = {"text_image": 0.75, "image_text": 0.5, "image_image": 0.5}
HAND_OVERALL = 0.625
HAND_MEAN_IMAGES = 0.8  # (1 + 1 + 2 + 2 + 0 + 0 + 0 + 0 + 1 + 1) / 10
HAND_MEAN_WORDS = 2.0  # (10 + 5 + 5) / 10

# Raw model answers for the ten hand questions (all gold "(A)"), graded by hand:
# correct: ti1, ti2, ti4, it1, it3, ii1 ; wrong: ti3, it2 ; unparseable: it4, ii2
HAND_ANSWERS = {
    "ti1": "(A)",
    "ti2": "The answer is A.",
    "ti3": "(B)",
    "ti4": "I would say (A) because of the caption",
    "it1": "A",
    "it2": "Probably B, not A",
    "it3": "( A )",
    "it4": "unsure",
    "ii1": "Answer: (A) yes",
    "ii2": "no idea",
}
HAND_ACCURACY = 0.6
HAND_QA_PER_TYPE = {"text_image": 0.75, "image_text": 0.5, "image_image": 0.5}
HAND_FLAGGED = {"it4", "ii2"}
