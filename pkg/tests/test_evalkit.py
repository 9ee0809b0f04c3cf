from __future__ import annotations

import json
import random

import pytest
from conftest import corpus_triplets
from helpers import (
    HAND_CASES,
    HAND_F1,
    HAND_MEAN_IMAGES,
    HAND_MEAN_WORDS,
    HAND_OVERALL,
    HAND_RECALL,
    table_embedder,
)

from mmgraphrag.corpus import Corpus, Document, ImageAsset, Section
from mmgraphrag.embedding import seeded_embedder
from mmgraphrag.evalkit import (
    ACCEPTED,
    REJECTED,
    COMMON_WORDS,
    EvalQuestion,
    LMMReviser,
    MatchConfig,
    NEAError,
    ParseError,
    ScriptedReviser,
    TestSetError,
    apply_nea,
    corpus_tokens,
    generate_alias,
    generate_questions,
    grade_qa,
    judge_hit,
    load_prompt,
    load_testset,
    parse_answer_letter,
    parse_generated,
    pick_target_phrase,
    recall_ratio,
    save_testset,
    token_f1,
    validate_question,
)
from mmgraphrag.extraction import ProviderError
from mmgraphrag.graph import GraphBuildConfig, build_graph
from mmgraphrag.retrieval import SIMILARITY, ImageHit, LinkedText, RetrievedContext

LANDMARK_DOC = Document(
    "paris",
    "Paris landmarks",
    (
        Section("paris-s1", "Tower", "The Eiffel Tower stands on the Champ de Mars."),
        Section("paris-s2", "Gallery", "Visitors queue at the Louvre."),
    ),
    (ImageAsset("paris-img1", "img/tower-at-dusk.jpg", "The Eiffel Tower at dusk", "paris-s1"),),
)
LANDMARK_Q = EvalQuestion(
    "p1", "image_image", "Does the Eiffel Tower photo show a flag on the top?", ("(A) yes", "(B) no"), "(A)", "paris-img1", None, "paris"
)


def _question(qid, answer="(C)", qtype="text_image"):
    return EvalQuestion(qid, qtype, "Which?", ("(A) a", "(B) b", "(C) c", "(D) d"), answer, "img", "gold text", "d")


class TestMetrics:
    def test_token_f1_hand_values(self):
        for question, context, _ in HAND_CASES:
            if question.qid in HAND_F1:
                best = max((token_f1(question.gold_source_text, t) for t in context.texts()), default=0.0)
                assert best == pytest.approx(HAND_F1[question.qid])

    def test_token_f1_edges(self):
        assert token_f1("a b", "a b") == 1.0
        assert token_f1("a b", "") == 0.0
        assert token_f1("A, B!", "b a") == 1.0

    def test_hand_hits(self):
        for question, context, hit in HAND_CASES:
            assert judge_hit(question, context).hit is hit, question.qid

    def test_hand_recall_report(self):
        records = [judge_hit(q, c) for q, c, _ in HAND_CASES]
        report = recall_ratio(records, [c for _, c, _ in HAND_CASES])
        assert report.per_type == pytest.approx(HAND_RECALL)
        assert report.overall == pytest.approx(HAND_OVERALL)
        assert report.mean_images == pytest.approx(HAND_MEAN_IMAGES)
        assert report.mean_words == pytest.approx(HAND_MEAN_WORDS)
        assert report.counts == {"text_image": 4, "image_text": 4, "image_image": 2}

    def test_simple_ratios(self):
        q = [_question(f"q{i}") for i in range(4)]
        hit = RetrievedContext(images=[ImageHit("img", SIMILARITY, 1.0)])
        miss = RetrievedContext()
        records = [judge_hit(q[0], hit), judge_hit(q[1], hit), judge_hit(q[2], miss), judge_hit(q[3], miss)]
        assert recall_ratio(records, []).per_type["text_image"] == 0.5
        assert recall_ratio(records[:2], []).per_type["text_image"] == 1.0

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            recall_ratio([], [])
        assert not judge_hit(_question("q"), RetrievedContext()).hit

    def test_threshold_is_configurable(self):
        question, context, _ = HAND_CASES[5]  # F1 = 0.6
        assert judge_hit(question, context, MatchConfig(0.6)).hit
        assert not judge_hit(question, context, MatchConfig(0.61)).hit

    def test_superset_never_loses_a_hit(self):
        rng = random.Random(0)
        words = "irene dalton starred harbor revue marlow pavilion oskar brandt quenby".split()
        for _ in range(1000):
            gold = " ".join(rng.sample(words, rng.randint(2, 6)))
            q = EvalQuestion("m", rng.choice(["image_text", "text_image"]), "Q?", ("(A) a", "(B) b"), "(A)", f"i{rng.randint(0, 4)}", gold, "d")
            images = [f"i{rng.randint(0, 4)}" for _ in range(rng.randint(0, 3))]
            texts = [" ".join(rng.sample(words, rng.randint(1, 5))) for _ in range(rng.randint(0, 3))]
            small = RetrievedContext([], [ImageHit(i, SIMILARITY, 0.1) for i in images], [LinkedText(t) for t in texts])
            extra_images = images + [f"i{rng.randint(0, 4)}"]
            extra_texts = texts + [" ".join(rng.sample(words, rng.randint(1, 5)))]
            big = RetrievedContext([], [ImageHit(i, SIMILARITY, 0.1) for i in extra_images], [LinkedText(t) for t in extra_texts])
            assert judge_hit(q, small).hit <= judge_hit(q, big).hit


class TestGradeQA:
    def test_examples(self):
        qs = [_question("a", "(C)"), _question("b", "(B)"), _question("c", "(A)")]
        report = grade_qa({"a": "(C)", "b": "The answer is B.", "c": "unsure"}, qs)
        by_id = {r.qid: r for r in report.records}
        assert by_id["a"].correct and by_id["b"].correct
        assert not by_id["c"].correct and by_id["c"].flagged
        assert report.accuracy == pytest.approx(2 / 3)

    def test_parse_letter(self):
        assert parse_answer_letter("I pick ( D ) because") == "D"
        assert parse_answer_letter("Option B, not (C)") == "C"
        assert parse_answer_letter("a lowercase b") is None

    def test_order_invariant(self):
        qs = [_question(f"q{i}", f"({'ABCD'[i % 4]})") for i in range(8)]
        answers = {q.qid: f"({'ABCD'[(i * 3) % 4]})" for i, q in enumerate(qs)}
        assert grade_qa(answers, qs) == grade_qa(answers, list(reversed(qs)))

    def test_missing_answer(self):
        with pytest.raises(ValueError, match="no raw answer"):
            grade_qa({}, [_question("q")])


class TestTestSet:
    def test_six_questions(self, fixtures_dir):
        assert len(load_testset(fixtures_dir / "six_questions.jsonl")) == 6

    def test_empty_file(self, tmp_path):
        (tmp_path / "t.jsonl").write_text("")
        assert load_testset(tmp_path / "t.jsonl") == []

    def test_answer_outside_choices(self, tmp_path):
        row = _question("q").to_dict() | {"answer": "(E)"}
        (tmp_path / "t.jsonl").write_text(json.dumps(row) + "\n")
        with pytest.raises(TestSetError, match="not among the choices"):
            load_testset(tmp_path / "t.jsonl")

    def test_schema_errors(self, tmp_path):
        for row, message in (
            ({"qid": "q"}, "missing field"),
            (_question("q").to_dict() | {"choices": "abc"}, "wrong type"),
            (_question("q").to_dict() | {"qtype": "audio"}, "unknown qtype"),
            (_question("q").to_dict() | {"gold_source_text": None}, "gold_source_text"),
        ):
            (tmp_path / "t.jsonl").write_text(json.dumps(row) + "\n")
            with pytest.raises(TestSetError, match=message):
                load_testset(tmp_path / "t.jsonl")

    def test_duplicate_qids(self, tmp_path):
        line = json.dumps(_question("q").to_dict()) + "\n"
        (tmp_path / "t.jsonl").write_text(line * 2)
        with pytest.raises(TestSetError, match="duplicate"):
            load_testset(tmp_path / "t.jsonl")

    def test_round_trip(self, tmp_path, fixture_questions):
        save_testset(fixture_questions, tmp_path / "t.jsonl")
        assert load_testset(tmp_path / "t.jsonl") == fixture_questions


class TestNEA:
    def test_substitution_and_injected_sentence(self):
        new_q, new_doc, record = apply_nea(LANDMARK_Q, LANDMARK_DOC, "ZORVEX", "Eiffel Tower")
        assert new_q.question == "Does the ZORVEX photo show a flag on the top?"
        assert new_q.qid == "p1-nea"
        assert record.injected_sentence == "ZORVEX is also known as Eiffel Tower."
        assert new_doc.section("paris-s1").body.endswith("ZORVEX is also known as Eiffel Tower.")
        assert new_doc.section("paris-s2") == LANDMARK_DOC.section("paris-s2")
        assert "Eiffel Tower" not in new_q.question and "ZORVEX" in new_q.question

    def test_alias_collision(self):
        with pytest.raises(NEAError, match="collides"):
            apply_nea(LANDMARK_Q, LANDMARK_DOC, "Louvre", "Eiffel Tower")

    def test_phrase_missing(self):
        with pytest.raises(NEAError, match="not found"):
            apply_nea(LANDMARK_Q, LANDMARK_DOC, "ZORVEX", "Big Ben")

    def test_alias_and_phrase_share_a_component(self, extractor):
        _, new_doc, _ = apply_nea(LANDMARK_Q, LANDMARK_DOC, "ZORVEX", "Eiffel Tower")
        corpus = Corpus("c", (new_doc,))
        graph = build_graph(corpus, corpus_triplets(corpus, extractor), GraphBuildConfig(link_kinds=()), None, extractor)
        index = graph.component_index
        assert index["zorvex"] == index["eiffel tower"]

    def test_pick_target_phrase(self):
        assert pick_target_phrase(LANDMARK_Q, LANDMARK_DOC) == "Eiffel Tower"
        stray = EvalQuestion("p2", "image_image", "Is Big Ben tall?", ("(A) yes", "(B) no"), "(A)", "paris-img1", None, "paris")
        with pytest.raises(NEAError, match="no named entity"):
            pick_target_phrase(stray, LANDMARK_DOC)

    def test_generated_aliases_are_fresh(self, fixture_corpus):
        forbidden = corpus_tokens(fixture_corpus)
        rng = random.Random(0)
        aliases = [generate_alias(rng, forbidden) for _ in range(200)]
        for alias in aliases:
            assert alias[0].isupper() and alias.isalpha()
            assert alias.lower() not in forbidden and alias.lower() not in COMMON_WORDS
        assert [generate_alias(random.Random(0), forbidden) for _ in range(3)] == [aliases[0]] * 3

    def test_shipped_nea_fixture(self, fixtures_dir):
        originals = {q.qid: q for q in load_testset(fixtures_dir / "nea" / "original_testset.jsonl")}
        for q in load_testset(fixtures_dir / "nea" / "nea_testset.jsonl"):
            source = originals[q.qid.removesuffix("-nea")]
            assert q.gold_image_id == source.gold_image_id and q.question != source.question


class TestValidation:
    TABLE = {
        "source": [1.0, 0.0, 0.0],
        "close": [0.9, 0.43588989, 0.0],  # cosine 0.9
        "far": [0.3, 0.9539392, 0.0],  # cosine 0.3
        "mid": [0.6, 0.8, 0.0],  # cosine 0.6
    }

    def test_low_similarity_accepted(self):
        result = validate_question("far", "source", table_embedder(self.TABLE))
        assert result.status == ACCEPTED and len(result.iterations) == 1
        assert result.similarity == pytest.approx(0.3)

    def test_threshold_is_strict(self):
        assert validate_question("mid", "source", table_embedder(self.TABLE), sim_threshold=0.6).status == REJECTED

    def test_no_reviser_rejects(self):
        result = validate_question("close", "source", table_embedder(self.TABLE))
        assert result.status == REJECTED and len(result.iterations) == 1
        assert result.similarity == pytest.approx(0.9)

    def test_scripted_reviser_accepts_on_second_iteration(self):
        reviser = ScriptedReviser(["far"])
        result = validate_question("close", "source", table_embedder(self.TABLE), reviser=reviser)
        assert result.status == ACCEPTED and result.question == "far"
        assert [s.iteration for s in result.iterations] == [1, 2]
        assert reviser.calls == [("close", pytest.approx(0.9))]

    def test_gives_up_after_max_iters(self):
        reviser = ScriptedReviser(["close", "close", "close"])
        result = validate_question("close", "source", table_embedder(self.TABLE), max_iters=3, reviser=reviser)
        assert result.status == REJECTED and len(result.iterations) == 3

    def test_reviser_failure(self):
        class Broken:
            identity = "broken"

            def revise(self, question, source_text, similarity):
                raise RuntimeError("down")

        with pytest.raises(ProviderError, match="broken"):
            validate_question("close", "source", table_embedder(self.TABLE), reviser=Broken())
        with pytest.raises(ProviderError, match="empty"):
            validate_question("close", "source", table_embedder(self.TABLE), reviser=ScriptedReviser(["  "]))

    def test_max_iters_precondition(self):
        with pytest.raises(ValueError):
            validate_question("far", "source", table_embedder(self.TABLE), max_iters=0)

    def test_threshold_extremes(self, fixture_questions):
        embedder = seeded_embedder(0)
        for q in fixture_questions:
            source = q.gold_source_text or q.question
            assert validate_question(q.question, source, embedder, sim_threshold=1.0).status == ACCEPTED
            assert validate_question(source, source, embedder, sim_threshold=1.0).status == ACCEPTED
            assert validate_question(q.question, source, embedder, sim_threshold=0.0).status == REJECTED

    def test_lmm_reviser_prompt(self):
        class Client:
            identity = "echo"
            temperature = 0.0

            def __init__(self):
                self.prompts = []

            def complete(self, prompt, images, temperature):
                self.prompts.append(prompt)
                return " far "

        client = Client()
        result = validate_question("close", "source", table_embedder(self.TABLE), reviser=LMMReviser(client))
        assert result.question == "far"
        assert "close" in client.prompts[0] and "source" in client.prompts[0]


# Output in the generation prompts' format, including a trailing comment line.
GENERATED = """'question': "The image shows a striker in a white kit. Which club did he play for?",
'choices': ['(A) Legia Warsaw', '(B) Wisla Krakow', '(C) Lech Poznan', '(D) Gornik Zabrze'],
'answer': '(B)'
# The answer comes from the caption.
"used textual facts": 'Frankowski played for Wisla Krakow.'
"""


class TestQuestionGeneration:
    def test_parse(self):
        fields = parse_generated(GENERATED)
        assert fields["answer"] == "(B)"
        assert fields["choices"][1] == "(B) Wisla Krakow"
        assert fields["used textual facts"] == "Frankowski played for Wisla Krakow."

    def test_missing_choices(self):
        raw = GENERATED.replace("'choices'", "'options'")
        with pytest.raises(ParseError, match="choices") as info:
            parse_generated(raw)
        assert info.value.raw == raw

    def test_prompts_ship(self):
        for qtype in ("text_image", "image_text"):
            assert "{textual_context}" in load_prompt(qtype)
        # image-only questions see no text
        assert "{textual_context}" not in load_prompt("image_image")

    def test_round_trip_through_testset(self, mini_corpus, tmp_path):
        class Client:
            identity = "scripted"
            temperature = 0.0

            def __init__(self):
                self.calls = []

            def complete(self, prompt, images, temperature):
                self.calls.append((prompt, images))
                return GENERATED if len(self.calls) != 2 else "no idea"

        doc = mini_corpus.documents[0]
        client = Client()
        questions, failures = generate_questions(doc, client, seed=0)
        assert len(questions) == 2 and len(failures) == 1
        assert failures[0].raw == "no idea"
        assert all(call[1][0].startswith("img/alpha/") for call in client.calls)
        save_testset(questions, tmp_path / "generated.jsonl")
        assert load_testset(tmp_path / "generated.jsonl") == questions
        assert generate_questions(doc, Client(), seed=0)[0] == questions

    def test_too_few_images(self, mini_corpus):
        with pytest.raises(ValueError, match="need 3 images"):
            generate_questions(mini_corpus.documents[1], None)
