from __future__ import annotations

import json

import pytest
from conftest import FIXTURES

from mmgraphrag.cli import InputError, RunConfig, build_parser, main, resolve_config
from mmgraphrag.graph import MMGraph
from mmgraphrag.retrieval import retrieve

CORPUS = str(FIXTURES / "corpus.json")
TESTSET = str(FIXTURES / "testset.jsonl")
OFFLINE = ["--extractor", "fixture", "--extractor-path", str(FIXTURES / "extraction.jsonl")]


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("build")
    assert main(["build", "--corpus", CORPUS, "--out", str(out), *OFFLINE]) == 0
    return out


def read(path):
    return json.loads(path.read_text())


class TestConfig:
    def test_defaults(self):
        config = resolve_config({})
        assert (config.threshold, config.pcst_k, config.edge_cost, config.si_top_n, config.image_top_k) == (0.75, 5, 0.5, 3, 1)

    def test_precedence(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"threshold": 0.5, "pcst_k": 7}))
        config = resolve_config({"threshold": 0.6, "seed": None}, str(path))
        assert (config.threshold, config.pcst_k, config.seed) == (0.6, 7, 0)

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"tau": 0.5}))
        with pytest.raises(InputError, match="tau"):
            resolve_config({}, str(path))
        assert main(["build", "--corpus", CORPUS, "--config", str(path), "--out", str(tmp_path)]) == 2

    def test_retrieval_config_uses_links(self):
        assert RunConfig(links="none").retrieval_config().link_kinds == frozenset()


class TestBuild:
    def test_counts_match_library_build(self, built, fixture_corpus, fixture_graph):
        report = read(built / "build_report.json")
        assert report["counts"] == fixture_graph.counts()
        loaded = MMGraph.load(built / "graph.json").to_dict()
        expected = fixture_graph.to_dict()
        # only the recorded extractor identity differs
        assert loaded.pop("meta")["extractor"] == "fixture:extraction.jsonl"
        expected.pop("meta")
        assert loaded == expected

    def test_rebuild_is_byte_identical(self, built, tmp_path):
        assert main(["build", "--corpus", CORPUS, "--out", str(tmp_path), *OFFLINE]) == 0
        assert (tmp_path / "graph.json").read_bytes() == (built / "graph.json").read_bytes()
        assert (tmp_path / "build_report.json").read_text().replace(str(tmp_path), "") == (built / "build_report.json").read_text().replace(str(built), "")

    def test_missing_corpus(self, tmp_path, capsys):
        assert main(["build", "--corpus", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
        assert "input error" in capsys.readouterr().err
        assert main(["build", "--out", str(tmp_path)]) == 2

    def test_provider_failure(self, tmp_path):
        (tmp_path / "empty.jsonl").write_text("")
        code = main(["build", "--corpus", CORPUS, "--out", str(tmp_path), "--extractor", "fixture", "--extractor-path", str(tmp_path / "empty.jsonl")])
        assert code == 3

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["build", "--no-such-flag"])
        assert info.value.code == 2

    def test_bad_link_kind(self, tmp_path):
        assert main(["build", "--corpus", CORPUS, "--links", "ca,zz", "--out", str(tmp_path)]) == 2


class TestQuery:
    def test_matches_library(self, built, tmp_path, fixture_graph, providers, fixture_questions):
        q = fixture_questions[0]
        assert main(["query", q.question, "--graph", str(built / "graph.json"), "--out", str(tmp_path), *OFFLINE]) == 0
        result = read(tmp_path / "query.json")
        assert result["context"] == retrieve(fixture_graph, q.question, providers).to_dict()

    def test_no_links(self, built, tmp_path, fixture_questions):
        for q in fixture_questions:
            assert main(["query", q.question, "--graph", str(built / "graph.json"), "--links", "", "--out", str(tmp_path), *OFFLINE]) == 0
            context = read(tmp_path / "query.json")["context"]
            assert context["linked_texts"] == []
            assert all(hit["reason"] == "similarity" for hit in context["images"])

    def test_answer_with_scripted_client(self, built, tmp_path, fixture_questions):
        q = fixture_questions[0]
        args = ["query", q.question, "--graph", str(built / "graph.json"), "--out", str(tmp_path),
                "--lmm-fixture", str(FIXTURES / "scripted_answers.jsonl"), *OFFLINE]
        for choice in q.choices:
            args += ["--choice", choice]
        assert main(args) == 0
        assert read(tmp_path / "query.json")["answer"] == f"The answer is {q.answer}."

    def test_missing_graph(self, tmp_path):
        assert main(["query", "Who?", "--graph", str(tmp_path / "missing.json")]) == 2

    def test_baseline_needs_corpus(self, built):
        assert main(["query", "Who?", "--graph", str(built / "graph.json"), "--baseline"]) == 2
        assert main(["query", "Who?", "--graph", str(built / "graph.json"), "--baseline", "--corpus", CORPUS]) == 0


class TestEval:
    def test_ablation_rows(self, built, tmp_path):
        args = ["eval", "--testset", TESTSET, "--graph", str(built / "graph.json"), "--corpus", CORPUS, "--out", str(tmp_path),
                "--ablation", "none,ca,ca+ls,ca+ls+si", "--baseline", *OFFLINE]
        assert main(args) == 0
        rows = read(tmp_path / "eval_report.json")["rows"]
        assert [r["name"] for r in rows] == ["none", "ca", "ca+ls", "ca+si+ls", "baseline"]
        assert [r["mode"] for r in rows] == ["graph"] * 4 + ["baseline"]
        assert rows[0]["overall"] < rows[2]["overall"]
        assert all(r["counts"] == {"text_image": 8, "image_text": 8, "image_image": 8} for r in rows)

    def test_default_row_and_qa(self, built, tmp_path):
        args = ["eval", "--testset", TESTSET, "--graph", str(built / "graph.json"), "--out", str(tmp_path),
                "--lmm-fixture", str(FIXTURES / "scripted_answers.jsonl"), *OFFLINE]
        assert main(args) == 0
        [row] = read(tmp_path / "eval_report.json")["rows"]
        assert row["link_kinds"] == "ca+si+ls"
        # three scripted answers are wrong or unparseable
        assert row["qa"]["accuracy"] == pytest.approx(21 / 24)
        assert sum(r["flagged"] for r in row["qa"]["records"]) == 1

    def test_empty_testset(self, built, tmp_path):
        (tmp_path / "empty.jsonl").write_text("")
        assert main(["eval", "--testset", str(tmp_path / "empty.jsonl"), "--graph", str(built / "graph.json")]) == 2

    def test_testset_required(self):
        with pytest.raises(SystemExit):
            main(["eval"])


class TestNEA:
    def test_writes_pairs(self, tmp_path):
        assert main(["nea", "--corpus", CORPUS, "--testset", TESTSET, "--count", "3", "--out", str(tmp_path)]) == 0
        report = read(tmp_path / "nea_report.json")
        assert report["pairs"] == 3
        anonymized = [json.loads(l) for l in (tmp_path / "nea_testset.jsonl").read_text().splitlines()]
        assert all(q["qid"].endswith("-nea") for q in anonymized)
        for record in report["records"]:
            assert record["alias"] in record["anonymized_question"]
            assert record["original_phrase"] not in record["anonymized_question"]

    def test_count_errors(self, tmp_path):
        for count in ("0", "9"):
            assert main(["nea", "--corpus", CORPUS, "--testset", TESTSET, "--count", count, "--out", str(tmp_path)]) == 2

    def test_shipped_fixture_is_reproducible(self, tmp_path, monkeypatch):
        monkeypatch.chdir(FIXTURES.parent.parent)
        assert main(["nea", "--corpus", "tests/fixtures/corpus.json", "--testset", "tests/fixtures/testset.jsonl",
                     "--count", "6", "--seed", "0", "--out", str(tmp_path)]) == 0
        for name in ("nea_testset.jsonl", "nea_corpus.json", "nea_records.jsonl"):
            assert (tmp_path / name).read_bytes() == (FIXTURES / "nea" / name).read_bytes()


def test_parser_lists_commands():
    assert "build" in build_parser().format_help()
