"""Command-line front end: ``build``, ``query``, ``eval`` and ``nea``.

Every command resolves a :class:`RunConfig` from (highest first) command-line
flags, an optional JSON ``--config`` file and the built-in defaults, and
records the resolved config in the reports it writes. Output JSON is written
with sorted keys and no timestamps, so identical inputs and seed give
identical bytes.

Exit codes: 0 success, 2 input error, 3 provider error.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from .corpus import Corpus, CorpusError, chunk_corpus, load_corpus, save_corpus
from .embedding import CacheFileProvider, Embedder, EmbeddingError, HashEmbedder, HTTPEmbeddingProvider
from .evalkit import (
    IMAGE_IMAGE,
    EvalQuestion,
    MatchConfig,
    NEAError,
    TestSetError,
    apply_nea,
    corpus_tokens,
    dumps_testset,
    generate_alias,
    grade_qa,
    judge_hit,
    load_testset,
    pick_target_phrase,
    recall_ratio,
)
from .extraction import FallbackExtractor, FixtureExtractor, HTTPExtractor, ProviderError, extract_document_triplets
from .generation import FixtureClient, HTTPClient, PromptConfig, build_prompt, context_word_count, generate_answer
from .graph import GraphBuildConfig, GraphError, MMGraph, build_graph, format_link_kinds, parse_link_kinds
from .pcst import PCSTConfig
from .retrieval import Providers, RetrievalConfig, RetrievedContext, baseline_retrieve, retrieve, with_link_kinds

log = logging.getLogger("mmgraphrag")

EXIT_OK, EXIT_INPUT, EXIT_PROVIDER = 0, 2, 3
DEFAULT_ABLATION = "none,ca,ca+ls,ca+ls+si"


class InputError(ValueError):
    """Bad command-line input or unreadable input file."""


@dataclass(frozen=True)
class RunConfig:
    corpus: str | None = None
    graph: str | None = None
    links: str = "ca+ls+si"
    threshold: float = 0.75
    pcst_k: int = 5
    edge_cost: float = 0.5
    si_top_n: int = 3
    image_top_k: int = 1
    baseline_image_top_k: int = 2
    baseline_chunk_top_k: int = 2
    chunk_size: int = 100
    triplets_per_page: int = 20
    temperature: float = 0.0
    match_threshold: float = 0.5
    embedder: str = "test"
    embedding_dim: int = 64
    embedding_cache: str | None = None
    provider_url: str | None = None
    extractor: str = "fallback"
    extractor_path: str | None = None
    extractor_url: str | None = None
    lmm_fixture: str | None = None
    lmm_url: str | None = None
    seed: int = 0
    jobs: int = 1
    out: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def build_config(self) -> GraphBuildConfig:
        return GraphBuildConfig(parse_link_kinds(self.links), self.si_top_n, self.triplets_per_page)

    def retrieval_config(self) -> RetrievalConfig:
        return RetrievalConfig(
            prune_threshold=self.threshold,
            pcst=PCSTConfig(k=self.pcst_k, edge_cost=self.edge_cost),
            image_top_k=self.image_top_k,
            link_kinds=parse_link_kinds(self.links),
            baseline_chunk_top_k=self.baseline_chunk_top_k,
            baseline_image_top_k=self.baseline_image_top_k,
        )


_CONFIG_FIELDS = {f.name: f for f in fields(RunConfig)}


def resolve_config(flags: dict[str, Any], config_path: str | None = None) -> RunConfig:
    """Merge flags over the config file over defaults."""
    values: dict[str, Any] = {}
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError("config file must hold a JSON object")
        unknown = sorted(set(data) - set(_CONFIG_FIELDS))
        if unknown:
            raise InputError(f"unknown config keys {unknown}")
        values.update(data)
    values.update({k: v for k, v in flags.items() if k in _CONFIG_FIELDS and v is not None})
    return RunConfig(**values)


# -- providers -----------------------------------------------------------------


def make_embedder(config: RunConfig) -> Embedder:
    if config.embedder == "test":
        return Embedder(HashEmbedder(dim=config.embedding_dim, seed=config.seed))
    if config.embedder == "cache":
        if not config.embedding_cache:
            raise InputError("--embedder cache needs --embedding-cache")
        try:
            return Embedder(CacheFileProvider(config.embedding_cache))
        except (OSError, EmbeddingError, ValueError) as exc:
            raise InputError(f"cannot load embedding cache: {exc}") from exc
    if config.embedder == "remote":
        if not config.provider_url:
            raise InputError("--embedder remote needs --provider-url")
        return Embedder(HTTPEmbeddingProvider(config.provider_url, config.embedding_dim))
    raise InputError(f"unknown embedder {config.embedder!r}")


def make_extractor(config: RunConfig):
    if config.extractor == "fallback":
        return FallbackExtractor()
    if config.extractor == "fixture":
        if not config.extractor_path:
            raise InputError("--extractor fixture needs --extractor-path")
        try:
            return FixtureExtractor(config.extractor_path)
        except OSError as exc:
            raise InputError(f"cannot read extraction fixture: {exc}") from exc
    if config.extractor == "remote":
        if not config.extractor_url:
            raise InputError("--extractor remote needs --extractor-url")
        return HTTPExtractor(config.extractor_url)
    raise InputError(f"unknown extractor {config.extractor!r}")


def make_client(config: RunConfig):
    if config.lmm_fixture:
        try:
            return FixtureClient(config.lmm_fixture, temperature=config.temperature)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise InputError(f"cannot read LMM fixture: {exc}") from exc
    if config.lmm_url:
        return HTTPClient(config.lmm_url, temperature=config.temperature)
    return None


# -- file helpers ------------------------------------------------------------------


def dumps_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def out_dir(config: RunConfig) -> Path:
    return Path(config.out or ".")


def require_corpus(config: RunConfig) -> Corpus:
    if not config.corpus:
        raise InputError("--corpus is required")
    return load_corpus(config.corpus)


def graph_path(config: RunConfig) -> Path:
    return Path(config.graph) if config.graph else out_dir(config) / "graph.json"


def require_graph(config: RunConfig) -> MMGraph:
    path = graph_path(config)
    if not path.is_file():
        raise InputError(f"graph file not found: {path}")
    try:
        return MMGraph.load(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"malformed graph file {path}: {exc}") from exc


# -- commands ----------------------------------------------------------------------


def cmd_build(config: RunConfig) -> dict:
    corpus = require_corpus(config)
    extractor = make_extractor(config)
    embedder = make_embedder(config)
    triplets = [t for doc in corpus.documents for t in extract_document_triplets(doc, extractor, jobs=config.jobs)]
    graph = build_graph(corpus, triplets, config.build_config(), embedder, extractor)
    path = graph_path(config)
    write_text(path, graph.dumps())
    report = {"command": "build", "config": config.to_dict(), "counts": graph.counts(), "components": len(graph.components())}
    write_text(out_dir(config) / "build_report.json", dumps_json(report))
    return report


def answer_question(context: RetrievedContext, question: str, choices: Sequence[str], client) -> str:
    return generate_answer(build_prompt(context, question, choices, PromptConfig()), client)


def cmd_query(config: RunConfig, question: str, baseline: bool = False, choices: Sequence[str] = ()) -> dict:
    graph = require_graph(config)
    embedder = make_embedder(config)
    rconfig = config.retrieval_config()
    if baseline:
        chunks = chunk_corpus(require_corpus(config), config.chunk_size)
        context = baseline_retrieve(chunks, graph.images.values(), question, embedder, rconfig)
    else:
        context = retrieve(graph, question, Providers(make_extractor(config), embedder), rconfig)
    result = {
        "command": "query",
        "config": config.to_dict(),
        "mode": "baseline" if baseline else "graph",
        "question": question,
        "context": context.to_dict(),
        "retrieved_words": context_word_count(context),
    }
    client = make_client(config)
    if client is not None:
        result["answer"] = answer_question(context, question, choices, client)
    if config.out:
        write_text(out_dir(config) / "query.json", dumps_json(result))
    return result


def _map(jobs: int, fn, items):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def evaluate_row(
    name: str, questions: Sequence[EvalQuestion], retrieve_fn, config: RunConfig, client=None
) -> dict:
    contexts = _map(config.jobs, lambda q: retrieve_fn(q.question), questions)
    match = MatchConfig(config.match_threshold)
    records = [judge_hit(q, c, match) for q, c in zip(questions, contexts)]
    row = {"name": name, **recall_ratio(records, contexts).to_dict()}
    if client is not None:
        answers = {q.qid: answer_question(c, q.question, q.choices, client) for q, c in zip(questions, contexts)}
        row["qa"] = grade_qa(answers, questions).to_dict()
    return row


def cmd_eval(config: RunConfig, testset: str, ablation: str | None = None, baseline: bool = False) -> dict:
    graph = require_graph(config)
    questions = load_testset(testset)
    if not questions:
        raise InputError("test set is empty")
    embedder = make_embedder(config)
    providers = Providers(make_extractor(config), embedder)
    client = make_client(config)
    base = config.retrieval_config()
    rows = []
    combos = [parse_link_kinds(c) for c in ablation.split(",")] if ablation else [base.link_kinds]
    for kinds in combos:
        rconfig = with_link_kinds(base, kinds)
        row = evaluate_row(format_link_kinds(kinds), questions, lambda q, rc=rconfig: retrieve(graph, q, providers, rc), config, client)
        row["mode"] = "graph"
        row["link_kinds"] = format_link_kinds(kinds)
        rows.append(row)
    if baseline:
        chunks = chunk_corpus(require_corpus(config), config.chunk_size)
        images = list(graph.images.values())
        row = evaluate_row("baseline", questions, lambda q: baseline_retrieve(chunks, images, q, embedder, base), config, client)
        row["mode"] = "baseline"
        row["link_kinds"] = None
        rows.append(row)
    report = {"command": "eval", "config": config.to_dict(), "testset": testset, "rows": rows}
    write_text(out_dir(config) / "eval_report.json", dumps_json(report))
    return report


def cmd_nea(config: RunConfig, testset: str, count: int) -> dict:
    corpus = require_corpus(config)
    candidates = sorted((q for q in load_testset(testset) if q.qtype == IMAGE_IMAGE), key=lambda q: q.qid)
    if count < 1:
        raise InputError("--count must be >= 1")
    if count > len(candidates):
        raise InputError(f"asked for {count} NEA pairs but only {len(candidates)} image_image questions exist")
    rng = random.Random(config.seed)
    chosen = sorted(rng.sample(candidates, count), key=lambda q: q.qid)
    extractor = make_extractor(config)
    forbidden = corpus_tokens(corpus)
    originals, anonymized, records = [], [], []
    for question in chosen:
        try:
            document = corpus.document(question.doc_id)
        except KeyError as exc:
            raise InputError(f"question {question.qid!r} refers to unknown document {question.doc_id!r}") from exc
        phrase = pick_target_phrase(question, document, extractor)
        alias = generate_alias(rng, forbidden)
        forbidden.add(alias.casefold())
        new_q, new_doc, record = apply_nea(question, document, alias, phrase, corpus)
        corpus = corpus.replace_document(new_doc)
        originals.append(question)
        anonymized.append(new_q)
        records.append(record)
    out = out_dir(config)
    write_text(out / "original_testset.jsonl", dumps_testset(originals))
    write_text(out / "nea_testset.jsonl", dumps_testset(anonymized))
    save_corpus(corpus, out / "nea_corpus.json")
    write_text(out / "nea_records.jsonl", "".join(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for r in records))
    report = {"command": "nea", "config": config.to_dict(), "testset": testset, "pairs": len(records), "records": [r.to_dict() for r in records]}
    write_text(out / "nea_report.json", dumps_json(report))
    return report


# -- argument parsing -------------------------------------------------------------------


def _shared(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("run configuration")
    g.add_argument("--config", help="JSON file with run-config keys (overridden by flags)")
    g.add_argument("--corpus", help="corpus JSON file")
    g.add_argument("--graph", help="graph JSON file (default: <out>/graph.json)")
    g.add_argument("--links", help="link kinds to build and traverse, e.g. ca,ls,si or none")
    g.add_argument("--threshold", type=float, help="component pruning threshold")
    g.add_argument("--pcst-k", dest="pcst_k", type=int, help="number of prized nodes and edges")
    g.add_argument("--edge-cost", dest="edge_cost", type=float, help="base PCST edge cost")
    g.add_argument("--si-top-n", dest="si_top_n", type=int, help="entities linked per image by similarity")
    g.add_argument("--image-top-k", dest="image_top_k", type=int, help="images retrieved by query similarity")
    g.add_argument("--baseline-image-k", dest="baseline_image_top_k", type=int)
    g.add_argument("--baseline-chunk-k", dest="baseline_chunk_top_k", type=int)
    g.add_argument("--chunk-size", dest="chunk_size", type=int, help="baseline chunk size in words")
    g.add_argument("--triplets-per-page", dest="triplets_per_page", type=int)
    g.add_argument("--match-threshold", dest="match_threshold", type=float, help="token-F1 needed for a text hit")
    g.add_argument("--embedder", choices=("test", "cache", "remote"))
    g.add_argument("--embedding-dim", dest="embedding_dim", type=int)
    g.add_argument("--embedding-cache", dest="embedding_cache")
    g.add_argument("--provider-url", dest="provider_url", help="remote embedding endpoint")
    g.add_argument("--extractor", choices=("fallback", "fixture", "remote"))
    g.add_argument("--extractor-path", dest="extractor_path")
    g.add_argument("--extractor-url", dest="extractor_url")
    g.add_argument("--lmm-fixture", dest="lmm_fixture", help="JSONL of recorded LMM answers")
    g.add_argument("--lmm-url", dest="lmm_url")
    g.add_argument("--seed", type=int)
    g.add_argument("--jobs", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmgraphrag", description="Multi-modal graph retrieval toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="extract triplets and build the multi-modal graph")
    _shared(p)

    p = sub.add_parser("query", help="retrieve context for one question")
    _shared(p)
    p.add_argument("question")
    p.add_argument("--choice", action="append", default=[], help="answer choice (repeatable)")
    p.add_argument("--baseline", action="store_true", help="similarity-only retrieval")

    p = sub.add_parser("eval", help="score retrieval on a test set")
    _shared(p)
    p.add_argument("--testset", required=True)
    p.add_argument("--ablation", help=f"comma-separated link-kind combinations, e.g. {DEFAULT_ABLATION!r}")
    p.add_argument("--baseline", action="store_true", help="add a similarity-only row")

    p = sub.add_parser("nea", help="write anonymized question pairs and the matching corpus")
    _shared(p)
    p.add_argument("--testset", required=True)
    p.add_argument("--count", type=int, required=True)
    return parser


def run(args: argparse.Namespace) -> dict:
    config = resolve_config(vars(args), args.config)
    if config.jobs < 1:
        raise InputError("--jobs must be >= 1")
    if args.command == "build":
        return cmd_build(config)
    if args.command == "query":
        return cmd_query(config, args.question, args.baseline, args.choice)
    if args.command == "eval":
        return cmd_eval(config, args.testset, args.ablation, args.baseline)
    return cmd_nea(config, args.testset, args.count)


def summary(report: dict) -> str:
    if report["command"] == "build":
        return f"graph: {json.dumps(report['counts'], sort_keys=True)}"
    if report["command"] == "query":
        return dumps_json({k: report[k] for k in ("context", "retrieved_words", "answer") if k in report}).rstrip()
    if report["command"] == "eval":
        lines = []
        for row in report["rows"]:
            per = " ".join(f"{k}={v:.3f}" if v is not None else f"{k}=n/a" for k, v in row["recall"].items())
            overall = "n/a" if row["overall"] is None else f"{row['overall']:.3f}"
            lines.append(f"{row['name']:<12} overall={overall} {per} words={row['mean_retrieved_words']:.1f} images={row['mean_retrieved_images']:.2f}")
        return "\n".join(lines)
    return f"wrote {report['pairs']} NEA pairs"


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run(args)
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (InputError, CorpusError, GraphError, TestSetError, NEAError, EmbeddingError, OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(summary(report))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
