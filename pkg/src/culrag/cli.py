"""Command-line entry point: ``culrag <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

from culrag.cascade import AnswerRecord, QuestionError
from culrag.config import ConfigError, EngineConfig
from culrag.core import DatasetError, Question, Track, load_questions, parse_locale, question_from_record
from culrag.engine import Engine, make_model, make_search
from culrag.evaluator import (
    EvaluationError,
    Scheme,
    evaluate,
    is_labeled,
    read_predictions,
    run_ablation,
    write_predictions,
)
from culrag.kb_builder import ChunkingConfig, KBBuildError, build_knowledge_bases, read_entries
from culrag.mock import MockProvider
from culrag.model_client import ModelClientError, embedder
from culrag.prompts import TemplateId
from culrag.routing import Mode
from culrag.vector_store import VectorStoreError, build_index

logger = logging.getLogger("culrag")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    """Raised for configuration problems; maps to exit status 2."""


def shipped_data() -> Path:
    return Path(str(resources.files("culrag").joinpath("data")))


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON engine config; flags override it")
    p.add_argument("--mode", choices=[m.value for m in Mode], type=str.upper)
    p.add_argument("--prompt", choices=[t.cli_name for t in TemplateId], type=str.lower)
    p.add_argument("--k", type=int)
    p.add_argument("--no-local-db", dest="no_local_db", action="store_true")
    p.add_argument("--endpoint", help="model server URL, or 'mock' for the in-process oracle mock")
    p.add_argument("--search", help="live | fixture:<dir> | cache-only")
    p.add_argument("--cache-dir")
    p.add_argument("--kb-root")
    p.add_argument("--jobs", type=int)


def resolve_config(args: argparse.Namespace) -> EngineConfig:
    config = EngineConfig.load(args.config) if getattr(args, "config", None) else EngineConfig()
    return config.override(
        mode=args.mode,
        template=args.prompt,
        k=args.k,
        use_local_db=False if args.no_local_db else None,
        endpoint=args.endpoint,
        search=args.search,
        cache_dir=args.cache_dir,
        kb_root=args.kb_root,
        jobs=args.jobs,
    )


def _provider(config: EngineConfig, questions: Sequence[Question] = ()):
    if config.endpoint == "mock":
        return MockProvider.oracle(questions)
    return make_model(config)


def _load(path: str, track: str | None) -> list[Question]:
    try:
        return load_questions(path, Track(track.upper()) if track else None)
    except (OSError, DatasetError) as exc:
        raise UsageError(str(exc)) from None


# --- commands --------------------------------------------------------------------


def cmd_build_kb(args: argparse.Namespace) -> int:
    data = shipped_data()
    pages = args.pages or (None if args.no_pages else data / "pages")
    keywords = args.keywords or (None if args.no_pages else data / "keywords")
    curated = args.curated if args.curated is not None else [data / "curated" / "facts.jsonl"]
    try:
        counts = build_knowledge_bases(
            pages,
            keywords,
            curated,
            args.kb_root,
            ChunkingConfig(args.chunk_size, args.overlap),
            paragraph_mode=args.paragraph_mode,
            jobs=args.jobs,
        )
    except (KBBuildError, ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None
    for country, n in counts.items():
        print(f"{country}\t{n}")
    return EXIT_OK


def cmd_index(args: argparse.Namespace) -> int:
    config = resolve_config(args).override(embed_model=args.embed_model)
    root = Path(config.kb_root)
    countries = args.country or sorted(p.name for p in root.iterdir() if (p / "entries.jsonl").exists())
    provider = _provider(config)
    embed = embedder(provider, config.embed_model)
    for country in countries:
        try:
            entries = read_entries(root, country)
            index = build_index(entries, embed, country, model_id=config.embed_model, out_dir=root / country / "index")
        except FileNotFoundError:
            raise UsageError(f"no entries for country {country} under {root}") from None
        except VectorStoreError as exc:
            logger.error("indexing %s failed: %s", country, exc)
            return EXIT_PARTIAL
        print(f"{country}\t{len(index)}\t{index.dimension}")
    return EXIT_OK


def cmd_ask(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    options = []
    for spec in args.option or []:
        label, _, text = spec.partition("=")
        options.append({"label": label, "text": text})
    record = {"id": args.id, "question": args.question, "track": "MCQ" if options else "SAQ", "options": options}
    if args.reference:
        record["references"] = args.reference
    if args.gold:
        record["gold"] = args.gold
    try:
        parse_locale(args.id)
        question = question_from_record(record, "--question")
        search = make_search(config, allow_live=True)
    except (ValueError, DatasetError) as exc:
        raise UsageError(str(exc)) from None
    engine = Engine(config, _provider(config, [question]), search)
    try:
        answer = engine.answer(question)
    except QuestionError as exc:
        print(json.dumps({"id": question.id, "error": str(exc)}, ensure_ascii=False))
        return EXIT_PARTIAL
    print(json.dumps(answer.to_dict(), ensure_ascii=False, indent=2))
    return EXIT_PARTIAL if answer.errors else EXIT_OK


def _run(engine: Engine, questions: Sequence[Question]) -> tuple[list[dict], list[dict], int]:
    predictions, records, failures = [], [], 0
    for q, outcome in zip(questions, engine.answer_all(questions)):
        if isinstance(outcome, AnswerRecord):
            predictions.append(outcome.to_prediction())
            records.append(outcome.to_dict())
            failures += bool(outcome.errors)
        else:
            failures += 1
            predictions.append({"id": q.id, "answer": "<NO_ANSWER>", "source_stage": "NONE", "evidence": []})
            records.append({"id": q.id, "error": str(outcome)})
    return predictions, records, failures


def _prepare_run(args: argparse.Namespace, questions: Sequence[Question]) -> Engine:
    config = resolve_config(args)
    try:
        search = make_search(config, allow_live=False)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    engine = Engine(config, _provider(config, questions), search)
    if config.use_local_db:
        missing = engine.missing_kbs(questions)
        if missing:
            raise UsageError(f"no knowledge base index for: {', '.join(missing)} (build one or pass --no-local-db)")
    return engine


def cmd_run_track(args: argparse.Namespace) -> int:
    questions = _load(args.dataset, args.track)
    engine = _prepare_run(args, questions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    engine.config.dump(out / "config.json")

    predictions, records, failures = _run(engine, questions)
    write_predictions(predictions, out / "predictions.jsonl")
    write_predictions(records, out / "records.jsonl")

    labeled = [q for q in questions if is_labeled(q)]
    if labeled:
        report, _ = evaluate(labeled, {p["id"]: p for p in predictions}, args.scheme)
        report.label = engine.config.template.cli_name
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / "report.txt").write_text(report.format_table(), encoding="utf-8")
        print(report.format_table(), end="")
    if failures:
        logger.error("%d question(s) had errors", failures)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    questions = _load(args.dataset, args.track)
    try:
        predictions = read_predictions(args.predictions)
        report, _ = evaluate([q for q in questions if is_labeled(q)], predictions, args.scheme)
    except (OSError, EvaluationError) as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / "report.txt").write_text(report.format_table(), encoding="utf-8")
    print(report.format_table(), end="")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    questions = _load(args.dataset, args.track)
    engine = _prepare_run(args, questions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    engine.config.dump(out / "config.json")
    prompt_ids = [TemplateId.parse(p) for p in args.prompts.split(",")]

    def answer_all(tid: TemplateId, qs: Sequence[Question]) -> dict[str, dict]:
        variant = Engine(engine.config.override(template=tid), engine.model, engine.search)
        predictions, _, failures = _run(variant, qs)
        if failures:
            raise RuntimeError(f"{failures} question(s) failed under {tid.cli_name}")
        write_predictions(predictions, out / f"predictions.{tid.cli_name}.jsonl")
        return {p["id"]: p for p in predictions}

    try:
        result = run_ablation(questions, prompt_ids, answer_all, args.scheme)
    except EvaluationError as exc:
        raise UsageError(str(exc)) from None
    (out / "ablation.json").write_text(json.dumps(result.table(), indent=2) + "\n", encoding="utf-8")
    (out / "curve.csv").write_text(result.curve_csv(), encoding="utf-8")
    for report in result.reports.values():
        print(report.format_table())
    return EXIT_OK if result.complete else EXIT_PARTIAL


def cmd_fetch_wiki(args: argparse.Namespace) -> int:
    from culrag.wiki_fetch import fetch_pages

    try:
        written = fetch_pages(args.titles, args.lang, args.out)
    except RuntimeError as exc:
        logger.error("%s", exc)
        return EXIT_PARTIAL
    for path in written:
        print(path)
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="culrag", description="Locale-routed RAG question answering.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kb", help="build per-country entries from pages, keyword lists and curated facts")
    p.add_argument("--pages", help="directory of <locale>/*.json page files (default: shipped corpus)")
    p.add_argument("--keywords", help="directory of <locale>.txt keyword lists (default: shipped lists)")
    p.add_argument("--no-pages", action="store_true", help="build from curated facts only")
    p.add_argument("--curated", action="append", help="curated facts file; repeatable (default: shipped facts)")
    p.add_argument("--kb-root", default="kb")
    p.add_argument("--chunk-size", type=int, default=500)
    p.add_argument("--overlap", type=int, default=100)
    p.add_argument("--paragraph-mode", action="store_true")
    p.add_argument("--jobs", type=int, default=4)
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("index", help="embed KB entries into per-country vector indexes")
    _add_engine_flags(p)
    p.add_argument("--country", action="append")
    p.add_argument("--embed-model")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", help="answer one question and print its answer record")
    _add_engine_flags(p)
    p.add_argument("--id", required=True, help="question id carrying a locale token, e.g. en-GB-0001")
    p.add_argument("--question", required=True)
    p.add_argument("--option", action="append", help="MCQ option as LABEL=text; repeatable")
    p.add_argument("--reference", action="append")
    p.add_argument("--gold")
    p.set_defaults(func=cmd_ask)

    for name, func, help_ in (
        ("run-track", cmd_run_track, "answer a dataset and write predictions (and a report if labeled)"),
        ("ablate", cmd_ablate, "evaluate one dataset under several prompt templates"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_engine_flags(p)
        p.add_argument("--dataset", required=True)
        p.add_argument("--track", choices=["saq", "mcq"], type=str.lower)
        p.add_argument("--out", required=True)
        p.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.SIMPLE_AVG.value)
        if name == "ablate":
            p.add_argument("--prompts", default="mp,rp-v1,rp-v2")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a predictions file against a labeled dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--track", choices=["saq", "mcq"], type=str.lower)
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.SIMPLE_AVG.value)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fetch-wiki", help="download page summaries/extracts into page files (network)")
    p.add_argument("--lang", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("titles", nargs="+")
    p.set_defaults(func=cmd_fetch_wiki)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"culrag: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelClientError as exc:
        print(f"culrag: model error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
