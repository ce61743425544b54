"""Command-line surface: a thin client over the core package.

Subcommands cover the build-time workflow (``index build``, ``describe``,
``calibrate``) and the inference-time workflow (``link``, ``eval``), plus
``serve`` to run the HTTP service around a prebuilt index directory.
Offline-first: the defaults (hash embedder, fallback keyword extractor,
scripted stub model) run with zero network; remote providers are opt-in.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .calibration import load_weights, save_weights
from .catalog import ALL_ENTITY_TYPES, EntityType, catalog_to_document, decompose, parse_catalog
from .embedding import HashEmbeddingProvider, RemoteEmbeddingProvider
from .engine import LinkEngine
from .errors import SchemalinkError
from .evaluation import load_dataset, run_benchmark, save_report
from .index import build_index
from .linker import PipelineConfig, calibrate_weights
from .llm import RemoteChatProvider, ScriptedStubProvider, describe_catalog
from .manifest import RunManifest, file_digest, utc_now, write_manifest

logger = logging.getLogger(__name__)

CONFIG_FLAG_FIELDS = {
    "per_query_top_k": "per_query_top_k",
    "top_tables": "table_budget",
    "types": "enabled_types",
    "keywords": "keyword_source",
    "entropy": "entropy_calibration",
    "alpha": "entropy_alpha",
    "append_keywords": "append_keywords_to_question",
    "workers": "workers",
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except SchemalinkError as exc:
        print(
            json.dumps({"error": {"category": exc.category, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1
    except OSError as exc:
        print(
            json.dumps({"error": {"category": "io", "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schemalink",
        description="Schema linking for text-to-SQL over large database catalogs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    # index build
    p_index = sub.add_parser("index", help="index maintenance")
    index_sub = p_index.add_subparsers(dest="index_command", required=True)
    p_build = index_sub.add_parser("build", help="decompose a catalog and build the index")
    p_build.add_argument("--catalog", required=True, help="catalog document path")
    p_build.add_argument(
        "--types",
        default=None,
        help="comma-separated entity types (default: all seven)",
    )
    p_build.add_argument("--provider", default="hash", choices=["hash", "remote"])
    p_build.add_argument("--dim", type=int, default=256, help="embedding dimension")
    p_build.add_argument("--out", required=True, help="output index directory")
    p_build.set_defaults(func=cmd_index_build)

    # describe
    p_desc = sub.add_parser("describe", help="synthesize missing table descriptions")
    p_desc.add_argument("--catalog", required=True)
    p_desc.add_argument("--provider", default="stub", choices=["stub", "remote"])
    p_desc.add_argument("--model", default=None, help="remote model name")
    p_desc.add_argument("--script", default=None, help="stub model script file")
    p_desc.add_argument("--all", action="store_true", help="redescribe every table")
    p_desc.add_argument("--out", required=True, help="output catalog path")
    p_desc.set_defaults(func=cmd_describe)

    # calibrate
    p_cal = sub.add_parser("calibrate", help="fit entity-type weights on training data")
    p_cal.add_argument("--index", required=True, help="index directory")
    p_cal.add_argument("--train", required=True, help="training dataset (JSONL)")
    p_cal.add_argument("--n-max", type=int, default=50)
    p_cal.add_argument("--sample-count", type=int, default=200)
    p_cal.add_argument("--seed", type=int, default=0)
    p_cal.add_argument("--out", required=True, help="output weights path")
    _add_pipeline_flags(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    # link
    p_link = sub.add_parser("link", help="link one question against the index")
    p_link.add_argument("--index", required=True, help="index directory")
    p_link.add_argument("--weights", default=None, help="weights file")
    p_link.add_argument("--question", required=True)
    p_link.add_argument("--predict", action="store_true", help="run table prediction")
    p_link.add_argument("--sql", action="store_true", help="run SQL generation too")
    p_link.add_argument("--dialect", default="", help="dialect instruction for SQL")
    p_link.add_argument("--json", action="store_true", help="print the full result as JSON")
    p_link.add_argument("--out", default=None, help="directory for result + manifest")
    _add_pipeline_flags(p_link)
    p_link.set_defaults(func=cmd_link)

    # eval
    p_eval = sub.add_parser("eval", help="run a retrieval method over a dataset")
    p_eval.add_argument("--index", required=True, help="index directory")
    p_eval.add_argument("--weights", default=None)
    p_eval.add_argument("--dataset", required=True, help="dataset path (JSONL)")
    p_eval.add_argument(
        "--method",
        required=True,
        choices=["rasl_retriever", "rasl_full", "bm25_tabledoc", "dense_tabledoc"],
    )
    p_eval.add_argument("--at", default="5,15,50", help="comma-separated N values")
    p_eval.add_argument("--budget-matched", action="store_true")
    p_eval.add_argument("--bm25-tokenizer", default="word", choices=["word", "char_shingle"])
    p_eval.add_argument("--shingle-k", type=int, default=4)
    p_eval.add_argument("--out", required=True, help="output report path")
    _add_pipeline_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    # serve
    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--index", default=None, help="index directory to preload")
    p_serve.add_argument("--weights", default=None)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    _add_pipeline_flags(p_serve)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="pipeline config file (JSON)")
    parser.add_argument("--per-query-top-k", dest="per_query_top_k", type=int, default=None)
    parser.add_argument("--top-tables", dest="top_tables", type=int, default=None)
    parser.add_argument("--types", default=None, help="comma-separated entity types")
    parser.add_argument("--keywords", default=None, choices=["llm", "fallback"])
    parser.add_argument("--entropy", action="store_const", const=True, default=None)
    parser.add_argument("--alpha", type=float, default=None, help="entropy scaling")
    parser.add_argument(
        "--append-keywords", dest="append_keywords", action="store_const",
        const=True, default=None,
    )
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--dim", type=int, default=None, help="hash embedder dimension")
    parser.add_argument("--keyword-model", default=None, help="remote keyword model name")
    parser.add_argument("--main-model", default=None, help="remote main model name")
    parser.add_argument(
        "--script", default=None, help="stub model script file (JSON map of key to reply)"
    )


def _pipeline_config(args) -> PipelineConfig:
    """Merge precedence: CLI flags over --config file over defaults."""
    raw = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for flag, field in CONFIG_FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if field == "enabled_types":
            value = [t.strip() for t in value.split(",") if t.strip()]
        raw[field] = value
    return PipelineConfig.from_dict(raw)


def _embedder(args, dimension_default=256):
    dim = getattr(args, "dim", None) or dimension_default
    if getattr(args, "provider", "hash") == "remote":
        return RemoteEmbeddingProvider.from_env(dim)
    return HashEmbeddingProvider(dim)


def _stub_script(args) -> dict | None:
    path = getattr(args, "script", None)
    if not path:
        return None
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _chat_model(name: str | None, script: dict | None = None):
    if name:
        return RemoteChatProvider.from_env(name)
    return ScriptedStubProvider(script)


def _keyword_model(args):
    if getattr(args, "keyword_model", None):
        return RemoteChatProvider.from_env(args.keyword_model)
    return None


def _engine(args) -> LinkEngine:
    config = _pipeline_config(args)
    engine = LinkEngine.from_dir(
        args.index,
        weights_path=getattr(args, "weights", None),
        config=config,
        keyword_model=_keyword_model(args),
        main_model=_chat_model(getattr(args, "main_model", None), _stub_script(args)),
    )
    if getattr(args, "dim", None) and args.dim != engine.index.dimension:
        raise SchemalinkError(
            f"--dim {args.dim} conflicts with index dimension {engine.index.dimension}"
        )
    return engine


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_index_build(args) -> int:
    started = utc_now()
    t0 = time.perf_counter()
    catalog = parse_catalog(Path(args.catalog).read_bytes())
    if args.types:
        types = {EntityType(t.strip()) for t in args.types.split(",") if t.strip()}
    else:
        types = set(ALL_ENTITY_TYPES)
    entities = decompose(catalog, types)
    if not entities:
        raise SchemalinkError("catalog produced no entities for the enabled types")
    embedder = _embedder(args)
    index = build_index(entities, embedder)
    engine = LinkEngine(catalog=catalog, index=index, embedder=embedder)
    outputs = engine.save(args.out)
    manifest = RunManifest(
        command="index build",
        config={"types": sorted(t.value for t in types), "dimension": embedder.dimension},
        inputs={args.catalog: file_digest(args.catalog)},
        providers=[embedder.name],
        outputs=[str(p) for p in outputs],
        started_at=started,
        elapsed_seconds=time.perf_counter() - t0,
    )
    write_manifest(manifest, args.out)
    print(
        json.dumps(
            {"entity_count": len(index), "partitions": index.partition_sizes(), "out": args.out}
        )
    )
    return 0


def cmd_describe(args) -> int:
    started = utc_now()
    t0 = time.perf_counter()
    catalog = parse_catalog(Path(args.catalog).read_bytes())
    provider = _chat_model(
        args.model if args.provider == "remote" else None, _stub_script(args)
    )
    described = describe_catalog(catalog, provider, only_missing=not args.all)
    out_path = Path(args.out)
    out_path.write_text(
        json.dumps(catalog_to_document(described), indent=2) + "\n", encoding="utf-8"
    )
    manifest = RunManifest(
        command="describe",
        config={"only_missing": not args.all},
        inputs={args.catalog: file_digest(args.catalog)},
        providers=[provider.name],
        outputs=[str(out_path)],
        started_at=started,
        elapsed_seconds=time.perf_counter() - t0,
    )
    write_manifest(manifest, out_path.parent)
    described_count = sum(
        1 for db in described.databases for tbl in db.tables if tbl.description
    )
    print(json.dumps({"described_tables": described_count, "out": args.out}))
    return 0


def cmd_calibrate(args) -> int:
    started = utc_now()
    t0 = time.perf_counter()
    engine = _engine(args)
    records = load_dataset(args.train)
    weights = calibrate_weights(
        engine.index,
        records,
        engine.config,
        engine.embedder,
        keyword_model=engine.keyword_model,
        n_max=args.n_max,
        sample_count=args.sample_count,
        seed=args.seed,
    )
    save_weights(weights, args.out)
    manifest = RunManifest(
        command="calibrate",
        config={
            "n_max": args.n_max,
            "sample_count": args.sample_count,
            "seed": args.seed,
            "pipeline": engine.config.to_dict(),
        },
        inputs={args.train: file_digest(args.train)},
        providers=[engine.embedder.name],
        outputs=[args.out],
        started_at=started,
        elapsed_seconds=time.perf_counter() - t0,
    )
    write_manifest(manifest, Path(args.out).parent)
    print(
        json.dumps(
            {
                "weights": {t.value: w for t, w in weights.weights.items()},
                "aucs": {t.value: a for t, a in weights.aucs.items()},
                "out": args.out,
            }
        )
    )
    return 0


def cmd_link(args) -> int:
    started = utc_now()
    t0 = time.perf_counter()
    engine = _engine(args)
    result = engine.link(args.question)
    payload = {
        "question": result.question,
        "keywords": list(result.keywords.keywords),
        "keyword_source": result.keywords.source,
        "tables": [
            {"database": c.database, "table": c.table, "score": c.score, "support": c.support}
            for c in result.candidates
        ],
        "candidate_schema": result.candidate_schema,
        "accounting": result.accounting.to_dict(),
    }
    if args.predict or args.sql:
        _, prediction = engine.predict(args.question, result=result)
        payload["predicted_tables"] = [
            {"database": t.database, "table": t.table, "rank": t.rank}
            for t in prediction.tables
        ]
        if args.sql:
            _, _, sql_result = engine.sql(args.question, dialect_instruction=args.dialect)
            payload["sql"] = {
                "database": sql_result.database,
                "sql": sql_result.sql,
                "correction_rounds": sql_result.correction_rounds,
            }
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"question: {result.question}")
        print(f"keywords ({result.keywords.source}): {', '.join(result.keywords.keywords)}")
        for i, c in enumerate(result.candidates, start=1):
            print(f"{i:3d}. {c.qualified}  score={c.score:.4f} support={c.support}")
        if payload.get("predicted_tables") is not None:
            predicted = ", ".join(
                f"{t['database']}.{t['table']}" for t in payload["predicted_tables"]
            )
            print(f"predicted tables: {predicted or '(none)'}")
        if payload.get("sql"):
            print(f"database: {payload['sql']['database']}")
            print(payload["sql"]["sql"])
        print(result.candidate_schema)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        result_path = out_dir / "link_result.json"
        result_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        manifest = RunManifest(
            command="link",
            config=engine.config.to_dict(),
            inputs={args.index: ""},
            providers=[engine.embedder.name, engine.main_model.name],
            outputs=[str(result_path)],
            started_at=started,
            elapsed_seconds=time.perf_counter() - t0,
        )
        write_manifest(manifest, out_dir)
    return 0


def cmd_eval(args) -> int:
    started = utc_now()
    t0 = time.perf_counter()
    engine = _engine(args)
    records = load_dataset(args.dataset)
    at = [int(n) for n in args.at.split(",") if n.strip()]
    report = run_benchmark(
        engine.catalog,
        records,
        args.method,
        engine.config,
        engine.embedder,
        index=engine.index,
        weights=engine.weights,
        keyword_model=engine.keyword_model,
        main_model=engine.main_model,
        at=at,
        budget_matched=args.budget_matched,
        bm25_tokenizer=args.bm25_tokenizer,
        bm25_shingle_k=args.shingle_k,
    )
    save_report(report, args.out)
    manifest = RunManifest(
        command="eval",
        config={"method": args.method, "at": at, "pipeline": engine.config.to_dict()},
        inputs={args.dataset: file_digest(args.dataset)},
        providers=[engine.embedder.name, engine.main_model.name],
        outputs=[args.out],
        started_at=started,
        elapsed_seconds=time.perf_counter() - t0,
    )
    write_manifest(manifest, Path(args.out).parent)
    print(json.dumps({"macro_recall": {str(n): report.macro_recall[n] for n in at}, "out": args.out}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    engine = None
    if args.index:
        engine = _engine(args)
    app = create_app(engine)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
