"""Command-line entry point.

Subcommands cover the full workflow: build-bank embeds a corpus into a
key-value bank, retrieve queries it, pipeline runs draft-retrieve-revise
over a query file, eval scores pipeline output against gold labels, and
ablate contrasts query-based with answer-based retrieval on the same
inputs. serve exposes the same operations over HTTP, and mock-models
hosts deterministic stand-ins for the chat and embedding endpoints.

Settings resolve with a fixed precedence: command-line flags override
config-file values, which override built-in defaults. The config file
is JSON; see the README for the full key reference. Endpoint
credentials are read from an environment variable (ARR_API_KEY unless
configured otherwise) and are never printed.

Exit codes: 0 success, 1 operational failure (bad input data, transport
trouble, partial batch failure), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from .errors import ArrError, DimensionMismatchError
from .evaluation import (
    CONVENTIONS,
    EvalExample,
    RankedRun,
    load_gold,
    micro_f1,
    per_example_title_rows,
    ranked_metrics,
    write_rows_csv,
)
from .knowledge_bank import build_bank, ingest_corpus, load_bank, save_bank
from .llm_gateway import DEFAULT_DRAFT_SUFFIX, generate_draft
from .pipeline import read_queries, read_records, run_batch, write_records
from .runconfig import (
    build_embedder,
    build_gateway,
    build_pipeline_config,
    load_config_file,
)


class UsageError(Exception):
    """Bad invocation (missing required setting); maps to exit code 2."""


def _pick(flag_value: Any, config: dict, key: str, default: Any = None) -> Any:
    """Flags override config-file values override defaults."""
    if flag_value is not None:
        return flag_value
    value = config.get(key)
    return value if value is not None else default


def _require(value: Any, what: str, hint: str) -> Any:
    if value is None:
        raise UsageError(f"{what} is required (pass {hint} or set it in --config)")
    return value


def _check_bank_dim(bank, embedder) -> None:
    if embedder.dim != bank.dim:
        raise DimensionMismatchError(
            f"embedder config has dim {embedder.dim}, bank has dim {bank.dim}"
        )


def _write_or_print(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_build_bank(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    corpus = _require(_pick(args.corpus, config, "corpus"), "a corpus path", "--corpus")
    bank_path = _require(_pick(args.bank, config, "bank"), "a bank path", "--bank")
    paragraphs = ingest_corpus(corpus)
    embedder = build_embedder(config)
    bank = build_bank(paragraphs, embedder)
    save_bank(bank, bank_path)
    print(f"{len(bank)} entries, dim {bank.dim}")
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    bank_path = _require(_pick(args.bank, config, "bank"), "a bank path", "--bank")
    bank = load_bank(bank_path)
    embedder = build_embedder(config)
    _check_bank_dim(bank, embedder)
    k = _pick(args.k, config.get("pipeline") or {}, "k", 5)

    if args.text is not None:
        requests = [(None, args.text)]
    else:
        requests = read_queries(args.file)

    lines = []
    for query_id, text in requests:
        hits = bank.knn(embedder.embed_one(text), k)
        for hit in hits:
            row = {
                "id": hit.paragraph_id,
                "title": hit.paragraph.title,
                "distance": hit.distance,
                "rank": hit.rank,
            }
            if query_id is not None:
                row["query_id"] = query_id
            lines.append(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
    _write_or_print("".join(line + "\n" for line in lines), args.out)
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    queries_path = _require(_pick(args.queries, config, "queries"), "a query file", "--queries")
    bank_path = _require(_pick(args.bank, config, "bank"), "a bank path", "--bank")
    out_path = _require(_pick(args.out, config, "out"), "an output path", "--out")

    bank = load_bank(bank_path)
    embedder = build_embedder(config)
    _check_bank_dim(bank, embedder)
    draft_gateway = build_gateway(config, "draft")
    revise_gateway = build_gateway(config, "reviser")
    pipeline_config = build_pipeline_config(
        config, mode=args.mode, k=args.k, iterations=args.iterations
    )
    concurrency = _pick(args.concurrency, config, "concurrency", 1)

    pairs = read_queries(queries_path)
    records = run_batch(
        [query for _, query in pairs],
        bank,
        embedder,
        draft_gateway,
        revise_gateway,
        pipeline_config,
        concurrency=concurrency,
        ids=[query_id for query_id, _ in pairs],
    )
    write_records(records, out_path)
    failed = [record for record in records if record.error is not None]
    print(f"{len(records)} records written to {out_path}")
    if failed:
        print(
            f"{len(failed)} of {len(records)} queries failed "
            f"(ids: {', '.join(str(r.id) for r in failed[:10])})",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    gold_path = _require(_pick(args.gold, config, "gold"), "a gold file", "--gold")
    records_path = _require(
        _pick(args.records, config, "records"), "a pipeline records file", "--records"
    )
    golds = load_gold(gold_path)
    records = read_records(records_path)
    by_id = {record.id: record for record in records}
    missing = [gold.id for gold in golds if gold.id not in by_id]
    if missing:
        raise ArrError(
            f"gold ids missing from records: {missing[:10]}"
            + (" ..." if len(missing) > 10 else "")
        )
    extra = set(by_id) - {gold.id for gold in golds}
    if extra:
        print(f"note: {len(extra)} record ids have no gold entry", file=sys.stderr)

    k_max = args.k if args.k is not None else 10
    report: dict[str, Any] = {"n_examples": len(golds)}

    titled = [gold for gold in golds if gold.gold_titles is not None]
    if titled:
        if args.catalog:
            catalog = [
                line.strip()
                for line in Path(args.catalog).read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]
            catalog_source = "catalog_file"
        else:
            catalog = sorted({title for gold in titled for title in gold.gold_titles})
            catalog_source = "gold_titles_union"
        examples = [
            EvalExample(id=gold.id, query=gold.query, gold_titles=frozenset(gold.gold_titles))
            for gold in titled
        ]
        answers = [by_id[gold.id].final for gold in titled]
        title_report = micro_f1(examples, answers, catalog, strict=args.strict_match)
        report.update(
            {
                "micro_precision": title_report.micro_precision,
                "micro_recall": title_report.micro_recall,
                "micro_f1": title_report.micro_f1,
                "example_hit_rate": title_report.example_hit_rate,
                "n_title_examples": title_report.n_examples,
            }
        )
        if args.csv:
            write_rows_csv(
                per_example_title_rows(examples, answers, catalog, strict=args.strict_match),
                args.csv,
            )
    else:
        catalog_source = None

    ranked = [gold for gold in golds if gold.relevant_ids is not None]
    if ranked:
        runs = []
        for gold in ranked:
            record = by_id[gold.id]
            ranked_ids = (
                [hit.paragraph_id for hit in record.iterations[-1].evidence]
                if record.iterations
                else []
            )
            runs.append(
                RankedRun(
                    query_id=gold.id,
                    ranked_ids=tuple(ranked_ids),
                    relevant_ids=frozenset(gold.relevant_ids),
                )
            )
        ranked_report = ranked_metrics(runs, ks=range(1, k_max + 1))
        report.update(
            {
                "recall_at_k": {str(k): v for k, v in sorted(ranked_report.recall_at_k.items())},
                "precision_at_k": {
                    str(k): v for k, v in sorted(ranked_report.precision_at_k.items())
                },
                "map_score": ranked_report.map_score,
                "n_ranked_runs": ranked_report.n_examples,
            }
        )

    report["conventions"] = {
        **CONVENTIONS,
        "title_match": "raw_substring" if args.strict_match else "nfkc_whitespace_collapse",
        "catalog_source": catalog_source,
        "ranked_source": "last_iteration_evidence",
    }
    report["config"] = {
        "gold": str(gold_path),
        "records": str(records_path),
        "k_max": k_max,
        "strict_match": bool(args.strict_match),
    }
    text = json.dumps(report, ensure_ascii=False, indent=2) + "\n"
    _write_or_print(text, args.out)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config_file(args.config)
    queries_path = _require(_pick(args.queries, config, "queries"), "a query file", "--queries")
    gold_path = _require(_pick(args.gold, config, "gold"), "a gold file", "--gold")
    bank_path = _require(_pick(args.bank, config, "bank"), "a bank path", "--bank")
    out_path = _require(_pick(args.out, config, "out"), "an output path", "--out")

    bank = load_bank(bank_path)
    embedder = build_embedder(config)
    _check_bank_dim(bank, embedder)
    draft_gateway = build_gateway(config, "draft")
    pipeline_section = config.get("pipeline") or {}
    suffix = pipeline_section.get("draft_suffix", DEFAULT_DRAFT_SUFFIX)
    k_max = args.k if args.k is not None else 10
    concurrency = _pick(args.concurrency, config, "concurrency", 1)

    pairs = read_queries(queries_path)
    golds = {gold.id: gold for gold in load_gold(gold_path)}
    missing = [query_id for query_id, _ in pairs if query_id not in golds]
    if missing:
        raise ArrError(f"query ids missing from gold file: {missing[:10]}")
    no_relevant = [
        query_id for query_id, _ in pairs if golds[query_id].relevant_ids is None
    ]
    if no_relevant:
        raise ArrError(
            f"gold entries without relevant_ids cannot be ablated: {no_relevant[:10]}"
        )

    def draft_one(pair: tuple) -> tuple:
        query_id, query = pair
        try:
            return query_id, generate_draft(query, draft_gateway, suffix=suffix), None
        except Exception as exc:
            return query_id, None, str(exc)

    if concurrency == 1:
        drafted = [draft_one(pair) for pair in pairs]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            drafted = list(pool.map(draft_one, pairs))

    failures = [(query_id, error) for query_id, _, error in drafted if error]
    queries_by_id = dict(pairs)
    query_runs = []
    answer_runs = []
    for query_id, draft, error in drafted:
        if error:
            continue
        relevant = frozenset(golds[query_id].relevant_ids)
        for retrieval_text, runs in ((queries_by_id[query_id], query_runs), (draft, answer_runs)):
            hits = bank.knn(embedder.embed_one(retrieval_text), k_max)
            runs.append(
                RankedRun(
                    query_id=query_id,
                    ranked_ids=tuple(hit.paragraph_id for hit in hits),
                    relevant_ids=relevant,
                )
            )

    if not query_runs:
        raise ArrError("every draft failed; nothing to ablate")
    ks = range(1, k_max + 1)
    query_report = ranked_metrics(query_runs, ks)
    answer_report = ranked_metrics(answer_runs, ks)
    result = {
        "n_queries": len(pairs),
        "n_scored": len(query_runs),
        "n_failed": len(failures),
        "k_values": list(ks),
        "query_based": query_report.to_dict(),
        "answer_based": answer_report.to_dict(),
        "config": {"bank": str(bank_path), "k_max": k_max, "embedder_dim": embedder.dim},
    }
    _write_or_print(json.dumps(result, ensure_ascii=False, indent=2) + "\n", out_path)
    if failures:
        print(
            f"{len(failures)} of {len(pairs)} drafts failed "
            f"(ids: {', '.join(str(i) for i, _ in failures[:10])})",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service.app import create_app

    config = load_config_file(args.config)
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_mock_models(args: argparse.Namespace) -> int:
    import uvicorn

    from .service.mock_models import create_mock_app

    rules = []
    default_response = None
    if args.script:
        script = load_config_file(args.script)
        for i, rule in enumerate(script.get("rules", [])):
            if not (isinstance(rule, dict) and "pattern" in rule and "response" in rule):
                raise ArrError(f"script rule {i} must be {{pattern, response}}")
            rules.append((rule["pattern"], rule["response"]))
        default_response = script.get("default_response")
    app = create_mock_app(rules=rules, default_response=default_response, embed_dim=args.dim)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arr",
        description="Draft-retrieve-revise toolkit: build knowledge banks, retrieve "
        "evidence, run the pipeline, and score the results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (flags override its values)")
        p.add_argument("--bank", help="bank vector file path")
        p.add_argument("--k", type=int, help="neighbors to retrieve / max k to score")
        p.add_argument("--mode", choices=["query", "answer"], help="retrieval text source")
        p.add_argument("--iterations", type=int, help="retrieve-revise rounds")
        p.add_argument("--concurrency", type=int, help="parallel queries")
        p.add_argument("--out", help="output file (default stdout where applicable)")

    p = sub.add_parser("build-bank", help="embed a corpus into a bank file + sidecar")
    add_common(p)
    p.add_argument("--corpus", help="corpus JSONL ({id?, title, body, source?})")
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("retrieve", help="k-NN search against a bank")
    add_common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text", help="retrieve for this literal text")
    group.add_argument("--file", help="query JSONL file ({id, query})")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("pipeline", help="run draft-retrieve-revise over a query file")
    add_common(p)
    p.add_argument("--queries", help="query JSONL file ({id, query})")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="score pipeline records against a gold file")
    add_common(p)
    p.add_argument("--gold", help="gold JSONL ({id, query, gold_titles|relevant_ids})")
    p.add_argument("--records", help="pipeline output JSONL")
    p.add_argument("--catalog", help="title catalog file, one title per line")
    p.add_argument("--csv", help="also write per-example rows to this CSV")
    p.add_argument(
        "--strict-match",
        action="store_true",
        help="raw substring title matching (no normalization)",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "ablate", help="contrast query-based vs answer-based retrieval recall"
    )
    add_common(p)
    p.add_argument("--queries", help="query JSONL file ({id, query})")
    p.add_argument("--gold", help="gold JSONL with relevant_ids")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="serve the toolkit as an HTTP service")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser(
        "mock-models", help="serve deterministic mock chat + embedding endpoints"
    )
    p.add_argument("--script", help="JSON file with chat rules/default_response")
    p.add_argument("--dim", type=int, default=64, help="embedding dimension")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8081)
    p.set_defaults(func=cmd_mock_models)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ArrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
