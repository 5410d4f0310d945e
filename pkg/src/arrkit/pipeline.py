"""Draft-retrieve-revise orchestration.

One run of the pipeline takes a query through up to three stages:

1. draft — the domain model answers the query directly;
2. retrieve — the draft (answer-based mode) or the raw query
   (query-based mode) is embedded and its nearest paragraphs fetched;
3. revise — a four-section prompt (instruction, query, draft, evidence)
   is assembled under the reviser's token budget and sent for revision.

Stages 2 and 3 repeat ``iterations`` times; from the second round on,
the previous round's revised answer becomes the retrieval text. The
full trace of every round is kept on the record, so any run can be
audited or re-scored offline.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import EmptyCorpusError, MalformedRecordError, PipelineStageError
from .knowledge_bank import KnowledgeBank, Paragraph, RetrievalHit
from .llm_gateway import DEFAULT_DRAFT_SUFFIX, ChatGateway, generate_draft, revise
from .prompting import (
    DEFAULT_PROMPT_BUDGET,
    DEFAULT_REVISION_INSTRUCTION,
    assemble_revision_prompt,
    estimate_tokens,
)

__all__ = [
    "MODE_ANSWER",
    "MODE_QUERY",
    "PipelineConfig",
    "IterationTrace",
    "PipelineRecord",
    "normalize_mode",
    "run_query",
    "run_batch",
    "record_to_dict",
    "record_from_dict",
    "write_records",
    "read_records",
    "read_queries",
    "assemble_revision_prompt",
    "estimate_tokens",
]

MODE_ANSWER = "answer_based"
MODE_QUERY = "query_based"

_MODE_ALIASES = {
    "answer": MODE_ANSWER,
    "answer_based": MODE_ANSWER,
    "query": MODE_QUERY,
    "query_based": MODE_QUERY,
}


def normalize_mode(mode: str) -> str:
    """Map a mode spelling ("answer", "query_based", ...) to its canonical name."""
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ValueError(
            f"mode must be one of {sorted(set(_MODE_ALIASES))}, got {mode!r}"
        ) from None


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one pipeline run; everything else comes from the deps."""

    mode: str = MODE_ANSWER
    k: int = 5
    iterations: int = 1
    instruction_template: str = DEFAULT_REVISION_INSTRUCTION
    token_budget: Optional[int] = None  # None = the reviser's input limit
    draft_suffix: str = DEFAULT_DRAFT_SUFFIX

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.token_budget is not None and self.token_budget < 1:
            raise ValueError(f"token_budget must be >= 1, got {self.token_budget}")


@dataclass(frozen=True)
class IterationTrace:
    """Everything one retrieve-revise round saw and produced."""

    retrieval_text: str
    evidence: list[RetrievalHit]
    prompt: str
    revised: str


@dataclass(frozen=True)
class PipelineRecord:
    """One query's full journey; ``error`` is set on failed batch entries."""

    query: str
    draft: str
    final: str
    iterations: list[IterationTrace] = field(default_factory=list)
    id: Optional[Union[int, str]] = None
    error: Optional[str] = None


def _resolve_budget(config: PipelineConfig, revise_gateway: ChatGateway) -> int:
    if config.token_budget is not None:
        return config.token_budget
    return getattr(revise_gateway, "max_input_tokens", DEFAULT_PROMPT_BUDGET)


def run_query(
    query: str,
    bank: KnowledgeBank,
    embedder,
    draft_gateway: ChatGateway,
    revise_gateway: ChatGateway,
    config: PipelineConfig,
    query_id: Optional[Union[int, str]] = None,
    draft: Optional[str] = None,
) -> PipelineRecord:
    """Run the full pipeline for one query.

    A precomputed ``draft`` skips the draft stage, which lets callers
    swap in any draft source (a stronger model, a human answer, a
    scripted fixture) without touching the rest of the flow. Stage
    failures are re-raised as ``PipelineStageError`` carrying the stage
    name and round index (the draft stage counts as round 0).
    """
    if not query.strip():
        raise ValueError("query must be nonempty")
    if len(bank) == 0:
        raise ValueError("bank has no entries")

    if draft is None:
        try:
            draft = generate_draft(query, draft_gateway, suffix=config.draft_suffix)
        except Exception as exc:
            raise PipelineStageError("draft", 0, exc) from exc
    elif not draft.strip():
        raise ValueError("a precomputed draft must be nonempty")

    budget = _resolve_budget(config, revise_gateway)
    traces: list[IterationTrace] = []
    retrieval_text = draft if config.mode == MODE_ANSWER else query
    for round_index in range(1, config.iterations + 1):
        try:
            query_vec = embedder.embed_one(retrieval_text)
        except Exception as exc:
            raise PipelineStageError("embed", round_index, exc) from exc
        try:
            hits = bank.knn(query_vec, config.k)
        except Exception as exc:
            raise PipelineStageError("retrieve", round_index, exc) from exc
        try:
            prompt = assemble_revision_prompt(
                config.instruction_template,
                query,
                draft,
                [hit.paragraph for hit in hits],
                budget,
            )
        except Exception as exc:
            raise PipelineStageError("assemble", round_index, exc) from exc
        try:
            revised = revise(prompt, revise_gateway, budget)
        except Exception as exc:
            raise PipelineStageError("revise", round_index, exc) from exc
        traces.append(
            IterationTrace(
                retrieval_text=retrieval_text,
                evidence=hits,
                prompt=prompt,
                revised=revised,
            )
        )
        retrieval_text = revised

    final = traces[-1].revised if traces else draft
    return PipelineRecord(
        query=query, draft=draft, final=final, iterations=traces, id=query_id
    )


def run_batch(
    queries: Sequence[str],
    bank: KnowledgeBank,
    embedder,
    draft_gateway: ChatGateway,
    revise_gateway: ChatGateway,
    config: PipelineConfig,
    concurrency: int = 1,
    ids: Optional[Sequence[Union[int, str]]] = None,
    drafts: Optional[Sequence[Optional[str]]] = None,
) -> list[PipelineRecord]:
    """Run many queries, up to ``concurrency`` at a time.

    Records come back in input order regardless of completion order. A
    failing query never aborts the batch: its record carries the error
    message and empty draft/final/trace fields. ``ids`` defaults to the
    positional index; ``drafts`` optionally supplies a precomputed draft
    per query (None entries fall back to the draft gateway).
    """
    if concurrency < 1:
        raise ValueError(f"concurrency must be >= 1, got {concurrency}")
    if ids is not None and len(ids) != len(queries):
        raise ValueError(f"got {len(ids)} ids for {len(queries)} queries")
    if drafts is not None and len(drafts) != len(queries):
        raise ValueError(f"got {len(drafts)} drafts for {len(queries)} queries")

    def task(index: int) -> PipelineRecord:
        query_id = ids[index] if ids is not None else index
        try:
            return run_query(
                queries[index],
                bank,
                embedder,
                draft_gateway,
                revise_gateway,
                config,
                query_id=query_id,
                draft=drafts[index] if drafts is not None else None,
            )
        except Exception as exc:
            return PipelineRecord(
                query=queries[index],
                draft="",
                final="",
                iterations=[],
                id=query_id,
                error=str(exc),
            )

    if concurrency == 1:
        return [task(i) for i in range(len(queries))]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(task, range(len(queries))))


def _hit_to_dict(hit: RetrievalHit) -> dict:
    return {
        "rank": hit.rank,
        "paragraph_id": hit.paragraph_id,
        "distance": hit.distance,
        "title": hit.paragraph.title,
        "body": hit.paragraph.body,
        "source": hit.paragraph.source,
    }


def record_to_dict(record: PipelineRecord) -> dict:
    """Plain-dict form with a fixed key order, ready for JSON."""
    return {
        "id": record.id,
        "query": record.query,
        "draft": record.draft,
        "final": record.final,
        "error": record.error,
        "iterations": [
            {
                "retrieval_text": trace.retrieval_text,
                "evidence": [_hit_to_dict(hit) for hit in trace.evidence],
                "prompt": trace.prompt,
                "revised": trace.revised,
            }
            for trace in record.iterations
        ],
    }


def record_from_dict(data: dict) -> PipelineRecord:
    traces = [
        IterationTrace(
            retrieval_text=entry["retrieval_text"],
            evidence=[
                RetrievalHit(
                    rank=hit["rank"],
                    distance=hit["distance"],
                    paragraph=Paragraph(
                        id=hit["paragraph_id"],
                        title=hit["title"],
                        body=hit["body"],
                        source=hit.get("source"),
                    ),
                )
                for hit in entry["evidence"]
            ],
            prompt=entry["prompt"],
            revised=entry["revised"],
        )
        for entry in data.get("iterations", [])
    ]
    return PipelineRecord(
        query=data["query"],
        draft=data["draft"],
        final=data["final"],
        iterations=traces,
        id=data.get("id"),
        error=data.get("error"),
    )


def write_records(records: Sequence[PipelineRecord], path: Union[str, Path]) -> None:
    """Write records as JSONL (UTF-8, LF); same records give the same bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def read_records(path: Union[str, Path]) -> list[PipelineRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_dict(json.loads(line)))
    return records


def read_queries(path: Union[str, Path]) -> list[tuple[Union[int, str], str]]:
    """Read a query JSONL file: one {"id": ..., "query": ...} per line."""
    out: list[tuple[Union[int, str], str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(data, dict) or "id" not in data:
                raise MalformedRecordError(line_no, "record must be an object with an 'id'")
            query = data.get("query")
            if not isinstance(query, str) or not query.strip():
                raise MalformedRecordError(line_no, "'query' must be a nonempty string")
            out.append((data["id"], query))
    if not out:
        raise EmptyCorpusError(f"no queries in {path}")
    return out
