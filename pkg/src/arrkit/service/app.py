"""HTTP service wrapping the toolkit.

One process serves embedding, retrieval, the full pipeline, and metric
computation for many clients; the CLI covers the same operations for
local single-user runs. The app is built from the same JSON run config
the CLI takes, so a config that works offline (scripted endpoints, hash
embedder) serves identically.

Endpoints: GET /health, POST /embed, POST /retrieve, POST /pipeline,
POST /evaluate.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import ArrError, TransportError
from ..evaluation import (
    CONVENTIONS,
    EvalExample,
    RankedRun,
    micro_f1,
    ranked_metrics,
)
from ..knowledge_bank import KnowledgeBank, load_bank
from ..pipeline import record_to_dict, run_query
from ..runconfig import build_embedder, build_gateway, build_pipeline_config
from .schemas import (
    EmbedRequest,
    EmbedResponse,
    EvaluateRequest,
    HealthResponse,
    HitModel,
    PipelineRequest,
    RecordModel,
    ReportModel,
    RetrieveRequest,
    RetrieveResponse,
)


def _hit_model(hit) -> HitModel:
    return HitModel(
        rank=hit.rank,
        paragraph_id=hit.paragraph_id,
        distance=hit.distance,
        title=hit.paragraph.title,
        body=hit.paragraph.body,
        source=hit.paragraph.source,
    )


def create_app(config: dict) -> FastAPI:
    """Build the service from a run config dict.

    The bank loads eagerly (a service that cannot retrieve should fail
    at startup, not on the first request); gateways are built lazily on
    the first /pipeline call so retrieval-only deployments need no
    endpoint sections.
    """
    app = FastAPI(title="arrkit", version="0.1.0")
    embedder = build_embedder(config)
    bank: Optional[KnowledgeBank] = None
    if config.get("bank"):
        bank = load_bank(config["bank"])
        if bank.dim != embedder.dim:
            raise ArrError(
                f"embedder config has dim {embedder.dim}, bank has dim {bank.dim}"
            )
    gateways: dict[str, object] = {}

    def get_gateway(role: str):
        if role not in gateways:
            gateways[role] = build_gateway(config, role)
        return gateways[role]

    @app.exception_handler(ArrError)
    async def arr_error_handler(request: Request, exc: ArrError) -> JSONResponse:
        status = 502 if isinstance(exc, TransportError) else 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok",
            entries=len(bank) if bank is not None else 0,
            dim=bank.dim if bank is not None else embedder.dim,
            embedder_tag=getattr(embedder, "tag", ""),
        )

    @app.post("/embed", response_model=EmbedResponse)
    def embed(body: EmbedRequest) -> EmbedResponse:
        matrix = embedder.embed_many(body.texts)
        return EmbedResponse(vectors=[row.tolist() for row in matrix], dim=embedder.dim)

    @app.post("/retrieve", response_model=RetrieveResponse)
    def retrieve(body: RetrieveRequest) -> RetrieveResponse:
        if bank is None:
            raise ArrError("no bank configured; set 'bank' in the service config")
        hits = bank.knn(embedder.embed_one(body.text), body.k)
        return RetrieveResponse(hits=[_hit_model(hit) for hit in hits])

    @app.post("/pipeline", response_model=RecordModel)
    def pipeline(body: PipelineRequest) -> RecordModel:
        if bank is None:
            raise ArrError("no bank configured; set 'bank' in the service config")
        pipeline_config = build_pipeline_config(
            config, mode=body.mode, k=body.k, iterations=body.iterations
        )
        record = run_query(
            body.query,
            bank,
            embedder,
            # a precomputed draft never touches the draft endpoint
            get_gateway("draft") if body.draft is None else None,
            get_gateway("reviser"),
            pipeline_config,
            query_id=body.id,
            draft=body.draft,
        )
        return RecordModel(**record_to_dict(record))

    @app.post("/evaluate", response_model=ReportModel)
    def evaluate(body: EvaluateRequest) -> ReportModel:
        report = ReportModel(n_examples=0)
        if body.examples is not None:
            if body.answers is None or len(body.answers) != len(body.examples):
                raise ArrError("'answers' must align one-to-one with 'examples'")
            examples = [
                EvalExample(id=e.id, query=e.query, gold_titles=frozenset(e.gold_titles))
                for e in body.examples
            ]
            catalog = body.catalog or sorted(
                {title for e in body.examples for title in e.gold_titles}
            )
            title_report = micro_f1(
                examples, body.answers, catalog, strict=body.strict_match
            )
            report.n_examples = title_report.n_examples
            report.micro_precision = title_report.micro_precision
            report.micro_recall = title_report.micro_recall
            report.micro_f1 = title_report.micro_f1
            report.example_hit_rate = title_report.example_hit_rate
        if body.runs is not None:
            runs = [
                RankedRun(
                    query_id=r.query_id,
                    ranked_ids=tuple(r.ranked_ids),
                    relevant_ids=frozenset(r.relevant_ids),
                )
                for r in body.runs
            ]
            ranked_report = ranked_metrics(runs, ks=body.ks)
            report.n_examples = max(report.n_examples, ranked_report.n_examples)
            report.recall_at_k = {
                str(k): v for k, v in sorted(ranked_report.recall_at_k.items())
            }
            report.precision_at_k = {
                str(k): v for k, v in sorted(ranked_report.precision_at_k.items())
            }
            report.map_score = ranked_report.map_score
        report.conventions = {
            **CONVENTIONS,
            "title_match": "raw_substring" if body.strict_match else "nfkc_whitespace_collapse",
        }
        return report

    return app
