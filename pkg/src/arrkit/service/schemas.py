"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Optional, Union

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    entries: int
    dim: Optional[int] = None
    embedder_tag: str = ""


class EmbedRequest(BaseModel):
    texts: list[str]


class EmbedResponse(BaseModel):
    vectors: list[list[float]]
    dim: int


class RetrieveRequest(BaseModel):
    text: str = Field(min_length=1)
    k: int = Field(default=5, ge=1)


class HitModel(BaseModel):
    rank: int
    paragraph_id: int
    distance: float
    title: str
    body: str
    source: Optional[str] = None


class RetrieveResponse(BaseModel):
    hits: list[HitModel]


class PipelineRequest(BaseModel):
    query: str = Field(min_length=1)
    id: Optional[Union[int, str]] = None
    # per-request overrides; server config fills whatever is omitted
    mode: Optional[str] = None
    k: Optional[int] = Field(default=None, ge=1)
    iterations: Optional[int] = Field(default=None, ge=0)
    draft: Optional[str] = None  # precomputed draft, skips the draft stage


class TraceModel(BaseModel):
    retrieval_text: str
    evidence: list[HitModel]
    prompt: str
    revised: str


class RecordModel(BaseModel):
    id: Optional[Union[int, str]] = None
    query: str
    draft: str
    final: str
    error: Optional[str] = None
    iterations: list[TraceModel] = []


class TitleExampleModel(BaseModel):
    id: Union[int, str]
    query: str = ""
    gold_titles: list[str] = Field(min_length=1)


class RankedRunModel(BaseModel):
    query_id: Union[int, str]
    ranked_ids: list[int]
    relevant_ids: list[int]


class EvaluateRequest(BaseModel):
    """Either the title-metric inputs, the ranked-run inputs, or both."""

    examples: Optional[list[TitleExampleModel]] = None
    answers: Optional[list[str]] = None
    catalog: Optional[list[str]] = None
    runs: Optional[list[RankedRunModel]] = None
    ks: list[int] = Field(default_factory=lambda: [1, 5, 10])
    strict_match: bool = False


class ReportModel(BaseModel):
    n_examples: int
    micro_precision: Optional[float] = None
    micro_recall: Optional[float] = None
    micro_f1: Optional[float] = None
    example_hit_rate: Optional[float] = None
    recall_at_k: dict[str, float] = {}
    precision_at_k: dict[str, float] = {}
    map_score: Optional[float] = None
    conventions: dict[str, Union[float, str, None]] = {}
