"""Draft-retrieve-revise toolkit.

Answer a query with a domain model, use that draft (not the query) to
pull evidence from a key-value embedding bank, and have a stronger
model revise the draft against the evidence. Ships the retrieval core,
model gateways, the orchestration pipeline, an evaluation harness, a
CLI (``arr``), and an HTTP service.
"""

from .embedder import (
    EmbedderConfig,
    HashEmbedder,
    RemoteEmbedder,
    embed,
    hash_embed,
    make_embedder,
    remote_embed,
)
from .errors import (
    ArrError,
    BankConsistencyError,
    BankFormatError,
    BudgetExceededError,
    CorpusError,
    CountMismatchError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyCorpusError,
    EmptyResponseError,
    MalformedRecordError,
    MalformedResponseError,
    PipelineStageError,
    TransportError,
)
from .evaluation import (
    EvalExample,
    GoldRecord,
    MetricsReport,
    RankedRun,
    average_precision,
    exact_match_accuracy,
    extract_titles,
    load_gold,
    mean_average_precision,
    mean_precision_at_k,
    micro_f1,
    precision_at_k,
    ranked_metrics,
    recall_at_k,
)
from .knowledge_bank import (
    MAGIC,
    KnowledgeBank,
    Paragraph,
    RetrievalHit,
    build_bank,
    ingest_corpus,
    load_bank,
    save_bank,
)
from .llm_gateway import (
    DEFAULT_DRAFT_SUFFIX,
    ChatMessage,
    HttpChatGateway,
    ModelEndpointConfig,
    ScriptedResponder,
    generate_draft,
    revise,
)
from .pipeline import (
    MODE_ANSWER,
    MODE_QUERY,
    IterationTrace,
    PipelineConfig,
    PipelineRecord,
    normalize_mode,
    read_queries,
    read_records,
    record_from_dict,
    record_to_dict,
    run_batch,
    run_query,
    write_records,
)
from .prompting import (
    DEFAULT_PROMPT_BUDGET,
    DEFAULT_REVISION_INSTRUCTION,
    assemble_revision_prompt,
    estimate_tokens,
)

__version__ = "0.1.0"
