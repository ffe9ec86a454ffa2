"""Nugget-based evaluation toolkit for conversational RAG systems.

Covers the full loop: span-constrained nugget extraction, entailment and
yes/no coverage matching, duplicate removal, nugget recall/precision, ROUGE,
groundedness, ranked-retrieval metrics, adaptive pooling, rank correlations,
and leaderboard reports, with deterministic replay through a call cache.
"""

from .analysis import (
    LabelSource,
    LabelVector,
    SystemRanking,
    agreement,
    kendall_tau,
    majority_vote,
    rank_submission,
    spearman_rho,
)
from .corpus import (
    GenerationRun,
    GoldResponse,
    Nugget,
    NuggetSet,
    NuggetSource,
    PtkbStatement,
    Qrels,
    Response,
    RetrievalRun,
    RunCategory,
    Topic,
    Turn,
)
from .dedup import deduplicate, deduplicate_all
from .errors import (
    BackendReplyError,
    ConeError,
    ConfigError,
    CorpusFormatError,
    DedupBackendError,
    GatewayError,
    SpanValidationError,
    TransportError,
    UndefinedMetricError,
)
from .gateway import (
    CallCache,
    EntailmentLabel,
    EntailmentQuery,
    EntailmentVerdict,
    Gateway,
    LlmRequest,
)
from .matcher import Matcher, MatchMatrix, MatchMode
from .metrics import (
    GroundednessScore,
    RetrievalScore,
    RougeScore,
    RougeVariant,
    RunMetrics,
    TurnMetrics,
    groundedness,
    mean_average_precision,
    ndcg,
    precision_at,
    precision_ntn,
    recall_at,
    recall_ntn,
    recall_ntr,
    rouge,
)
from .nuggetizer import ExtractionOutcome, Nuggetizer, validate_span
from .pooling import Pool, PoolEntry, build_pool, grade_pool
from .report import evaluate_generation_run, evaluate_retrieval_run

__version__ = "0.1.0"

__all__ = [
    "BackendReplyError",
    "CallCache",
    "ConeError",
    "ConfigError",
    "CorpusFormatError",
    "DedupBackendError",
    "EntailmentLabel",
    "EntailmentQuery",
    "EntailmentVerdict",
    "ExtractionOutcome",
    "Gateway",
    "GatewayError",
    "GenerationRun",
    "GoldResponse",
    "GroundednessScore",
    "LabelSource",
    "LabelVector",
    "LlmRequest",
    "MatchMatrix",
    "MatchMode",
    "Matcher",
    "Nugget",
    "NuggetSet",
    "NuggetSource",
    "Nuggetizer",
    "Pool",
    "PoolEntry",
    "PtkbStatement",
    "Qrels",
    "Response",
    "RetrievalRun",
    "RetrievalScore",
    "RougeScore",
    "RougeVariant",
    "RunCategory",
    "RunMetrics",
    "SpanValidationError",
    "SystemRanking",
    "Topic",
    "TransportError",
    "Turn",
    "TurnMetrics",
    "UndefinedMetricError",
    "agreement",
    "build_pool",
    "deduplicate",
    "deduplicate_all",
    "evaluate_generation_run",
    "evaluate_retrieval_run",
    "grade_pool",
    "groundedness",
    "kendall_tau",
    "majority_vote",
    "mean_average_precision",
    "ndcg",
    "precision_at",
    "precision_ntn",
    "rank_submission",
    "recall_at",
    "recall_ntn",
    "recall_ntr",
    "rouge",
    "spearman_rho",
    "validate_span",
]
