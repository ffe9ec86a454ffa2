"""Scalar metrics: nugget recall/precision, ROUGE, groundedness, and the
ranked-retrieval family (nDCG@k, P@k, R@k, mAP).

Everything here is pure arithmetic over already-made matching decisions,
except groundedness, which issues entailment queries through the gateway.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .corpus import Qrels, Response, RetrievalRun
from .errors import ConeError, UndefinedMetricError
from .gateway import EntailmentQuery, Gateway
from .matcher import MatchMatrix, MatchMode

logger = logging.getLogger(__name__)

DEFAULT_REL_THRESHOLD = 1
DEFAULT_DEPTH = 1000
DEFAULT_GROUNDEDNESS_TOP_K = 5

GAIN_LINEAR = "linear"
GAIN_EXPONENTIAL = "exponential"


# ---------------------------------------------------------------------------
# Nugget coverage metrics


def recall_ntn(matrix: MatchMatrix) -> float:
    """Fraction of gold nuggets entailed by some extracted nugget."""
    if matrix.mode is not MatchMode.NTN:
        raise ValueError(f"expected an NTN matrix, got {matrix.mode.value}")
    if len(matrix.gold) == 0:
        raise UndefinedMetricError(
            f"turn {matrix.turn_id}: recall undefined for an empty gold set"
        )
    return len(matrix.covered_gold) / len(matrix.gold)


def precision_ntn(matrix: MatchMatrix) -> float:
    """Fraction of extracted nuggets that entail some gold nugget.

    An empty extraction scores 0: a response yielding no nuggets has no
    precise content. Callers flag that case separately.
    """
    if matrix.mode is not MatchMode.NTN:
        raise ValueError(f"expected an NTN matrix, got {matrix.mode.value}")
    assert matrix.extracted is not None
    if len(matrix.extracted) == 0:
        return 0.0
    covering = matrix.covering_extracted or frozenset()
    return len(covering) / len(matrix.extracted)


def recall_ntr(matrix: MatchMatrix) -> float:
    """Fraction of gold nuggets the full response captures."""
    if matrix.mode is MatchMode.NTN:
        raise ValueError("expected a response-mode matrix, got ntn")
    if len(matrix.gold) == 0:
        raise UndefinedMetricError(
            f"turn {matrix.turn_id}: recall undefined for an empty gold set"
        )
    return len(matrix.covered_gold) / len(matrix.gold)


# ---------------------------------------------------------------------------
# ROUGE


class RougeVariant(str, Enum):
    ROUGE1 = "rouge1"
    ROUGE2 = "rouge2"
    ROUGEL = "rougeL"


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float
    empty_reference: bool = False


_TOKEN = re.compile(r"[0-9a-z]+")


def rouge_tokens(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs; no stemming."""
    return _TOKEN.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for item_a in a:
        current = [0]
        for j, item_b in enumerate(b, start=1):
            if item_a == item_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[len(b)]


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def rouge(candidate: str, reference: str, variant: RougeVariant) -> RougeScore:
    """Clipped n-gram overlap (rouge1/rouge2) or LCS (rougeL) P/R/F1."""
    cand = rouge_tokens(candidate)
    ref = rouge_tokens(reference)
    if not ref:
        return RougeScore(0.0, 0.0, 0.0, empty_reference=True)

    if variant is RougeVariant.ROUGEL:
        overlap = lcs_length(cand, ref)
        denom_cand, denom_ref = len(cand), len(ref)
    else:
        n = 1 if variant is RougeVariant.ROUGE1 else 2
        cand_ngrams = _ngrams(cand, n)
        ref_ngrams = _ngrams(ref, n)
        overlap = sum(
            min(count, ref_ngrams[gram]) for gram, count in cand_ngrams.items()
        )
        denom_cand = sum(cand_ngrams.values())
        denom_ref = sum(ref_ngrams.values())

    precision = overlap / denom_cand if denom_cand else 0.0
    recall = overlap / denom_ref if denom_ref else 0.0
    return RougeScore(precision, recall, _f1(precision, recall))


def rouge_all(candidate: str, reference: str) -> dict[str, RougeScore]:
    return {variant.value: rouge(candidate, reference, variant)
            for variant in RougeVariant}


# ---------------------------------------------------------------------------
# Groundedness


@dataclass(frozen=True)
class GroundednessScore:
    """Fraction of response sentences entailed by a provenance passage."""

    value: float
    sentence_count: int
    grounded_count: int
    no_provenance: bool = False

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"groundedness out of [0, 1]: {self.value}")


_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation followed by whitespace."""
    return [segment.strip() for segment in _SENTENCE_BREAK.split(text)
            if segment.strip()]


def groundedness(response: Response, passages: Mapping[str, str],
                 gateway: Gateway,
                 top_k: int = DEFAULT_GROUNDEDNESS_TOP_K) -> GroundednessScore:
    """Sentence-level support against the response's top provenance passages.

    A sentence counts as grounded when any one of the first `top_k`
    provenance passages entails it.
    """
    provenance = list(response.passage_provenance[:top_k])
    if not provenance:
        return GroundednessScore(0.0, 0, 0, no_provenance=True)
    for passage_id in provenance:
        if passage_id not in passages:
            raise ConeError(f"no text for provenance passage {passage_id}")

    sentences = split_sentences(response.text)
    if not sentences:
        return GroundednessScore(0.0, 0, 0)

    queries = {
        (index, passage_id): EntailmentQuery(
            premise=passages[passage_id], hypothesis=sentence
        )
        for index, sentence in enumerate(sentences)
        for passage_id in provenance
    }
    verdicts = gateway.entail_many(queries)
    grounded = sum(
        1
        for index in range(len(sentences))
        if any(verdicts[(index, passage_id)].is_entailment
               for passage_id in provenance)
    )
    return GroundednessScore(grounded / len(sentences), len(sentences), grounded)


# ---------------------------------------------------------------------------
# Ranked-retrieval metrics


@dataclass(frozen=True)
class RetrievalScore:
    """Per-turn scores for one metric plus the turns excluded as undefined."""

    metric: str
    per_turn: Mapping[str, float] = field(default_factory=dict)
    excluded: tuple[str, ...] = ()

    @property
    def mean(self) -> float:
        if not self.per_turn:
            raise UndefinedMetricError(f"{self.metric}: no evaluable turns")
        return sum(self.per_turn.values()) / len(self.per_turn)


def _gain(grade: int, gain: str) -> float:
    if gain == GAIN_LINEAR:
        return float(grade)
    if gain == GAIN_EXPONENTIAL:
        return float(2 ** grade - 1)
    raise ValueError(f"unknown gain convention {gain!r}")


def ndcg(run: RetrievalRun, qrels: Qrels, k: int,
         gain: str = GAIN_LINEAR) -> RetrievalScore:
    """nDCG@k with discount 1/log2(rank+1); unjudged passages gain 0.

    Turns whose ideal DCG is 0 (nothing relevant) are excluded; turns the
    run skipped score 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    per_turn: dict[str, float] = {}
    excluded: list[str] = []
    for turn_id in qrels.turn_ids():
        grades = qrels.grades_for(turn_id)
        ideal = sorted(grades.values(), reverse=True)[:k]
        idcg = sum(_gain(grade, gain) / math.log2(rank + 1)
                   for rank, grade in enumerate(ideal, start=1))
        if idcg == 0:
            logger.warning("ndcg@%d: turn %s has no relevant passage, excluded",
                           k, turn_id)
            excluded.append(turn_id)
            continue
        dcg = sum(
            _gain(grades.get(passage_id, 0), gain) / math.log2(rank + 1)
            for rank, passage_id in enumerate(run.ranked_ids(turn_id, k), start=1)
        )
        per_turn[turn_id] = dcg / idcg
    return RetrievalScore(metric=f"ndcg@{k}", per_turn=per_turn,
                          excluded=tuple(excluded))


def precision_at(run: RetrievalRun, qrels: Qrels, k: int,
                 rel_threshold: int = DEFAULT_REL_THRESHOLD) -> RetrievalScore:
    """P@k with a fixed denominator of k over every judged turn."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_turn = {}
    for turn_id in qrels.turn_ids():
        relevant = qrels.relevant_for(turn_id, rel_threshold)
        hits = sum(1 for passage_id in run.ranked_ids(turn_id, k)
                   if passage_id in relevant)
        per_turn[turn_id] = hits / k
    return RetrievalScore(metric=f"p@{k}", per_turn=per_turn)


def recall_at(run: RetrievalRun, qrels: Qrels, k: int,
              rel_threshold: int = DEFAULT_REL_THRESHOLD) -> RetrievalScore:
    """R@k; turns with zero relevant passages are excluded, not scored 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_turn: dict[str, float] = {}
    excluded: list[str] = []
    for turn_id in qrels.turn_ids():
        relevant = qrels.relevant_for(turn_id, rel_threshold)
        if not relevant:
            logger.warning("r@%d: turn %s has no relevant passage, excluded",
                           k, turn_id)
            excluded.append(turn_id)
            continue
        hits = sum(1 for passage_id in run.ranked_ids(turn_id, k)
                   if passage_id in relevant)
        per_turn[turn_id] = hits / len(relevant)
    return RetrievalScore(metric=f"r@{k}", per_turn=per_turn,
                          excluded=tuple(excluded))


def mean_average_precision(
    run: RetrievalRun, qrels: Qrels, depth: int = DEFAULT_DEPTH,
    rel_threshold: int = DEFAULT_REL_THRESHOLD,
) -> RetrievalScore:
    """AP per turn up to `depth`, averaged over turns with relevant passages."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    per_turn: dict[str, float] = {}
    excluded: list[str] = []
    for turn_id in qrels.turn_ids():
        relevant = qrels.relevant_for(turn_id, rel_threshold)
        if not relevant:
            logger.warning("map: turn %s has no relevant passage, excluded",
                           turn_id)
            excluded.append(turn_id)
            continue
        hits = 0
        precision_sum = 0.0
        for rank, passage_id in enumerate(run.ranked_ids(turn_id, depth), start=1):
            if passage_id in relevant:
                hits += 1
                precision_sum += hits / rank
        per_turn[turn_id] = precision_sum / len(relevant)
    return RetrievalScore(metric="map", per_turn=per_turn,
                          excluded=tuple(excluded))


# ---------------------------------------------------------------------------
# Per-turn / per-run containers


@dataclass(frozen=True)
class TurnMetrics:
    """Named metric values for one turn."""

    turn_id: str
    values: Mapping[str, float] = field(default_factory=dict)
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class RunMetrics:
    """Per-turn metrics for one run plus turns excluded as unevaluable."""

    run_tag: str
    turns: Mapping[str, TurnMetrics] = field(default_factory=dict)
    excluded: tuple[tuple[str, str], ...] = ()

    @property
    def aggregates(self) -> dict[str, float]:
        """Unweighted mean per metric over the turns that have it."""
        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        for turn in self.turns.values():
            for name, value in turn.values.items():
                sums[name] = sums.get(name, 0.0) + value
                counts[name] = counts.get(name, 0) + 1
        return {name: sums[name] / counts[name] for name in sums}
