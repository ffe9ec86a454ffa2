"""Adaptive assessment pools over participant retrieval runs.

Every passage any run ranks in its top `k_guaranteed` enters the pool
unconditionally; passages seen only at ranks (k_guaranteed, k_max] must pass
a relevance filter. Grading turns a pool into qrels through a pluggable
(turn, passage) -> grade judge.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Mapping

from .corpus import Qrels, RetrievalRun, Turn
from .errors import BackendReplyError, ConeError
from .gateway import Gateway, LlmRequest

logger = logging.getLogger(__name__)

DEFAULT_K_GUARANTEED = 5
DEFAULT_K_MAX = 30
DEFAULT_FILTER_MIN_GRADE = 1

TIER_GUARANTEED = "guaranteed"
TIER_FILTERED = "filtered"

RELEVANCE_PROMPT_ASSET = "relevance_grading_prompt_v1.txt"

FilterPredicate = Callable[[str, str], bool]
GradeJudge = Callable[[str, str], int]


@dataclass(frozen=True)
class PoolEntry:
    """One pooled passage with the runs and ranks that contributed it."""

    passage_id: str
    tier: str
    contributors: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if self.tier not in (TIER_GUARANTEED, TIER_FILTERED):
            raise ValueError(f"unknown pool tier {self.tier!r}")


@dataclass(frozen=True)
class Pool:
    """Per-turn pooled passages."""

    per_turn: Mapping[str, tuple[PoolEntry, ...]] = field(default_factory=dict)
    k_guaranteed: int = DEFAULT_K_GUARANTEED
    k_max: int = DEFAULT_K_MAX

    def passage_ids(self, turn_id: str) -> set[str]:
        return {entry.passage_id for entry in self.per_turn.get(turn_id, ())}

    def pairs(self) -> list[tuple[str, str]]:
        return [
            (turn_id, entry.passage_id)
            for turn_id in self.per_turn
            for entry in self.per_turn[turn_id]
        ]

    def size(self) -> int:
        return sum(len(entries) for entries in self.per_turn.values())


def accept_all(_turn_id: str, _passage_id: str) -> bool:
    return True


def reject_all(_turn_id: str, _passage_id: str) -> bool:
    return False


def build_pool(runs: Iterable[RetrievalRun],
               k_guaranteed: int = DEFAULT_K_GUARANTEED,
               k_max: int = DEFAULT_K_MAX,
               filter_predicate: FilterPredicate = accept_all,
               concurrency: int = 8) -> Pool:
    """Union of per-run top-k_guaranteed plus filter-approved deeper ranks.

    The filter runs once per unique (turn, passage) candidate; a filter
    failure excludes that pair with a warning rather than aborting the pool.
    """
    if k_guaranteed > k_max:
        raise ValueError("k_guaranteed must be <= k_max")
    runs = list(runs)

    contributors: dict[tuple[str, str], list[tuple[str, int]]] = {}
    guaranteed: set[tuple[str, str]] = set()
    candidates: set[tuple[str, str]] = set()
    for run in runs:
        for turn_id in run.turn_ids():
            for rank, passage_id in enumerate(
                    run.ranked_ids(turn_id, k_max), start=1):
                key = (turn_id, passage_id)
                contributors.setdefault(key, []).append((run.run_tag, rank))
                if rank <= k_guaranteed:
                    guaranteed.add(key)
                else:
                    candidates.add(key)
    candidates -= guaranteed

    def apply_filter(key: tuple[str, str]) -> bool:
        turn_id, passage_id = key
        try:
            return filter_predicate(turn_id, passage_id)
        except Exception as exc:
            logger.warning("pool filter failed for (%s, %s), excluded: %s",
                           turn_id, passage_id, exc)
            return False

    ordered_candidates = sorted(candidates)
    if ordered_candidates:
        with ThreadPoolExecutor(
                max_workers=min(concurrency, len(ordered_candidates))) as pool:
            accepted_flags = list(pool.map(apply_filter, ordered_candidates))
        accepted = {
            key for key, flag in zip(ordered_candidates, accepted_flags) if flag
        }
    else:
        accepted = set()

    per_turn: dict[str, tuple[PoolEntry, ...]] = {}
    turn_ids = sorted({turn_id for turn_id, _ in guaranteed | accepted})
    for turn_id in turn_ids:
        entries = []
        passage_ids = sorted(
            passage_id for tid, passage_id in guaranteed | accepted
            if tid == turn_id
        )
        for passage_id in passage_ids:
            key = (turn_id, passage_id)
            entries.append(
                PoolEntry(
                    passage_id=passage_id,
                    tier=(TIER_GUARANTEED if key in guaranteed else TIER_FILTERED),
                    contributors=tuple(sorted(contributors[key])),
                )
            )
        per_turn[turn_id] = tuple(entries)
    return Pool(per_turn=per_turn, k_guaranteed=k_guaranteed, k_max=k_max)


# ---------------------------------------------------------------------------
# Grading


@dataclass(frozen=True)
class PoolGrading:
    qrels: Qrels
    distribution: Mapping[int, int] = field(default_factory=dict)


def grade_pool(pool: Pool, judge: GradeJudge) -> PoolGrading:
    """Judge every pooled (turn, passage) pair; grades clamp into 0..4."""
    judgments: dict[tuple[str, str], int] = {}
    distribution = {grade: 0 for grade in range(5)}
    for turn_id, passage_id in sorted(pool.pairs()):
        grade = judge(turn_id, passage_id)
        if not 0 <= grade <= 4:
            clamped = min(4, max(0, grade))
            logger.warning("grade %d for (%s, %s) out of range, clamped to %d",
                           grade, turn_id, passage_id, clamped)
            grade = clamped
        judgments[(turn_id, passage_id)] = grade
        distribution[grade] += 1
    return PoolGrading(qrels=Qrels(judgments=judgments),
                       distribution=distribution)


def relevance_grading_template() -> str:
    return (resources.files("cone") / "assets" / RELEVANCE_PROMPT_ASSET
            ).read_text(encoding="utf-8")


class LlmRelevanceJudge:
    """Grades (turn, passage) pairs 0-4 with an LLM behind the gateway.

    The grading prompt is a versioned package asset; the reply's first
    integer is the grade.
    """

    def __init__(self, gateway: Gateway, turns: Mapping[str, Turn],
                 passages: Mapping[str, str], template: str | None = None):
        self.gateway = gateway
        self.turns = turns
        self.passages = passages
        self.template = template if template is not None \
            else relevance_grading_template()

    def __call__(self, turn_id: str, passage_id: str) -> int:
        turn = self.turns.get(turn_id)
        if turn is None:
            raise ConeError(f"turn {turn_id} not found in topics")
        passage = self.passages.get(passage_id)
        if passage is None:
            raise ConeError(f"no text for passage {passage_id}")
        prompt = (self.template
                  .replace("{query}", turn.resolved_utterance)
                  .replace("{passage}", passage))
        reply = self.gateway.complete(
            LlmRequest(user_message=prompt, max_output_tokens=8)
        )
        match = re.search(r"-?\d+", reply)
        if match is None:
            raise BackendReplyError(
                f"no integer grade in judge reply for ({turn_id}, "
                f"{passage_id}): {reply!r}"
            )
        return int(match.group())


def judge_filter(judge: GradeJudge,
                 min_grade: int = DEFAULT_FILTER_MIN_GRADE) -> FilterPredicate:
    """Pool filter accepting pairs the judge grades at or above min_grade."""

    def predicate(turn_id: str, passage_id: str) -> bool:
        return judge(turn_id, passage_id) >= min_grade

    return predicate


def mapping_judge(grades: Mapping[tuple[str, str], int],
                  default: int = 0) -> GradeJudge:
    """Judge backed by a fixed (turn, passage) -> grade map; for tests/CLI."""

    def judge(turn_id: str, passage_id: str) -> int:
        return grades.get((turn_id, passage_id), default)

    return judge


# ---------------------------------------------------------------------------
# Pool file round-trip


def serialize_pool(pool: Pool) -> str:
    doc = {
        "k_guaranteed": pool.k_guaranteed,
        "k_max": pool.k_max,
        "turns": {
            turn_id: [
                {
                    "passage_id": entry.passage_id,
                    "tier": entry.tier,
                    "contributors": [list(pair) for pair in entry.contributors],
                }
                for entry in entries
            ]
            for turn_id, entries in pool.per_turn.items()
        },
    }
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True)


def parse_pool(document: str | Mapping) -> Pool:
    doc = json.loads(document) if isinstance(document, str) else document
    if not isinstance(doc, Mapping) or "turns" not in doc:
        raise ConeError("pool file must be a JSON object with a 'turns' key")
    per_turn = {}
    for turn_id, raw_entries in doc["turns"].items():
        per_turn[turn_id] = tuple(
            PoolEntry(
                passage_id=raw["passage_id"],
                tier=raw["tier"],
                contributors=tuple(
                    (tag, int(rank)) for tag, rank in raw.get("contributors", [])
                ),
            )
            for raw in raw_entries
        )
    return Pool(per_turn=per_turn,
                k_guaranteed=int(doc.get("k_guaranteed", DEFAULT_K_GUARANTEED)),
                k_max=int(doc.get("k_max", DEFAULT_K_MAX)))
