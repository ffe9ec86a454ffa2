"""Nugget extraction with span enforcement.

An LLM proposes nugget lines for a (resolved utterance, source text) pair;
every accepted nugget must be locatable as a contiguous span of the source.
Lines that drift from exact-copy output go through a bounded repair pipeline
before being dropped (lenient) or rejected (strict).
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

from .corpus import Nugget, NuggetSet, NuggetSource, Qrels, Turn
from .errors import ConeError, GatewayError, SpanValidationError
from .gateway import Gateway, LlmRequest
from .prompts import extraction_prompt

logger = logging.getLogger(__name__)

NO_NUGGET_SENTINEL = "no nugget"
DEFAULT_MIN_GRADE = 2

_LIST_MARKER = re.compile(r"^\s*(?:[-*•·]|\(?\d{1,3}[.)])\s+")

REPAIR_EXACT = "exact"
REPAIR_WHITESPACE = "whitespace"
REPAIR_CASE_INSENSITIVE = "case-insensitive"
REPAIR_NO_MATCH = "no-match"


@dataclass(frozen=True)
class ExtractionOutcome:
    """What one extraction call produced."""

    nuggets: NuggetSet
    non_span_lines: tuple[tuple[str, str], ...] = ()
    no_nugget: bool = False

    def __post_init__(self):
        if self.no_nugget and len(self.nuggets) > 0:
            raise ValueError("no_nugget=true requires an empty nugget set")


@dataclass(frozen=True)
class PoolExtraction:
    """Per-turn nugget sets plus any per-passage failures kept out of them."""

    nuggets_by_turn: dict[str, NuggetSet] = field(default_factory=dict)
    failures: tuple[tuple[str, str, str], ...] = ()


def validate_span(candidate: str, source: str) -> tuple[int, int] | None:
    """Locate `candidate` inside `source`; None when nothing matches.

    Repair pipeline: exact find, then whitespace-run-tolerant match, then the
    same match case-insensitively. First occurrence wins at each stage.
    """
    start = source.find(candidate)
    if start != -1:
        return (start, start + len(candidate))
    tokens = candidate.split()
    if not tokens:
        return None
    pattern = r"\s+".join(re.escape(token) for token in tokens)
    match = re.search(pattern, source)
    if match:
        return match.span()
    match = re.search(pattern, source, re.IGNORECASE)
    if match:
        return match.span()
    return None


def repair_stage(candidate: str, source: str) -> str:
    """Which pipeline stage (if any) locates the candidate."""
    if candidate in source:
        return REPAIR_EXACT
    tokens = candidate.split()
    pattern = r"\s+".join(re.escape(token) for token in tokens) if tokens else None
    if pattern and re.search(pattern, source):
        return REPAIR_WHITESPACE
    if pattern and re.search(pattern, source, re.IGNORECASE):
        return REPAIR_CASE_INSENSITIVE
    return REPAIR_NO_MATCH


def split_completion(completion: str) -> tuple[list[str], bool]:
    """Completion text -> candidate nugget lines plus a sentinel flag.

    Lines are trimmed, empty lines skipped, leading list markers stripped.
    """
    candidates: list[str] = []
    saw_sentinel = False
    for raw_line in completion.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        line = _LIST_MARKER.sub("", line).strip()
        if not line:
            continue
        if line.lower() == NO_NUGGET_SENTINEL:
            saw_sentinel = True
            continue
        candidates.append(line)
    return candidates, saw_sentinel


class Nuggetizer:
    """Drives extraction calls through a gateway and enforces span validity."""

    def __init__(self, gateway: Gateway, strict: bool = False,
                 max_output_tokens: int = 1024):
        self.gateway = gateway
        self.strict = strict
        self.max_output_tokens = max_output_tokens

    def extract(self, text: str, resolved_utterance: str, turn_id: str,
                source: NuggetSource = NuggetSource.LLM,
                source_passage_id: str | None = None) -> ExtractionOutcome:
        """Extract span nuggets from one source text for one turn."""
        if not text:
            raise ValueError("text must be non-empty")
        if not resolved_utterance:
            raise ValueError("resolved_utterance must be non-empty")
        completion = self.gateway.complete(
            LlmRequest(
                user_message=extraction_prompt(resolved_utterance, text),
                max_output_tokens=self.max_output_tokens,
            )
        )
        return self.postprocess(completion, text, turn_id, source,
                                source_passage_id)

    def postprocess(self, completion: str, text: str, turn_id: str,
                    source: NuggetSource = NuggetSource.LLM,
                    source_passage_id: str | None = None) -> ExtractionOutcome:
        """Pure completion -> outcome step; deterministic for a fixed reply."""
        candidates, saw_sentinel = split_completion(completion)
        if source_passage_id is not None:
            id_scope = source_passage_id
        elif source is NuggetSource.RESPONSE:
            id_scope = "response"
        else:
            id_scope = "text"

        nuggets: list[Nugget] = []
        seen_texts: set[str] = set()
        non_span: list[tuple[str, str]] = []
        for line in candidates:
            span = validate_span(line, text)
            if span is None:
                if self.strict:
                    raise SpanValidationError(
                        f"turn {turn_id}: completion line is not a span of the "
                        f"source text: {line!r}"
                    )
                non_span.append((line, REPAIR_NO_MATCH))
                continue
            stage = repair_stage(line, text)
            if stage != REPAIR_EXACT:
                non_span.append((line, stage))
            start, end = span
            accepted = text[start:end]
            if accepted in seen_texts:
                continue
            seen_texts.add(accepted)
            nuggets.append(
                Nugget(
                    nugget_id=f"{turn_id}:{id_scope}:{len(nuggets)}",
                    turn_id=turn_id,
                    text=accepted,
                    source=source,
                    source_passage_id=source_passage_id,
                    char_span=(start, end),
                )
            )
        return ExtractionOutcome(
            nuggets=NuggetSet(turn_id=turn_id, nuggets=tuple(nuggets)),
            non_span_lines=tuple(non_span),
            no_nugget=saw_sentinel and not nuggets,
        )

    def extract_from_responses(
        self, responses: Mapping[str, str], turns: Mapping[str, Turn]
    ) -> dict[str, NuggetSet]:
        """Extract nuggets from one response text per turn (keyed by turn_id)."""
        outcomes: dict[str, NuggetSet] = {}
        for turn_id in sorted(responses):
            turn = turns.get(turn_id)
            if turn is None:
                raise ConeError(f"turn {turn_id} not found in topics")
            outcome = self.extract(
                text=responses[turn_id],
                resolved_utterance=turn.resolved_utterance,
                turn_id=turn_id,
                source=NuggetSource.RESPONSE,
            )
            outcomes[turn_id] = outcome.nuggets
        return outcomes

    def extract_for_pool(
        self,
        qrels: Qrels,
        passages: Mapping[str, str],
        turns: Mapping[str, Turn],
        min_grade: int = DEFAULT_MIN_GRADE,
    ) -> PoolExtraction:
        """Extract from every judged passage at or above `min_grade`.

        One extraction per (turn, relevant passage); per-turn sets merge
        passage outputs in sorted passage-id order, keeping provenance.
        Backend failures are recorded per passage and do not discard the
        rest of the turn.
        """
        jobs: list[tuple[str, str]] = []
        for turn_id in qrels.turn_ids():
            if turn_id not in turns:
                raise ConeError(f"turn {turn_id} in qrels but not in topics")
            for passage_id in sorted(qrels.relevant_for(turn_id, min_grade)):
                if passage_id not in passages:
                    raise ConeError(
                        f"no text for judged passage {passage_id} (turn {turn_id})"
                    )
                jobs.append((turn_id, passage_id))

        outcomes: dict[tuple[str, str], ExtractionOutcome | GatewayError] = {}

        def run_job(job: tuple[str, str]):
            turn_id, passage_id = job
            try:
                return self.extract(
                    text=passages[passage_id],
                    resolved_utterance=turns[turn_id].resolved_utterance,
                    turn_id=turn_id,
                    source=NuggetSource.LLM,
                    source_passage_id=passage_id,
                )
            except GatewayError as exc:
                return exc

        if jobs:
            workers = min(self.gateway.concurrency, len(jobs))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for job, result in zip(jobs, pool.map(run_job, jobs)):
                    outcomes[job] = result

        nuggets_by_turn: dict[str, NuggetSet] = {}
        failures: list[tuple[str, str, str]] = []
        for turn_id in qrels.turn_ids():
            merged: list[Nugget] = []
            for passage_id in sorted(qrels.relevant_for(turn_id, min_grade)):
                result = outcomes[(turn_id, passage_id)]
                if isinstance(result, GatewayError):
                    failures.append((turn_id, passage_id, str(result)))
                    logger.warning("extraction failed for turn %s passage %s: %s",
                                   turn_id, passage_id, result)
                    continue
                merged.extend(result.nuggets)
            nuggets_by_turn[turn_id] = NuggetSet(turn_id=turn_id,
                                                 nuggets=tuple(merged))
        return PoolExtraction(nuggets_by_turn=nuggets_by_turn,
                              failures=tuple(failures))
