"""Coverage decisions between system output and gold nuggets.

Two procedures: nugget-to-nugget compares extracted nuggets against gold
nuggets with pairwise entailment (premise = extracted, hypothesis = gold,
in that order; the relation is not symmetric). Nugget-to-response asks,
per gold nugget, whether the full response captures it, either with a
yes/no LLM judgment or with entailment from the whole response.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from .corpus import NuggetSet, Response
from .errors import BackendReplyError
from .gateway import EntailmentQuery, Gateway, LlmRequest
from .prompts import coverage_prompt

PARSE_FAILURE_ZERO = "zero"
PARSE_FAILURE_ABORT = "abort"


class MatchMode(str, Enum):
    NTN = "ntn"
    NTR = "ntr"
    NTR_NLI = "ntr-nli"


@dataclass(frozen=True)
class MatchMatrix:
    """Binary coverage decisions for one turn.

    In NTN mode `decisions` is a matrix: rows follow `extracted`, columns
    follow `gold`. In the response modes `extracted` is None and `decisions`
    is a vector over `gold`.
    """

    mode: MatchMode
    turn_id: str
    gold: NuggetSet
    extracted: NuggetSet | None
    decisions: tuple
    parse_failures: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.mode is MatchMode.NTN:
            if self.extracted is None:
                raise ValueError("NTN matrix requires the extracted nugget set")
            if len(self.decisions) != len(self.extracted):
                raise ValueError("decision rows must match extracted nuggets")
            for row in self.decisions:
                if len(row) != len(self.gold):
                    raise ValueError("decision columns must match gold nuggets")
        else:
            if self.extracted is not None:
                raise ValueError("response-mode matrix has no extracted set")
            if len(self.decisions) != len(self.gold):
                raise ValueError("decision vector must match gold nuggets")

    @property
    def covered_gold(self) -> frozenset[str]:
        """Gold nugget ids with at least one positive decision."""
        if self.mode is MatchMode.NTN:
            covered = set()
            for j, nugget in enumerate(self.gold):
                if any(row[j] for row in self.decisions):
                    covered.add(nugget.nugget_id)
            return frozenset(covered)
        return frozenset(
            nugget.nugget_id
            for nugget, decision in zip(self.gold, self.decisions)
            if decision
        )

    @property
    def covering_extracted(self) -> frozenset[str] | None:
        """Extracted nugget ids that matched some gold nugget; None outside NTN."""
        if self.mode is not MatchMode.NTN:
            return None
        assert self.extracted is not None
        return frozenset(
            nugget.nugget_id
            for nugget, row in zip(self.extracted, self.decisions)
            if any(row)
        )


def parse_yes_no(reply: str) -> bool | None:
    """First token of the reply, case-insensitive, punctuation-stripped.

    "yes" -> True, "no" -> False, anything else -> None (parse failure).
    """
    tokens = reply.split()
    if not tokens:
        return None
    token = tokens[0].strip(string.punctuation).lower()
    if token == "yes":
        return True
    if token == "no":
        return False
    return None


class Matcher:
    """Runs the coverage procedures through a gateway."""

    def __init__(self, gateway: Gateway,
                 on_parse_failure: str = PARSE_FAILURE_ZERO,
                 max_output_tokens: int = 8):
        if on_parse_failure not in (PARSE_FAILURE_ZERO, PARSE_FAILURE_ABORT):
            raise ValueError(f"unknown parse-failure policy {on_parse_failure!r}")
        self.gateway = gateway
        self.on_parse_failure = on_parse_failure
        self.max_output_tokens = max_output_tokens

    def match_ntn(self, extracted: NuggetSet, gold: NuggetSet) -> MatchMatrix:
        """Pairwise entailment matrix over extracted x gold."""
        if extracted.turn_id != gold.turn_id:
            raise ValueError(
                f"nugget sets belong to different turns: "
                f"{extracted.turn_id} vs {gold.turn_id}"
            )
        queries = {
            (i, j): EntailmentQuery(premise=n_p.text, hypothesis=n_g.text)
            for i, n_p in enumerate(extracted)
            for j, n_g in enumerate(gold)
        }
        verdicts = self.gateway.entail_many(queries)
        decisions = tuple(
            tuple(verdicts[(i, j)].is_entailment for j in range(len(gold)))
            for i in range(len(extracted))
        )
        return MatchMatrix(mode=MatchMode.NTN, turn_id=gold.turn_id,
                           gold=gold, extracted=extracted, decisions=decisions)

    def match_ntr(self, response: Response, gold: NuggetSet) -> MatchMatrix:
        """One yes/no judgment per gold nugget against the whole response."""
        if not response.text:
            raise ValueError("response text must be non-empty")
        requests = {
            j: LlmRequest(
                user_message=coverage_prompt(n_g.text, response.text),
                max_output_tokens=self.max_output_tokens,
            )
            for j, n_g in enumerate(gold)
        }
        replies = self.gateway.complete_many(requests)
        decisions: list[bool] = []
        failures: list[tuple[str, str]] = []
        for j, n_g in enumerate(gold):
            verdict = parse_yes_no(replies[j])
            if verdict is None:
                if self.on_parse_failure == PARSE_FAILURE_ABORT:
                    raise BackendReplyError(
                        f"turn {gold.turn_id}: unparseable yes/no reply for "
                        f"nugget {n_g.nugget_id}: {replies[j]!r}"
                    )
                failures.append((n_g.nugget_id, replies[j]))
                verdict = False
            decisions.append(verdict)
        return MatchMatrix(mode=MatchMode.NTR, turn_id=gold.turn_id,
                           gold=gold, extracted=None, decisions=tuple(decisions),
                           parse_failures=tuple(failures))

    def match_ntr_nli(self, response: Response, gold: NuggetSet) -> MatchMatrix:
        """Entailment from the whole response to each gold nugget."""
        if not response.text:
            raise ValueError("response text must be non-empty")
        queries = {
            j: EntailmentQuery(premise=response.text, hypothesis=n_g.text)
            for j, n_g in enumerate(gold)
        }
        verdicts = self.gateway.entail_many(queries)
        decisions = tuple(verdicts[j].is_entailment for j in range(len(gold)))
        return MatchMatrix(mode=MatchMode.NTR_NLI, turn_id=gold.turn_id,
                           gold=gold, extracted=None, decisions=decisions)


def serialize_matches(matrices: Mapping[str, MatchMatrix]) -> str:
    """Per-turn nugget lists with matched/covered flags, as JSON."""
    doc: dict[str, dict] = {}
    for turn_id in matrices:
        matrix = matrices[turn_id]
        entry: dict = {
            "mode": matrix.mode.value,
            "gold": [
                {
                    "nugget_id": nugget.nugget_id,
                    "text": nugget.text,
                    "covered": nugget.nugget_id in matrix.covered_gold,
                }
                for nugget in matrix.gold
            ],
        }
        if matrix.mode is MatchMode.NTN:
            assert matrix.extracted is not None
            covering = matrix.covering_extracted or frozenset()
            entry["extracted"] = [
                {
                    "nugget_id": nugget.nugget_id,
                    "text": nugget.text,
                    "matched": nugget.nugget_id in covering,
                }
                for nugget in matrix.extracted
            ]
        if matrix.parse_failures:
            entry["parse_failures"] = [
                {"nugget_id": nugget_id, "reply": reply}
                for nugget_id, reply in matrix.parse_failures
            ]
        doc[turn_id] = entry
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True)
