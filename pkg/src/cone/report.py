"""End-to-end evaluation pipelines and their report documents.

A report is a plain JSON-serializable dict with sorted keys and no
timestamps, so re-running a pipeline against a warm cache reproduces the
output byte for byte. Every generation report carries the four result
sections: aggregate scores, per-turn scores, leaderboard rank against the
bundled participant table, and per-nugget match labels.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .analysis import SystemRanking, rank_submission
from .corpus import (
    GenerationRun,
    GoldResponse,
    NuggetSet,
    NuggetSource,
    Qrels,
    RetrievalRun,
    Turn,
)
from .errors import ConfigError, GatewayError, SpanValidationError
from .gateway import Gateway
from .matcher import MatchMatrix, Matcher, MatchMode
from .metrics import (
    DEFAULT_DEPTH,
    DEFAULT_GROUNDEDNESS_TOP_K,
    DEFAULT_REL_THRESHOLD,
    GAIN_LINEAR,
    RougeVariant,
    groundedness,
    mean_average_precision,
    ndcg,
    precision_at,
    recall_at,
    recall_ntr,
    recall_ntn,
    precision_ntn,
    rouge,
)
from .nuggetizer import Nuggetizer

logger = logging.getLogger(__name__)

GENERATION_TABLE_ASSET = "participants_generation.tsv"
RETRIEVAL_TABLE_ASSET = "participants_retrieval.tsv"

GOLD_SOURCES = ("human", "human-dedup", "llm", "llm-dedup")

_LEADERBOARD_COLUMNS = {
    (MatchMode.NTN, "human"): "recall_ntn_human",
    (MatchMode.NTN, "llm"): "recall_ntn_llm",
    (MatchMode.NTR, "human"): "recall_ntr_human",
    (MatchMode.NTR, "llm"): "recall_ntr_llm",
    (MatchMode.NTR_NLI, "human"): "recall_ntr_human",
    (MatchMode.NTR_NLI, "llm"): "recall_ntr_llm",
}


# ---------------------------------------------------------------------------
# Bundled participant tables


@dataclass(frozen=True)
class ParticipantTable:
    """Reference scores for leaderboard ranking, keyed by run tag."""

    columns: tuple[str, ...]
    rows: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    categories: Mapping[str, str] = field(default_factory=dict)


def parse_participant_table(text: str) -> ParticipantTable:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ConfigError("participant table is empty")
    header = lines[0].split("\t")
    if header[:2] != ["run_tag", "category"]:
        raise ConfigError(
            "participant table header must start with run_tag<TAB>category"
        )
    columns = tuple(header[2:])
    rows: dict[str, dict[str, float]] = {}
    categories: dict[str, str] = {}
    for line in lines[1:]:
        fields = line.split("\t")
        if len(fields) != len(header):
            raise ConfigError(f"participant row has {len(fields)} fields, "
                              f"expected {len(header)}: {line!r}")
        tag = fields[0]
        if tag in rows:
            raise ConfigError(f"duplicate participant run_tag {tag}")
        categories[tag] = fields[1]
        rows[tag] = {name: float(value)
                     for name, value in zip(columns, fields[2:])}
    return ParticipantTable(columns=columns, rows=rows, categories=categories)


def load_participant_table(asset_name: str) -> ParticipantTable:
    text = (resources.files("cone") / "assets" / asset_name
            ).read_text(encoding="utf-8")
    return parse_participant_table(text)


def leaderboard_section(table: ParticipantTable, column: str,
                        submitted_tag: str, submitted_score: float,
                        category: str = "all") -> dict:
    """Rank the submitted score against the bundled reference column."""
    if column not in table.columns:
        return {
            "available": False,
            "reason": f"no bundled reference scores for column {column!r}",
        }
    scores = {
        tag: row[column]
        for tag, row in table.rows.items()
        if category == "all" or table.categories[tag] == category
    }
    replaced = submitted_tag in scores
    scores[submitted_tag] = submitted_score
    ranking = SystemRanking.from_scores(column, scores)
    rank, total = rank_submission(submitted_tag, ranking)
    section = {
        "available": True,
        "metric": column,
        "category": category,
        "rank": rank,
        "total": total,
        "score": submitted_score,
    }
    if replaced:
        section["note"] = (
            f"run tag {submitted_tag} shadows a bundled reference row"
        )
    return section


# ---------------------------------------------------------------------------
# Config


@dataclass(frozen=True)
class EvaluationConfig:
    """File paths, backend choices, and flags for one pipeline invocation."""

    topics_path: str
    run_path: str
    gold_nuggets_paths: Mapping[str, str] = field(default_factory=dict)
    gold_source: str = "human"
    matching: MatchMode = MatchMode.NTN
    qrels_path: str | None = None
    gold_responses_path: str | None = None
    passages_path: str | None = None
    cache_path: str | None = None
    llm_spec: str | None = None
    nli_spec: str | None = None
    strict_span: bool = False
    min_grade: int = 2
    gain: str = GAIN_LINEAR
    rel_threshold: int = DEFAULT_REL_THRESHOLD
    tau_variant: str = "b"
    concurrency: int = 8
    groundedness_top_k: int = DEFAULT_GROUNDEDNESS_TOP_K
    leaderboard_category: str = "all"

    def __post_init__(self):
        if self.gold_nuggets_paths and self.gold_source not in self.gold_nuggets_paths:
            raise ConfigError(
                f"gold_source {self.gold_source!r} has no configured nugget file"
            )

    def check_files(self) -> None:
        """Fail before any backend call when a referenced file is missing."""
        paths = {"topics": self.topics_path, "run": self.run_path}
        for variant, path in self.gold_nuggets_paths.items():
            paths[f"gold nuggets ({variant})"] = path
        for label, path in (("qrels", self.qrels_path),
                            ("gold responses", self.gold_responses_path),
                            ("passages", self.passages_path)):
            if path is not None:
                paths[label] = path
        for label, path in paths.items():
            if not Path(path).is_file():
                raise ConfigError(f"{label} file not found: {path}")


def config_from_file(path: str | Path) -> dict:
    """Flat key-value config document (JSON object) -> keyword dict."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigError("config file must be a JSON object")
    return doc


# ---------------------------------------------------------------------------
# Generation-run evaluation


def _error_entry(module: str, turn_id: str | None, message: str,
                 hint: str) -> dict:
    return {"module": module, "turn_id": turn_id, "message": message,
            "hint": hint}


def evaluate_generation_run(
    run: GenerationRun,
    gold_variants: Mapping[str, Mapping[str, NuggetSet]],
    turns: Mapping[str, Turn],
    gateway: Gateway,
    matching: MatchMode = MatchMode.NTN,
    gold_source: str = "human",
    strict_span: bool = False,
    gold_responses: Mapping[str, GoldResponse] | None = None,
    passages: Mapping[str, str] | None = None,
    groundedness_top_k: int = DEFAULT_GROUNDEDNESS_TOP_K,
    leaderboard_category: str = "all",
    participant_table: ParticipantTable | None = None,
) -> dict:
    """Score one generation run against one or more gold nugget variants.

    Returns the full report dict; report["complete"] is False when any turn
    could not be evaluated.
    """
    if gold_source not in gold_variants:
        raise ConfigError(f"gold_source {gold_source!r} not among supplied "
                          f"variants {sorted(gold_variants)}")
    responses = run.responses
    errors: list[dict] = []

    # Extraction happens once per turn; every variant reuses it.
    extracted: dict[str, NuggetSet] = {}
    if matching is MatchMode.NTN:
        nuggetizer = Nuggetizer(gateway, strict=strict_span)
        for turn_id in sorted(responses):
            turn = turns.get(turn_id)
            if turn is None:
                errors.append(_error_entry(
                    "nuggetizer", turn_id, "turn missing from topics",
                    "check that the run and topics files cover the same turns",
                ))
                continue
            try:
                outcome = nuggetizer.extract(
                    text=responses[turn_id].text,
                    resolved_utterance=turn.resolved_utterance,
                    turn_id=turn_id,
                    source=NuggetSource.RESPONSE,
                )
            except (GatewayError, SpanValidationError, ValueError) as exc:
                errors.append(_error_entry(
                    "nuggetizer", turn_id, str(exc),
                    "re-run with a reachable backend or without --strict-span",
                ))
                continue
            extracted[turn_id] = outcome.nuggets

    matcher = Matcher(gateway)
    per_turn: dict[str, dict[str, dict]] = {}
    aggregates: dict[str, dict] = {}
    matrices_by_variant: dict[str, dict[str, MatchMatrix]] = {}

    for variant in sorted(gold_variants):
        gold_sets = gold_variants[variant]
        variant_turns: dict[str, dict] = {}
        matrices: dict[str, MatchMatrix] = {}
        excluded: list[dict] = []
        shared = sorted(set(responses) & set(gold_sets))
        for turn_id in shared:
            gold = gold_sets[turn_id]
            if len(gold) == 0:
                logger.warning("turn %s: empty gold set (%s), excluded",
                               turn_id, variant)
                excluded.append({"turn_id": turn_id,
                                 "reason": "empty gold set"})
                continue
            try:
                if matching is MatchMode.NTN:
                    if turn_id not in extracted:
                        excluded.append({"turn_id": turn_id,
                                         "reason": "extraction failed"})
                        continue
                    matrix = matcher.match_ntn(extracted[turn_id], gold)
                    values = {
                        "recall_ntn": recall_ntn(matrix),
                        "precision_ntn": precision_ntn(matrix),
                    }
                    flags = ([] if len(extracted[turn_id]) else
                             ["empty_extraction"])
                elif matching is MatchMode.NTR:
                    matrix = matcher.match_ntr(responses[turn_id], gold)
                    values = {"recall_ntr": recall_ntr(matrix)}
                    flags = (["parse_failures"] if matrix.parse_failures
                             else [])
                else:
                    matrix = matcher.match_ntr_nli(responses[turn_id], gold)
                    values = {"recall_ntr": recall_ntr(matrix)}
                    flags = []
            except (GatewayError, ValueError) as exc:
                errors.append(_error_entry(
                    "matcher", turn_id, f"{variant}: {exc}",
                    "turn left unevaluated; check backend availability",
                ))
                excluded.append({"turn_id": turn_id,
                                 "reason": "matcher backend failure"})
                continue
            matrices[turn_id] = matrix
            variant_turns[turn_id] = {"values": values, "flags": flags}

        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        for entry in variant_turns.values():
            for name, value in entry["values"].items():
                sums[name] = sums.get(name, 0.0) + value
                counts[name] = counts.get(name, 0) + 1
        aggregates[variant] = {
            "values": {name: sums[name] / counts[name] for name in sorted(sums)},
            "turns_evaluated": len(variant_turns),
            "turns_excluded": len(excluded),
            "excluded": excluded,
        }
        per_turn[variant] = variant_turns
        matrices_by_variant[variant] = matrices

    surface = _surface_metrics(run, gold_responses, passages, gateway,
                               groundedness_top_k, errors)

    table = participant_table if participant_table is not None \
        else load_participant_table(GENERATION_TABLE_ASSET)
    column = _LEADERBOARD_COLUMNS.get((matching, gold_source))
    recall_key = "recall_ntn" if matching is MatchMode.NTN else "recall_ntr"
    primary = aggregates[gold_source]["values"].get(recall_key)
    if column is None or primary is None:
        leaderboard = {
            "available": False,
            "reason": (
                f"no bundled reference column for matching={matching.value}, "
                f"gold_source={gold_source}"
            ),
        }
    else:
        leaderboard = leaderboard_section(
            table, column, run.run_tag, primary, leaderboard_category
        )

    report = {
        "kind": "generation-evaluation",
        "run_tag": run.run_tag,
        "matching": matching.value,
        "gold_source": gold_source,
        "aggregates": aggregates,
        "per_turn": per_turn,
        "surface": surface,
        "leaderboard": leaderboard,
        "nugget_matches": _matches_section(matrices_by_variant[gold_source]),
        "errors": errors,
        "complete": not errors,
        "notes": [
            "aggregates are unweighted means over evaluated turns",
            "groundedness is an operationalized metric: fraction of response "
            "sentences entailed by a top provenance passage",
        ],
    }
    return report


def _surface_metrics(run: GenerationRun,
                     gold_responses: Mapping[str, GoldResponse] | None,
                     passages: Mapping[str, str] | None,
                     gateway: Gateway,
                     top_k: int,
                     errors: list[dict]) -> dict:
    """Reference-overlap and groundedness scores, independent of gold nuggets."""
    responses = run.responses
    per_turn: dict[str, dict[str, float]] = {}
    flags: dict[str, list[str]] = {}

    if gold_responses is not None:
        for turn_id in sorted(set(responses) & set(gold_responses)):
            scores = {}
            for variant in RougeVariant:
                result = rouge(responses[turn_id].text,
                               gold_responses[turn_id].text, variant)
                scores[f"{variant.value}_f1"] = result.f1
                if result.empty_reference:
                    flags.setdefault(turn_id, []).append("empty_reference")
            per_turn.setdefault(turn_id, {}).update(scores)

    if passages is not None:
        for turn_id in sorted(responses):
            try:
                result = groundedness(responses[turn_id], passages, gateway,
                                      top_k)
            except GatewayError as exc:
                errors.append(_error_entry(
                    "metrics", turn_id, f"groundedness: {exc}",
                    "check the NLI backend",
                ))
                continue
            per_turn.setdefault(turn_id, {})["groundedness"] = result.value
            if result.no_provenance:
                flags.setdefault(turn_id, []).append("no_provenance")

    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for values in per_turn.values():
        for name, value in values.items():
            sums[name] = sums.get(name, 0.0) + value
            counts[name] = counts.get(name, 0) + 1
    return {
        "aggregates": {name: sums[name] / counts[name] for name in sorted(sums)},
        "per_turn": per_turn,
        "flags": {turn_id: sorted(set(turn_flags))
                  for turn_id, turn_flags in flags.items()},
    }


def _matches_section(matrices: Mapping[str, MatchMatrix]) -> dict:
    doc: dict[str, dict] = {}
    for turn_id in sorted(matrices):
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
    return doc


# ---------------------------------------------------------------------------
# Retrieval-run evaluation


def evaluate_retrieval_run(
    run: RetrievalRun,
    qrels: Qrels,
    ks: tuple[int, ...] = (5, 20),
    depth: int = DEFAULT_DEPTH,
    rel_threshold: int = DEFAULT_REL_THRESHOLD,
    gain: str = GAIN_LINEAR,
    leaderboard_metric: str = "ndcg@5",
    leaderboard_category: str = "all",
    participant_table: ParticipantTable | None = None,
) -> dict:
    """Standard ranked-retrieval report with a leaderboard section."""
    scores = []
    for k in ks:
        scores.append(ndcg(run, qrels, k, gain))
        scores.append(precision_at(run, qrels, k, rel_threshold))
        scores.append(recall_at(run, qrels, k, rel_threshold))
    if depth not in ks:
        scores.append(recall_at(run, qrels, depth, rel_threshold))
    scores.append(mean_average_precision(run, qrels, depth, rel_threshold))

    metrics_section = {}
    for score in scores:
        metrics_section[score.metric] = {
            "mean": (score.mean if score.per_turn else None),
            "per_turn": dict(sorted(score.per_turn.items())),
            "excluded_turns": sorted(score.excluded),
        }

    table = participant_table if participant_table is not None \
        else load_participant_table(RETRIEVAL_TABLE_ASSET)
    submitted = metrics_section.get(leaderboard_metric, {}).get("mean")
    if submitted is None:
        leaderboard = {
            "available": False,
            "reason": f"metric {leaderboard_metric!r} not computed for this run",
        }
    else:
        leaderboard = leaderboard_section(
            table, leaderboard_metric, run.run_tag, submitted,
            leaderboard_category,
        )

    return {
        "kind": "retrieval-evaluation",
        "run_tag": run.run_tag,
        "gain": gain,
        "rel_threshold": rel_threshold,
        "depth": depth,
        "metrics": metrics_section,
        "leaderboard": leaderboard,
        "complete": True,
        "notes": ["turns without relevant passages are excluded from "
                  "ndcg, recall, and map means"],
    }


# ---------------------------------------------------------------------------
# Rendering


def dump_report(report: dict) -> str:
    return json.dumps(report, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def render_tsv(report: dict) -> str:
    """Aligned TSV view of a report's aggregate scores."""
    lines: list[str] = []
    kind = report.get("kind")
    if kind == "generation-evaluation":
        lines.append("section\tname\tmetric\tvalue")
        for variant in sorted(report.get("aggregates", {})):
            for name, value in sorted(
                    report["aggregates"][variant]["values"].items()):
                lines.append(f"aggregate\t{variant}\t{name}\t{value:.6f}")
        for name, value in sorted(
                report.get("surface", {}).get("aggregates", {}).items()):
            lines.append(f"surface\t-\t{name}\t{value:.6f}")
    elif kind == "retrieval-evaluation":
        lines.append("section\tname\tmetric\tvalue")
        for metric in sorted(report.get("metrics", {})):
            mean = report["metrics"][metric]["mean"]
            rendered = "undefined" if mean is None else f"{mean:.6f}"
            lines.append(f"aggregate\t-\t{metric}\t{rendered}")
    else:
        raise ConfigError(f"cannot render report of kind {kind!r}")
    leaderboard = report.get("leaderboard", {})
    if leaderboard.get("available"):
        lines.append(
            f"leaderboard\t{report.get('run_tag', '-')}\trank\t"
            f"{leaderboard['rank']:g} of {leaderboard['total']}"
        )
    return "\n".join(lines) + "\n"
