"""Collection artifacts and their parsers/serializers.

Covers topics, PTKB statements, nugget files, TREC-style retrieval runs,
generation runs, qrels, gold responses, and external score tables. All values
are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import CorpusFormatError

_WS_RUN = re.compile(r"\s+")


def normalize_ws(text: str) -> str:
    """Collapse whitespace runs to single spaces and trim the ends."""
    return _WS_RUN.sub(" ", text).strip()


def word_count(text: str) -> int:
    return len(text.split())


class NuggetSource(str, Enum):
    HUMAN = "human"
    LLM = "llm"
    RESPONSE = "response"


class RunCategory(str, Enum):
    AUTOMATIC = "automatic"
    MANUAL = "manual"
    GENERATION_ONLY = "generation_only"


@dataclass(frozen=True)
class PtkbStatement:
    """One persona statement with per-turn binary relevance labels.

    Organizer and assessor label sources are kept separately under the
    ``relevance_labels`` keys "organizer" and "assessor".
    """

    statement_id: str
    text: str
    relevance_labels: Mapping[str, Mapping[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        for source, labels in self.relevance_labels.items():
            for turn_id, label in labels.items():
                if label not in (0, 1):
                    raise CorpusFormatError(
                        f"PTKB statement {self.statement_id}: label for turn "
                        f"{turn_id} ({source}) must be 0 or 1, got {label!r}"
                    )

    def relevant_to(self, turn_id: str) -> bool:
        """True when any label source marks this statement relevant for the turn."""
        return any(labels.get(turn_id) == 1 for labels in self.relevance_labels.values())


@dataclass(frozen=True)
class Turn:
    """One user-system exchange."""

    turn_id: str
    utterance: str
    resolved_utterance: str
    canonical_response: str = ""
    response_provenance: tuple[str, ...] = ()
    ptkb_provenance: tuple[str, ...] = ()
    assessed: bool = False
    personal: bool = False


@dataclass(frozen=True)
class Topic:
    topic_id: str
    title: str
    ptkb: tuple[PtkbStatement, ...] = ()
    turns: tuple[Turn, ...] = ()

    def __post_init__(self):
        if not self.topic_id:
            raise CorpusFormatError("topic_id must be non-empty")
        _check_turn_order(self.topic_id, self.turns)
        for turn in self.turns:
            if turn.assessed and not turn.resolved_utterance:
                raise CorpusFormatError(
                    f"turn {turn.turn_id}: resolved_utterance required for assessed turns"
                )


def _check_turn_order(topic_id: str, turns: tuple[Turn, ...]) -> None:
    """Turn ids are opaque; the index/gap check applies only when every id
    follows "<topic_id>-<int>"."""
    indices = []
    for turn in turns:
        prefix = f"{topic_id}-"
        if not turn.turn_id.startswith(prefix):
            return
        suffix = turn.turn_id[len(prefix):]
        if not suffix.isdigit():
            return
        indices.append(int(suffix))
    if indices and indices != list(range(indices[0], indices[0] + len(indices))):
        raise CorpusFormatError(
            f"topic {topic_id}: turns out of order or gapped: {indices}"
        )


@dataclass(frozen=True)
class Nugget:
    """An atomic piece of information: a contiguous span of some source text."""

    nugget_id: str
    turn_id: str
    text: str
    source: NuggetSource = NuggetSource.HUMAN
    source_passage_id: str | None = None
    char_span: tuple[int, int] | None = None

    def __post_init__(self):
        if not self.text:
            raise CorpusFormatError(f"nugget {self.nugget_id}: text must be non-empty")


@dataclass(frozen=True)
class NuggetSet:
    """Ordered nuggets for one turn."""

    turn_id: str
    nuggets: tuple[Nugget, ...] = ()
    deduplicated: bool = False

    def __post_init__(self):
        seen = set()
        for nugget in self.nuggets:
            if nugget.turn_id != self.turn_id:
                raise CorpusFormatError(
                    f"nugget {nugget.nugget_id} belongs to turn {nugget.turn_id}, "
                    f"not {self.turn_id}"
                )
            if nugget.nugget_id in seen:
                raise CorpusFormatError(
                    f"duplicate nugget_id {nugget.nugget_id} in turn {self.turn_id}"
                )
            seen.add(nugget.nugget_id)

    def __len__(self) -> int:
        return len(self.nuggets)

    def __iter__(self):
        return iter(self.nuggets)


@dataclass(frozen=True)
class Response:
    """A generated answer for one turn."""

    text: str
    passage_provenance: tuple[str, ...] = ()

    @property
    def length_words(self) -> int:
        return word_count(self.text)


@dataclass(frozen=True)
class RankedResponse:
    rank: int
    response: Response


@dataclass(frozen=True)
class GenerationRun:
    """All responses one system submitted; rank-1 per turn is what gets evaluated."""

    run_tag: str
    turn_entries: Mapping[str, tuple[RankedResponse, ...]] = field(default_factory=dict)

    @property
    def responses(self) -> dict[str, Response]:
        """Rank-1 response per turn."""
        out = {}
        for turn_id, entries in self.turn_entries.items():
            for entry in entries:
                if entry.rank == 1:
                    out[turn_id] = entry.response
                    break
        return out

    def turn_ids(self) -> list[str]:
        return list(self.turn_entries)


@dataclass(frozen=True)
class RetrievalRun:
    """Ranked passages per turn. Rankings are (passage_id, score), best first."""

    run_tag: str
    rankings: Mapping[str, tuple[tuple[str, float], ...]] = field(default_factory=dict)
    category: RunCategory = RunCategory.AUTOMATIC

    def ranked_ids(self, turn_id: str, depth: int | None = None) -> list[str]:
        ranking = self.rankings.get(turn_id, ())
        ids = [passage_id for passage_id, _ in ranking]
        return ids if depth is None else ids[:depth]

    def turn_ids(self) -> list[str]:
        return list(self.rankings)


@dataclass(frozen=True)
class Qrels:
    """Graded relevance judgments: (turn_id, passage_id) -> grade in 0..4."""

    judgments: Mapping[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self):
        for (turn_id, passage_id), grade in self.judgments.items():
            if grade not in (0, 1, 2, 3, 4):
                raise CorpusFormatError(
                    f"grade for ({turn_id}, {passage_id}) out of range 0-4: {grade}"
                )

    def turn_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for turn_id, _ in self.judgments:
            seen.setdefault(turn_id)
        return list(seen)

    def grades_for(self, turn_id: str) -> dict[str, int]:
        return {
            passage_id: grade
            for (tid, passage_id), grade in self.judgments.items()
            if tid == turn_id
        }

    def relevant_for(self, turn_id: str, threshold: int = 1) -> set[str]:
        return {
            passage_id
            for passage_id, grade in self.grades_for(turn_id).items()
            if grade >= threshold
        }


@dataclass(frozen=True)
class GoldResponse:
    turn_id: str
    text: str
    supporting_passage_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.text:
            raise CorpusFormatError(f"gold response for {self.turn_id}: empty text")


@dataclass(frozen=True)
class ExternalScoreTable:
    """A run_tag -> score column ingested for correlation analyses."""

    metric_name: str
    scores: Mapping[str, float] = field(default_factory=dict)

    def validate_against(self, run_tags: Iterable[str]) -> None:
        known = set(run_tags)
        unknown = sorted(tag for tag in self.scores if tag not in known)
        if unknown:
            raise CorpusFormatError(
                f"score table {self.metric_name}: unknown run tags {unknown}"
            )


# ---------------------------------------------------------------------------
# TREC run format


def parse_trec_run(
    stream: Iterable[str] | str,
    strict: bool = False,
    category: RunCategory = RunCategory.AUTOMATIC,
) -> RetrievalRun:
    """Parse classic 6-field TREC run lines: qid Q0 docid rank score tag.

    Rankings come out sorted by score descending, submitted rank ascending,
    then docid, so the result is invariant to input line order.
    """
    if isinstance(stream, str):
        stream = stream.splitlines()

    run_tag: str | None = None
    per_turn: dict[str, list[tuple[str, int, float]]] = {}
    seen_pairs: set[tuple[str, str]] = set()
    saw_line = False

    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        saw_line = True
        fields = line.split()
        if len(fields) != 6:
            raise CorpusFormatError(
                f"expected 6 whitespace-separated fields, got {len(fields)}", lineno
            )
        qid, _q0, docid, rank_s, score_s, tag = fields
        try:
            rank = int(rank_s)
            score = float(score_s)
        except ValueError:
            raise CorpusFormatError(
                f"rank/score not numeric: {rank_s!r} {score_s!r}", lineno
            ) from None
        if run_tag is None:
            run_tag = tag
        elif tag != run_tag:
            raise CorpusFormatError(
                f"inconsistent run tag {tag!r} (expected {run_tag!r})", lineno
            )
        if (qid, docid) in seen_pairs:
            raise CorpusFormatError(f"duplicate (qid, docid): ({qid}, {docid})", lineno)
        seen_pairs.add((qid, docid))
        per_turn.setdefault(qid, []).append((docid, rank, score))

    if not saw_line:
        if strict:
            raise CorpusFormatError("empty run")
        return RetrievalRun(run_tag="", rankings={}, category=category)

    rankings = {}
    for qid, entries in per_turn.items():
        entries.sort(key=lambda e: (-e[2], e[1], e[0]))
        rankings[qid] = tuple((docid, score) for docid, _rank, score in entries)
    assert run_tag is not None
    return RetrievalRun(run_tag=run_tag, rankings=rankings, category=category)


def serialize_trec_run(run: RetrievalRun) -> str:
    lines = []
    for turn_id in run.rankings:
        for rank, (passage_id, score) in enumerate(run.rankings[turn_id], start=1):
            lines.append(f"{turn_id} Q0 {passage_id} {rank} {score:g} {run.run_tag}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Qrels format


def parse_qrels(stream: Iterable[str] | str) -> Qrels:
    """Parse "qid 0 docid grade" lines, grades 0-4.

    Exact duplicate lines are idempotent; conflicting grades for the same
    (qid, docid) are an error.
    """
    if isinstance(stream, str):
        stream = stream.splitlines()

    judgments: dict[tuple[str, str], int] = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 4:
            raise CorpusFormatError(
                f"expected 4 fields (qid 0 docid grade), got {len(fields)}", lineno
            )
        qid, _iteration, docid, grade_s = fields
        try:
            grade = int(grade_s)
        except ValueError:
            raise CorpusFormatError(f"grade not an integer: {grade_s!r}", lineno) from None
        if grade not in (0, 1, 2, 3, 4):
            raise CorpusFormatError(f"grade out of range 0-4: {grade}", lineno)
        key = (qid, docid)
        if key in judgments and judgments[key] != grade:
            raise CorpusFormatError(
                f"conflicting grades for ({qid}, {docid}): "
                f"{judgments[key]} then {grade}",
                lineno,
            )
        judgments[key] = grade
    return Qrels(judgments=judgments)


def serialize_qrels(qrels: Qrels) -> str:
    lines = [
        f"{turn_id} 0 {passage_id} {grade}"
        for (turn_id, passage_id), grade in qrels.judgments.items()
    ]
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Generation-run JSON


def parse_generation_run(document: str | Mapping) -> GenerationRun:
    """Parse a generation submission: {"run_tag": ..., "turns": [{...}]}.

    Each turn entry carries {turn_id, responses: [{rank, text,
    passage_provenance}]}. The rank-1 response is the evaluated one; other
    ranks are preserved.
    """
    doc = json.loads(document) if isinstance(document, str) else document
    if not isinstance(doc, Mapping):
        raise CorpusFormatError("generation run must be a JSON object")
    run_tag = doc.get("run_tag")
    if not run_tag or not isinstance(run_tag, str):
        raise CorpusFormatError("generation run missing run_tag")
    turns = doc.get("turns")
    if not isinstance(turns, list):
        raise CorpusFormatError("generation run missing 'turns' array")

    turn_entries: dict[str, tuple[RankedResponse, ...]] = {}
    for entry in turns:
        turn_id = entry.get("turn_id")
        if not turn_id:
            raise CorpusFormatError("per-turn entry missing turn_id")
        if turn_id in turn_entries:
            raise CorpusFormatError(f"duplicate turn_id {turn_id}")
        responses = entry.get("responses") or []
        ranked = []
        for response in responses:
            ranked.append(
                RankedResponse(
                    rank=int(response["rank"]),
                    response=Response(
                        text=response.get("text", ""),
                        passage_provenance=tuple(
                            response.get("passage_provenance") or ()
                        ),
                    ),
                )
            )
        if not any(r.rank == 1 for r in ranked):
            raise CorpusFormatError(f"turn {turn_id}: no rank-1 response")
        ranked.sort(key=lambda r: r.rank)
        turn_entries[turn_id] = tuple(ranked)
    return GenerationRun(run_tag=run_tag, turn_entries=turn_entries)


def serialize_generation_run(run: GenerationRun) -> str:
    doc = {
        "run_tag": run.run_tag,
        "turns": [
            {
                "turn_id": turn_id,
                "responses": [
                    {
                        "rank": entry.rank,
                        "text": entry.response.text,
                        "passage_provenance": list(entry.response.passage_provenance),
                    }
                    for entry in entries
                ],
            }
            for turn_id, entries in run.turn_entries.items()
        ],
    }
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Nugget files


def parse_nugget_file(
    document: str | Mapping,
    source: NuggetSource = NuggetSource.HUMAN,
    topics: Iterable[Topic] | None = None,
    strict: bool = False,
) -> dict[str, NuggetSet]:
    """Parse a nugget file: JSON object keyed by turn_id.

    Entries are arrays of {nugget_id?, text, source_passage_id?}; missing ids
    are synthesized as "<turn_id>:<index>". The source label comes from the
    caller's context, not the file.
    """
    doc = json.loads(document) if isinstance(document, str) else document
    if not isinstance(doc, Mapping):
        raise CorpusFormatError("nugget file must be a JSON object keyed by turn_id")

    known_turns: set[str] | None = None
    if topics is not None:
        known_turns = {turn.turn_id for topic in topics for turn in topic.turns}

    out: dict[str, NuggetSet] = {}
    for turn_id, entries in doc.items():
        if strict and known_turns is not None and turn_id not in known_turns:
            raise CorpusFormatError(f"unknown turn_id {turn_id}")
        nuggets = []
        for index, entry in enumerate(entries):
            text = entry.get("text", "")
            if not text:
                raise CorpusFormatError(f"turn {turn_id}: nugget {index} has empty text")
            nuggets.append(
                Nugget(
                    nugget_id=entry.get("nugget_id") or f"{turn_id}:{index}",
                    turn_id=turn_id,
                    text=text,
                    source=source,
                    source_passage_id=entry.get("source_passage_id"),
                )
            )
        out[turn_id] = NuggetSet(turn_id=turn_id, nuggets=tuple(nuggets))
    return out


def serialize_nugget_file(nugget_sets: Mapping[str, NuggetSet]) -> str:
    doc = {}
    for turn_id, nugget_set in nugget_sets.items():
        entries = []
        for nugget in nugget_set:
            entry: dict = {"nugget_id": nugget.nugget_id, "text": nugget.text}
            if nugget.source_passage_id is not None:
                entry["source_passage_id"] = nugget.source_passage_id
            entries.append(entry)
        doc[turn_id] = entries
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Topics


def parse_topics(document: str | list) -> list[Topic]:
    """Parse the topics file: a JSON array of topic objects (shape in README)."""
    doc = json.loads(document) if isinstance(document, str) else document
    if not isinstance(doc, list):
        raise CorpusFormatError("topics file must be a JSON array")

    topics = []
    seen_topic_ids: set[str] = set()
    seen_turn_ids: set[str] = set()
    for raw_topic in doc:
        topic_id = raw_topic.get("topic_id", "")
        if topic_id in seen_topic_ids:
            raise CorpusFormatError(f"duplicate topic_id {topic_id}")
        seen_topic_ids.add(topic_id)

        statements = tuple(
            PtkbStatement(
                statement_id=raw["statement_id"],
                text=raw["text"],
                relevance_labels={
                    source: dict(labels)
                    for source, labels in (raw.get("relevance_labels") or {}).items()
                },
            )
            for raw in raw_topic.get("ptkb", [])
        )

        turns = []
        for raw_turn in raw_topic.get("turns", []):
            turn_id = raw_turn["turn_id"]
            if turn_id in seen_turn_ids:
                raise CorpusFormatError(f"duplicate turn_id {turn_id}")
            seen_turn_ids.add(turn_id)
            personal = any(s.relevant_to(turn_id) for s in statements)
            turns.append(
                Turn(
                    turn_id=turn_id,
                    utterance=raw_turn.get("utterance", ""),
                    resolved_utterance=raw_turn.get("resolved_utterance", ""),
                    canonical_response=raw_turn.get("canonical_response", ""),
                    response_provenance=tuple(raw_turn.get("response_provenance") or ()),
                    ptkb_provenance=tuple(raw_turn.get("ptkb_provenance") or ()),
                    assessed=bool(raw_turn.get("assessed", False)),
                    personal=personal,
                )
            )
        topics.append(
            Topic(topic_id=topic_id, title=raw_topic.get("title", ""),
                  ptkb=statements, turns=tuple(turns))
        )
    return topics


def serialize_topics(topics: Iterable[Topic]) -> str:
    doc = []
    for topic in topics:
        doc.append(
            {
                "topic_id": topic.topic_id,
                "title": topic.title,
                "ptkb": [
                    {
                        "statement_id": s.statement_id,
                        "text": s.text,
                        "relevance_labels": {
                            source: dict(labels)
                            for source, labels in s.relevance_labels.items()
                        },
                    }
                    for s in topic.ptkb
                ],
                "turns": [
                    {
                        "turn_id": t.turn_id,
                        "utterance": t.utterance,
                        "resolved_utterance": t.resolved_utterance,
                        "canonical_response": t.canonical_response,
                        "response_provenance": list(t.response_provenance),
                        "ptkb_provenance": list(t.ptkb_provenance),
                        "assessed": t.assessed,
                    }
                    for t in topic.turns
                ],
            }
        )
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True)


def turns_by_id(topics: Iterable[Topic]) -> dict[str, Turn]:
    return {turn.turn_id: turn for topic in topics for turn in topic.turns}


# ---------------------------------------------------------------------------
# Gold responses


def parse_gold_responses(document: str | list) -> dict[str, GoldResponse]:
    """Parse a JSON array of {turn_id, text, supporting_passage_ids}."""
    doc = json.loads(document) if isinstance(document, str) else document
    if not isinstance(doc, list):
        raise CorpusFormatError("gold responses must be a JSON array")
    out = {}
    for entry in doc:
        turn_id = entry.get("turn_id")
        if not turn_id:
            raise CorpusFormatError("gold response entry missing turn_id")
        if turn_id in out:
            raise CorpusFormatError(f"duplicate gold response for turn {turn_id}")
        out[turn_id] = GoldResponse(
            turn_id=turn_id,
            text=entry.get("text", ""),
            supporting_passage_ids=tuple(entry.get("supporting_passage_ids") or ()),
        )
    return out


def serialize_gold_responses(responses: Mapping[str, GoldResponse]) -> str:
    doc = [
        {
            "turn_id": r.turn_id,
            "text": r.text,
            "supporting_passage_ids": list(r.supporting_passage_ids),
        }
        for r in responses.values()
    ]
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# External score tables (TSV)


def parse_score_table(stream: Iterable[str] | str) -> ExternalScoreTable:
    """Parse "run_tag<TAB>score" rows under a header naming the metric."""
    if isinstance(stream, str):
        stream = stream.splitlines()
    lines = [line.rstrip("\n") for line in stream]
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise CorpusFormatError("empty score table")
    header = lines[0].split("\t")
    if len(header) != 2 or header[0] != "run_tag":
        raise CorpusFormatError(
            "score table header must be 'run_tag<TAB><metric name>'", 1
        )
    metric_name = header[1]
    scores: dict[str, float] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 2:
            raise CorpusFormatError("expected 'run_tag<TAB>score'", lineno)
        tag, score_s = fields
        if tag in scores:
            raise CorpusFormatError(f"duplicate run_tag {tag}", lineno)
        try:
            scores[tag] = float(score_s)
        except ValueError:
            raise CorpusFormatError(f"score not numeric: {score_s!r}", lineno) from None
    return ExternalScoreTable(metric_name=metric_name, scores=scores)


def serialize_score_table(table: ExternalScoreTable) -> str:
    lines = [f"run_tag\t{table.metric_name}"]
    lines.extend(f"{tag}\t{score:g}" for tag, score in table.scores.items())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Passage text lookups


def parse_passage_lookup(document: str | Mapping) -> dict[str, str]:
    """Parse the optional passage-text lookup: a JSON object id -> text."""
    doc = json.loads(document) if isinstance(document, str) else document
    if not isinstance(doc, Mapping):
        raise CorpusFormatError("passage lookup must be a JSON object")
    return {str(passage_id): str(text) for passage_id, text in doc.items()}
