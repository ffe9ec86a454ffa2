import random

import pytest

from cone.corpus import NuggetSource, Qrels, Turn, normalize_ws
from cone.errors import BackendReplyError, ConeError, SpanValidationError
from cone.gateway import CannedLlmBackend, Gateway
from cone.nuggetizer import (
    ExtractionOutcome,
    Nuggetizer,
    repair_stage,
    split_completion,
    validate_span,
)
from cone.prompts import extraction_prompt

SOURCE = "Snake plants tolerate drought. They need little water."

QUERY = "What houseplant needs little care?"


def canned_nuggetizer(completion: str, strict: bool = False,
                      text: str = SOURCE, query: str = QUERY) -> Nuggetizer:
    backend = CannedLlmBackend({extraction_prompt(query, text): completion})
    return Nuggetizer(Gateway(llm=backend), strict=strict)


# ---------------------------------------------------------------------------
# Span validation


def test_validate_span_exact():
    assert validate_span("cat sat", "the cat sat") == (4, 11)


def test_validate_span_case_and_whitespace_repair():
    assert validate_span("CAT  sat", "the cat sat") == (4, 11)


def test_validate_span_absent():
    assert validate_span("dog", "the cat sat") is None


def test_validate_span_first_occurrence_wins():
    assert validate_span("ab", "xx ab yy ab") == (3, 5)


def test_validate_span_whitespace_stage_preserves_case():
    # stage 2 matches case-sensitively; stage 3 relaxes it
    assert validate_span("cat\tsat", "the cat sat") == (4, 11)


def test_validate_span_empty_candidate():
    assert validate_span("", "text") == (0, 0)  # exact find of "" is position 0


def test_repair_stage_classification():
    assert repair_stage("cat sat", "the cat sat") == "exact"
    assert repair_stage("cat  sat", "the cat sat") == "whitespace"
    assert repair_stage("CAT sat", "the cat sat") == "case-insensitive"
    assert repair_stage("dog", "the cat sat") == "no-match"


# ---------------------------------------------------------------------------
# Completion splitting


def test_split_completion_strips_list_markers():
    completion = "1. first line\n- second line\n• third line\n(2) fourth line"
    candidates, saw_sentinel = split_completion(completion)
    assert candidates == ["first line", "second line", "third line", "fourth line"]
    assert saw_sentinel is False


def test_split_completion_skips_blank_lines():
    candidates, _ = split_completion("a\n\n   \nb")
    assert candidates == ["a", "b"]


def test_split_completion_sentinel_case_insensitive():
    for text in ("No nugget", "no nugget", "NO NUGGET", "  No Nugget  "):
        candidates, saw_sentinel = split_completion(text)
        assert candidates == []
        assert saw_sentinel is True


def test_split_completion_sentinel_alongside_lines():
    candidates, saw_sentinel = split_completion("No nugget\nreal line")
    assert candidates == ["real line"]
    assert saw_sentinel is True


# ---------------------------------------------------------------------------
# Extraction outcomes


def test_extract_sentinel_yields_empty_set():
    outcome = canned_nuggetizer("No nugget").extract(SOURCE, QUERY, "t1")
    assert len(outcome.nuggets) == 0
    assert outcome.no_nugget is True


def test_extract_exact_span():
    outcome = canned_nuggetizer("Snake plants tolerate drought").extract(
        SOURCE, QUERY, "t1")
    assert len(outcome.nuggets) == 1
    nugget = outcome.nuggets.nuggets[0]
    assert nugget.char_span == (0, 29)
    assert nugget.text == "Snake plants tolerate drought"
    assert outcome.no_nugget is False
    assert outcome.non_span_lines == ()


def test_extract_non_span_line_lenient():
    outcome = canned_nuggetizer("snake plants are drought tolerant").extract(
        SOURCE, QUERY, "t1")
    assert len(outcome.nuggets) == 0
    assert outcome.non_span_lines == \
        (("snake plants are drought tolerant", "no-match"),)
    assert outcome.no_nugget is False  # no sentinel seen


def test_extract_non_span_line_strict_raises():
    nuggetizer = canned_nuggetizer("snake plants are drought tolerant",
                                   strict=True)
    with pytest.raises(SpanValidationError):
        nuggetizer.extract(SOURCE, QUERY, "t1")


def test_extract_repaired_line_keeps_source_slice():
    outcome = canned_nuggetizer("snake  plants tolerate drought").extract(
        SOURCE, QUERY, "t1")
    nugget = outcome.nuggets.nuggets[0]
    assert nugget.text == "Snake plants tolerate drought"  # source casing
    assert outcome.non_span_lines == \
        (("snake  plants tolerate drought", "case-insensitive"),)


def test_extract_collapses_duplicate_texts():
    completion = ("Snake plants tolerate drought\n"
                  "snake  plants tolerate drought\n"
                  "Snake plants tolerate drought")
    outcome = canned_nuggetizer(completion).extract(SOURCE, QUERY, "t1")
    assert len(outcome.nuggets) == 1


def test_extract_sentinel_with_real_nugget_is_not_no_nugget():
    completion = "No nugget\nSnake plants tolerate drought"
    outcome = canned_nuggetizer(completion).extract(SOURCE, QUERY, "t1")
    assert len(outcome.nuggets) == 1
    assert outcome.no_nugget is False


def test_extract_nugget_id_scopes():
    outcome = canned_nuggetizer("Snake plants tolerate drought").extract(
        SOURCE, QUERY, "t1")
    assert outcome.nuggets.nuggets[0].nugget_id == "t1:text:0"

    nuggetizer = canned_nuggetizer("Snake plants tolerate drought")
    response_outcome = nuggetizer.extract(SOURCE, QUERY, "t1",
                                          source=NuggetSource.RESPONSE)
    assert response_outcome.nuggets.nuggets[0].nugget_id == "t1:response:0"

    passage_outcome = nuggetizer.postprocess(
        "Snake plants tolerate drought", SOURCE, "t1",
        source=NuggetSource.LLM, source_passage_id="p9")
    assert passage_outcome.nuggets.nuggets[0].nugget_id == "t1:p9:0"
    assert passage_outcome.nuggets.nuggets[0].source_passage_id == "p9"


def test_extract_preconditions():
    nuggetizer = canned_nuggetizer("x")
    with pytest.raises(ValueError):
        nuggetizer.extract("", QUERY, "t1")
    with pytest.raises(ValueError):
        nuggetizer.extract(SOURCE, "", "t1")


def test_outcome_invariant_no_nugget_requires_empty():
    from cone.corpus import Nugget, NuggetSet
    nuggets = NuggetSet(turn_id="t1", nuggets=(
        Nugget(nugget_id="n", turn_id="t1", text="x"),))
    with pytest.raises(ValueError):
        ExtractionOutcome(nuggets=nuggets, no_nugget=True)


# ---------------------------------------------------------------------------
# Fuzzed span invariant

WORDS = ("snake", "plant", "water", "soil", "light", "shade", "leaf",
         "root", "dry", "wet", "grow", "slow")


def mangle(rng: random.Random, span_text: str) -> str:
    """Reformat a true span the way a sloppy model might."""
    choice = rng.randrange(3)
    if choice == 0:
        return span_text
    if choice == 1:
        return span_text.upper()
    return span_text.replace(" ", "  ")


def test_fuzzed_extractions_recoverable_from_char_span():
    rng = random.Random(20240817)
    nuggetizer = Nuggetizer(Gateway())  # postprocess only; no backend calls
    for _ in range(100):
        words = [rng.choice(WORDS) for _ in range(rng.randint(6, 30))]
        source = " ".join(words)
        lines = []
        true_lines = []
        for _ in range(rng.randint(1, 5)):
            start = rng.randrange(len(words))
            end = rng.randint(start + 1, min(len(words), start + 6))
            span_text = " ".join(words[start:end])
            line = mangle(rng, span_text)
            lines.append(line)
            true_lines.append(line)
        if rng.random() < 0.5:
            lines.append("this phrase never appears verbatim")
        if rng.random() < 0.2:
            lines.append("No nugget")
        completion = "\n".join(lines)

        outcome = nuggetizer.postprocess(completion, source, "t1")
        for nugget in outcome.nuggets:
            start, end = nugget.char_span
            assert nugget.text == source[start:end]
            assert normalize_ws(nugget.text) == nugget.text
        accepted = {normalize_ws(n.text).lower() for n in outcome.nuggets}
        for line in true_lines:
            assert normalize_ws(line).lower() in accepted
        assert ("this phrase never appears verbatim" in
                [line for line, _ in outcome.non_span_lines]) == \
            ("this phrase never appears verbatim" in lines)


def test_sentinel_always_yields_empty_set():
    nuggetizer = Nuggetizer(Gateway())
    for completion in ("No nugget", "no nugget\n", "NO NUGGET\n\n"):
        outcome = nuggetizer.postprocess(completion, SOURCE, "t1")
        assert len(outcome.nuggets) == 0
        assert outcome.no_nugget is True


# ---------------------------------------------------------------------------
# Batch paths


def test_extract_from_responses(gateway, turns):
    nuggetizer = Nuggetizer(gateway)
    responses = {
        "1-1": "A snake plant suits dim rooms. It survives with little attention.",
        "1-2": "Water a snake plant every two weeks. Let the soil dry out first.",
    }
    sets = nuggetizer.extract_from_responses(responses, turns)
    assert [n.text for n in sets["1-1"]] == \
        ["A snake plant suits dim rooms", "It survives with little attention"]
    assert [n.text for n in sets["1-2"]] == ["Water a snake plant every two weeks"]
    assert all(n.source is NuggetSource.RESPONSE for n in sets["1-1"])


def test_extract_from_responses_unknown_turn(gateway, turns):
    nuggetizer = Nuggetizer(gateway)
    with pytest.raises(ConeError):
        nuggetizer.extract_from_responses({"9-9": "text"}, turns)


def pool_fixture():
    turns = {
        "t1": Turn(turn_id="t1", utterance="u", resolved_utterance=QUERY),
    }
    qrels = Qrels(judgments={
        ("t1", "pA"): 3,
        ("t1", "pB"): 2,
        ("t1", "pC"): 1,
    })
    passages = {
        "pA": "Snake plants tolerate drought. They need little water.",
        "pB": "Pothos grows in shade.",
        "pC": "Ferns love humidity.",
    }
    replies = {
        extraction_prompt(QUERY, passages["pA"]): "Snake plants tolerate drought",
        extraction_prompt(QUERY, passages["pB"]): "Pothos grows in shade",
        extraction_prompt(QUERY, passages["pC"]): "Ferns love humidity",
    }
    return turns, qrels, passages, replies


def test_extract_for_pool_merges_and_filters():
    turns, qrels, passages, replies = pool_fixture()
    gateway = Gateway(llm=CannedLlmBackend(replies))
    result = Nuggetizer(gateway).extract_for_pool(qrels, passages, turns,
                                                  min_grade=2)
    nuggets = result.nuggets_by_turn["t1"]
    # grade-1 pC is below min_grade; pA and pB merge in passage-id order
    assert [n.text for n in nuggets] == \
        ["Snake plants tolerate drought", "Pothos grows in shade"]
    assert [n.source_passage_id for n in nuggets] == ["pA", "pB"]
    assert result.failures == ()


def test_extract_for_pool_partial_failure():
    turns, qrels, passages, replies = pool_fixture()
    del replies[next(iter(replies))]  # pA's prompt now has no canned reply
    gateway = Gateway(llm=CannedLlmBackend(replies))
    result = Nuggetizer(gateway).extract_for_pool(qrels, passages, turns,
                                                  min_grade=2)
    nuggets = result.nuggets_by_turn["t1"]
    assert [n.source_passage_id for n in nuggets] == ["pB"]
    assert len(result.failures) == 1
    assert result.failures[0][:2] == ("t1", "pA")


def test_extract_for_pool_missing_passage_text():
    turns, qrels, passages, replies = pool_fixture()
    del passages["pB"]
    gateway = Gateway(llm=CannedLlmBackend(replies))
    with pytest.raises(ConeError):
        Nuggetizer(gateway).extract_for_pool(qrels, passages, turns, min_grade=2)


def test_extract_for_pool_unknown_turn():
    _, qrels, passages, replies = pool_fixture()
    gateway = Gateway(llm=CannedLlmBackend(replies))
    with pytest.raises(ConeError):
        Nuggetizer(gateway).extract_for_pool(qrels, passages, {}, min_grade=2)
