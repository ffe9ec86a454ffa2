import logging
import random

import pytest

from cone.corpus import Qrels, RetrievalRun, Turn
from cone.errors import BackendReplyError, ConeError
from cone.gateway import FunctionLlmBackend, Gateway
from cone.pooling import (
    LlmRelevanceJudge,
    Pool,
    PoolEntry,
    accept_all,
    build_pool,
    grade_pool,
    judge_filter,
    mapping_judge,
    parse_pool,
    reject_all,
    relevance_grading_template,
    serialize_pool,
)

import oracles


def make_run(tag: str, rankings: dict[str, list[str]]) -> RetrievalRun:
    return RetrievalRun(
        run_tag=tag,
        rankings={
            turn_id: tuple(
                (passage_id, float(len(ids) - i))
                for i, passage_id in enumerate(ids)
            )
            for turn_id, ids in rankings.items()
        },
    )


def pool_as_pairs(pool: Pool) -> set[tuple[str, str]]:
    return set(pool.pairs())


def random_runs(rng: random.Random, n_runs: int = 3):
    turns = [f"t{i}" for i in range(rng.randint(1, 3))]
    passages = [f"p{i}" for i in range(40)]
    runs = []
    for r in range(n_runs):
        rankings = {}
        for turn_id in turns:
            depth = rng.randint(3, 35)
            rankings[turn_id] = rng.sample(passages, depth)
        runs.append(make_run(f"run{r}", rankings))
    return runs


# ---------------------------------------------------------------------------
# build_pool


def test_reject_all_keeps_exactly_top_k_guaranteed():
    run_a = make_run("a", {"t1": [f"p{i}" for i in range(10)]})
    run_b = make_run("b", {"t1": ["q1", "q2", "q3", "q4", "q5", "q6"]})
    pool = build_pool([run_a, run_b], filter_predicate=reject_all)
    assert pool.passage_ids("t1") == \
        {"p0", "p1", "p2", "p3", "p4", "q1", "q2", "q3", "q4", "q5"}
    assert all(entry.tier == "guaranteed" for entry in pool.per_turn["t1"])


def test_accept_all_keeps_top_k_max():
    ids = [f"p{i}" for i in range(40)]
    run = make_run("a", {"t1": ids})
    pool = build_pool([run], filter_predicate=accept_all)
    assert pool.passage_ids("t1") == set(ids[:30])


def test_k_guaranteed_must_not_exceed_k_max():
    with pytest.raises(ValueError):
        build_pool([], k_guaranteed=10, k_max=5)


def test_custom_tier_depths():
    ids = [f"p{i}" for i in range(10)]
    run = make_run("a", {"t1": ids})
    pool = build_pool([run], k_guaranteed=2, k_max=4,
                      filter_predicate=reject_all)
    assert pool.passage_ids("t1") == {"p0", "p1"}
    pool = build_pool([run], k_guaranteed=2, k_max=4,
                      filter_predicate=accept_all)
    assert pool.passage_ids("t1") == {"p0", "p1", "p2", "p3"}


def test_mixed_filter_matches_exhaustive_construction():
    rng = random.Random(20240817)
    for _ in range(20):
        runs = random_runs(rng)
        relevant = {
            (turn_id, f"p{i}")
            for turn_id in ("t0", "t1", "t2")
            for i in rng.sample(range(40), 12)
        }

        def predicate(turn_id, passage_id):
            return (turn_id, passage_id) in relevant

        pool = build_pool(runs, filter_predicate=predicate)
        expected = oracles.pool_pairs(
            {run.run_tag: {t: run.ranked_ids(t) for t in run.turn_ids()}
             for run in runs},
            5, 30, predicate,
        )
        assert pool_as_pairs(pool) == expected


def test_filter_called_once_per_unique_pair_and_never_on_guaranteed():
    shared = [f"s{i}" for i in range(8)]
    run_a = make_run("a", {"t1": shared})
    run_b = make_run("b", {"t1": list(reversed(shared))})
    calls = []

    def predicate(turn_id, passage_id):
        calls.append((turn_id, passage_id))
        return True

    pool = build_pool([run_a, run_b], filter_predicate=predicate)
    assert len(calls) == len(set(calls))
    guaranteed = {"s0", "s1", "s2", "s3", "s4", "s5", "s6", "s7"}
    # every passage is top-5 in one of the two runs except s5..s7 vs s0..s2:
    # s0..s4 top-5 of a; s7..s3 top-5 of b => all eight guaranteed
    assert pool.passage_ids("t1") == guaranteed
    assert calls == []


def test_filter_exception_excludes_pair_with_warning(caplog):
    ids = [f"p{i}" for i in range(8)]
    run = make_run("a", {"t1": ids})

    def predicate(turn_id, passage_id):
        if passage_id == "p6":
            raise RuntimeError("judge unreachable")
        return True

    with caplog.at_level(logging.WARNING):
        pool = build_pool([run], filter_predicate=predicate)
    assert "p6" not in pool.passage_ids("t1")
    assert pool.passage_ids("t1") == set(ids) - {"p6"}
    assert any("p6" in record.getMessage() for record in caplog.records)


def test_tiers_and_contributors():
    run_a = make_run("a", {"t1": ["g1", "g2", "g3", "g4", "g5", "f1", "f2"]})
    run_b = make_run("b", {"t1": ["g9", "x", "x2", "x3", "x4", "g1", "f1"]})
    pool = build_pool([run_a, run_b], filter_predicate=lambda t, p: p == "f1")
    entries = {entry.passage_id: entry for entry in pool.per_turn["t1"]}
    assert "f2" not in entries
    assert entries["f1"].tier == "filtered"
    assert entries["f1"].contributors == (("a", 6), ("b", 7))
    # top-5 in run a wins even though run b ranks it 6th
    assert entries["g1"].tier == "guaranteed"
    assert entries["g1"].contributors == (("a", 1), ("b", 6))


def test_pool_monotone_in_runs():
    rng = random.Random(5)
    for _ in range(10):
        runs = random_runs(rng, n_runs=3)
        smaller = build_pool(runs[:2], filter_predicate=accept_all)
        larger = build_pool(runs, filter_predicate=accept_all)
        for turn_id in smaller.per_turn:
            assert smaller.passage_ids(turn_id) <= larger.passage_ids(turn_id)


def test_any_filter_pool_contains_reject_all_pool():
    rng = random.Random(6)
    runs = random_runs(rng)
    floor = build_pool(runs, filter_predicate=reject_all)
    gated = build_pool(
        runs, filter_predicate=lambda t, p: hash((t, p)) % 2 == 0)
    for turn_id in floor.per_turn:
        assert floor.passage_ids(turn_id) <= gated.passage_ids(turn_id)


def test_pool_size_and_entry_validation():
    run = make_run("a", {"t1": ["p1", "p2"], "t2": ["p3"]})
    pool = build_pool([run], filter_predicate=reject_all)
    assert pool.size() == 3
    with pytest.raises(ValueError):
        PoolEntry(passage_id="p", tier="bonus")


# ---------------------------------------------------------------------------
# Grading


def test_grade_pool_restricts_mapping_to_pool():
    run = make_run("a", {"t1": ["p1", "p2"]})
    pool = build_pool([run], filter_predicate=reject_all)
    judge = mapping_judge({("t1", "p1"): 3, ("t1", "p9"): 4})
    grading = grade_pool(pool, judge)
    assert grading.qrels.judgments == {("t1", "p1"): 3, ("t1", "p2"): 0}
    assert grading.distribution == {0: 1, 1: 0, 2: 0, 3: 1, 4: 0}


def test_grade_pool_clamps_out_of_range(caplog):
    run = make_run("a", {"t1": ["p1", "p2"]})
    pool = build_pool([run], filter_predicate=reject_all)
    judge = mapping_judge({("t1", "p1"): 7, ("t1", "p2"): -2})
    with caplog.at_level(logging.WARNING):
        grading = grade_pool(pool, judge)
    assert grading.qrels.judgments == {("t1", "p1"): 4, ("t1", "p2"): 0}
    assert grading.distribution[4] == 1
    assert sum("clamped" in record.message for record in caplog.records) == 2


def test_grade_pool_returns_qrels_type():
    run = make_run("a", {"t1": ["p1"]})
    pool = build_pool([run], filter_predicate=reject_all)
    grading = grade_pool(pool, mapping_judge({}, default=2))
    assert isinstance(grading.qrels, Qrels)
    assert grading.qrels.grades_for("t1") == {"p1": 2}


# ---------------------------------------------------------------------------
# LLM judge


def make_turn(turn_id: str, resolved: str) -> Turn:
    return Turn(turn_id=turn_id, utterance=resolved,
                resolved_utterance=resolved)


def judge_gateway(reply_fn) -> Gateway:
    return Gateway(llm=FunctionLlmBackend(reply_fn))


def test_llm_judge_prompt_and_first_integer_parse():
    seen = []

    def reply(request):
        seen.append(request.user_message)
        return "Grade: 3 (highly meets)"

    judge = LlmRelevanceJudge(
        judge_gateway(reply),
        turns={"t1": make_turn("t1", "dim light plants")},
        passages={"p1": "Snake plants tolerate shade."},
    )
    assert judge("t1", "p1") == 3
    expected = (relevance_grading_template()
                .replace("{query}", "dim light plants")
                .replace("{passage}", "Snake plants tolerate shade."))
    assert seen == [expected]


def test_llm_judge_plain_digit_reply():
    judge = LlmRelevanceJudge(
        judge_gateway(lambda request: "2"),
        turns={"t1": make_turn("t1", "q")},
        passages={"p1": "text"},
    )
    assert judge("t1", "p1") == 2


def test_llm_judge_no_integer_reply():
    judge = LlmRelevanceJudge(
        judge_gateway(lambda request: "definitely relevant"),
        turns={"t1": make_turn("t1", "q")},
        passages={"p1": "text"},
    )
    with pytest.raises(BackendReplyError):
        judge("t1", "p1")


def test_llm_judge_missing_turn_or_passage():
    judge = LlmRelevanceJudge(
        judge_gateway(lambda request: "1"),
        turns={"t1": make_turn("t1", "q")},
        passages={"p1": "text"},
    )
    with pytest.raises(ConeError):
        judge("t9", "p1")
    with pytest.raises(ConeError):
        judge("t1", "p9")


def test_judge_filter_threshold():
    judge = mapping_judge({("t1", "p1"): 2, ("t1", "p2"): 1})
    predicate = judge_filter(judge, min_grade=2)
    assert predicate("t1", "p1") is True
    assert predicate("t1", "p2") is False


# ---------------------------------------------------------------------------
# Serialization


def test_pool_round_trip():
    run_a = make_run("a", {"t1": [f"p{i}" for i in range(8)],
                           "t2": ["q1", "q2"]})
    run_b = make_run("b", {"t1": ["z1", "p7"]})
    pool = build_pool([run_a, run_b],
                      filter_predicate=lambda t, p: p in ("p5", "p6"))
    restored = parse_pool(serialize_pool(pool))
    assert restored == pool


def test_parse_pool_requires_turns_key():
    with pytest.raises(ConeError):
        parse_pool("{}")
