from __future__ import annotations

import json
from pathlib import Path

import pytest

from cone.corpus import (
    parse_generation_run,
    parse_nugget_file,
    parse_topics,
    turns_by_id,
    NuggetSource,
)
from cone.gateway import CannedLlmBackend, Gateway, RelationNli

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def fixture_json(name: str):
    return json.loads(fixture_text(name))


def make_fixture_gateway(cache=None, concurrency: int = 4) -> Gateway:
    llm = CannedLlmBackend.from_file(FIXTURES / "canned_llm.json")
    pairs = {tuple(pair) for pair in fixture_json("nli_pairs.json")}
    return Gateway(llm=llm, nli=RelationNli(pairs), cache=cache,
                   concurrency=concurrency)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def gateway() -> Gateway:
    return make_fixture_gateway()


@pytest.fixture(scope="session")
def topics():
    return parse_topics(fixture_text("topics.json"))


@pytest.fixture(scope="session")
def turns(topics):
    return turns_by_id(topics)


@pytest.fixture(scope="session")
def gen_run():
    return parse_generation_run(fixture_text("gen_run.json"))


@pytest.fixture(scope="session")
def gold_human():
    return parse_nugget_file(fixture_text("gold_nuggets_human.json"),
                             source=NuggetSource.HUMAN)


@pytest.fixture(scope="session")
def gold_llm():
    return parse_nugget_file(fixture_text("gold_nuggets_llm.json"),
                             source=NuggetSource.LLM)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in VERDICTS:
        terminalreporter.write_line(line)
