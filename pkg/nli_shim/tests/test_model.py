from __future__ import annotations

import pytest
import torch
from transformers import BertConfig, BertForSequenceClassification

from conftest import MAX_LENGTH, build_checkpoint
from nli_shim import EntailmentModel
from nli_shim.model import CLASSES, ModelContractError


def test_classify_returns_full_distribution(model):
    verdict = model.classify("snake plants tolerate drought",
                             "snake plants need watering")
    assert verdict.label in CLASSES
    assert 0.0 <= verdict.score <= 1.0
    assert set(verdict.probabilities) == set(CLASSES)
    assert abs(sum(verdict.probabilities.values()) - 1.0) <= 1e-5
    assert verdict.score == max(verdict.probabilities.values())
    assert verdict.truncated is False


def test_classify_is_deterministic(model):
    first = model.classify("snake plants tolerate drought", "plants need light")
    second = model.classify("snake plants tolerate drought", "plants need light")
    assert first == second


def test_batch_matches_singletons_on_labels(model):
    pairs = [
        ("snake plants tolerate drought", "plants need light"),
        ("low light", "watering every two weeks"),
    ]
    batched = model.classify_batch(pairs)
    assert len(batched) == 2
    for pair, verdict in zip(pairs, batched):
        alone = model.classify(*pair)
        assert verdict.label == alone.label
        assert verdict.score == pytest.approx(alone.score, abs=1e-5)


def test_empty_batch(model):
    assert model.classify_batch([]) == []


def test_truncation_flag(model):
    long_premise = " ".join(["drought"] * (MAX_LENGTH * 3))
    verdict = model.classify(long_premise, "plants need light")
    assert verdict.truncated is True
    short = model.classify("low light", "drought")
    assert short.truncated is False


def test_truncation_respects_tokenizer_limit(model):
    assert model.max_length == MAX_LENGTH


def test_load_from_directory(checkpoint):
    loaded = EntailmentModel.load(checkpoint)
    assert loaded.model_id == checkpoint
    assert sorted(loaded.labels.values()) == sorted(CLASSES)


def test_rejects_non_entailment_label_set(tmp_path):
    directory = build_checkpoint(tmp_path / "bad")
    config = BertConfig(
        vocab_size=19, hidden_size=32, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=64,
        max_position_embeddings=64, num_labels=3,
    )
    torch.manual_seed(0)
    BertForSequenceClassification(config).save_pretrained(directory)
    with pytest.raises(ModelContractError):
        EntailmentModel.load(directory)
