from __future__ import annotations

import pytest
import torch
from fastapi.testclient import TestClient
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Whitespace
from tokenizers.processors import TemplateProcessing
from transformers import (
    BertConfig,
    BertForSequenceClassification,
    PreTrainedTokenizerFast,
)

from nli_shim import EntailmentModel, create_app

WORDS = ("snake", "plants", "tolerate", "drought", "low", "light", "need",
         "watering", "every", "two", "weeks", "the", "a", "and", "not")

MAX_LENGTH = 24


def build_checkpoint(directory) -> str:
    """Write a tiny self-contained three-class checkpoint to disk."""
    vocab = {"[PAD]": 0, "[UNK]": 1, "[CLS]": 2, "[SEP]": 3}
    for word in WORDS:
        vocab[word] = len(vocab)
    tokenizer = Tokenizer(WordLevel(vocab, unk_token="[UNK]"))
    tokenizer.pre_tokenizer = Whitespace()
    tokenizer.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B:1 [SEP]:1",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        pad_token="[PAD]", unk_token="[UNK]",
        cls_token="[CLS]", sep_token="[SEP]",
        model_max_length=MAX_LENGTH,
    )
    fast.save_pretrained(directory)

    config = BertConfig(
        vocab_size=len(vocab), hidden_size=32, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=64,
        max_position_embeddings=64, num_labels=3,
        id2label={0: "CONTRADICTION", 1: "NEUTRAL", 2: "ENTAILMENT"},
        label2id={"CONTRADICTION": 0, "NEUTRAL": 1, "ENTAILMENT": 2},
    )
    torch.manual_seed(20240817)
    BertForSequenceClassification(config).save_pretrained(directory)
    return str(directory)


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory) -> str:
    return build_checkpoint(tmp_path_factory.mktemp("tiny-nli"))


@pytest.fixture(scope="session")
def model(checkpoint) -> EntailmentModel:
    return EntailmentModel.load(checkpoint)


@pytest.fixture(scope="session")
def client(model) -> TestClient:
    return TestClient(create_app(model))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_server import VERDICTS
    except ImportError:
        return
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in VERDICTS:
        terminalreporter.write_line(line)
