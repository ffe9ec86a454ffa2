"""Three-class entailment inference over a sequence-classification model."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import torch

CLASSES = ("contradiction", "entailment", "neutral")

# tokenizers report this sentinel when no length limit was configured
_UNSET_LENGTH = 1_000_000


class ModelContractError(Exception):
    """The checkpoint does not expose the three entailment classes."""


@dataclass(frozen=True)
class Verdict:
    """One classification result in wire shape.

    `score` is the probability of the argmax class; `probabilities` holds
    all three classes and sums to 1 up to float rounding.
    """

    label: str
    score: float
    probabilities: dict[str, float]
    truncated: bool

    def as_payload(self) -> dict:
        return {
            "label": self.label,
            "score": self.score,
            "probabilities": {name: self.probabilities[name]
                              for name in CLASSES},
            "truncated": self.truncated,
        }


class EntailmentModel:
    """A loaded checkpoint plus its tokenizer; inference is serialized."""

    def __init__(self, model, tokenizer, model_id: str):
        labels = {index: str(name).lower()
                  for index, name in model.config.id2label.items()}
        if sorted(labels.values()) != sorted(CLASSES):
            raise ModelContractError(
                f"model {model_id!r} must classify exactly "
                f"{set(CLASSES)}, got {sorted(labels.values())}")
        self.model = model.eval()
        self.tokenizer = tokenizer
        self.model_id = model_id
        self.labels = labels
        limit = getattr(tokenizer, "model_max_length", None)
        if not limit or limit > _UNSET_LENGTH:
            limit = int(model.config.max_position_embeddings)
        self.max_length = int(limit)
        self._lock = threading.Lock()

    @classmethod
    def load(cls, model_id: str) -> "EntailmentModel":
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModelForSequenceClassification.from_pretrained(model_id)
        return cls(model, tokenizer, model_id)

    def classify(self, premise: str, hypothesis: str) -> Verdict:
        return self.classify_batch([(premise, hypothesis)])[0]

    def classify_batch(self, pairs: list[tuple[str, str]]) -> list[Verdict]:
        if not pairs:
            return []
        premises = [premise for premise, _ in pairs]
        hypotheses = [hypothesis for _, hypothesis in pairs]
        with self._lock, torch.no_grad():
            full = self.tokenizer(premises, hypotheses, truncation=False,
                                  padding=False)
            encoded = self.tokenizer(premises, hypotheses, truncation=True,
                                     max_length=self.max_length, padding=True,
                                     return_tensors="pt")
            probabilities = torch.softmax(
                self.model(**encoded).logits, dim=-1)
        verdicts = []
        for row, input_ids in zip(probabilities, full["input_ids"]):
            by_class = {self.labels[index]: float(row[index])
                        for index in range(len(CLASSES))}
            label = max(by_class, key=by_class.get)
            verdicts.append(Verdict(
                label=label,
                score=by_class[label],
                probabilities=by_class,
                truncated=len(input_ids) > self.max_length,
            ))
        return verdicts
