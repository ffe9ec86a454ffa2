"""System-level comparisons: metric-induced rankings, rank correlations,
and labeler agreement.

Correlation and agreement arithmetic runs on exact rationals (ranks are
halves, counts are integers) with a single float conversion at the end, so
results are reproducible bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import ConeError, UndefinedMetricError

TAU_A = "a"
TAU_B = "b"


class LabelSource(str, Enum):
    HUMAN = "human"
    MODEL = "model"


@dataclass(frozen=True)
class SystemRanking:
    """Runs ordered by one metric, best first."""

    metric_name: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        scores = [score for _, score in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("ranking scores must be non-increasing")
        tags = [tag for tag, _ in self.entries]
        if len(set(tags)) != len(tags):
            raise ValueError("duplicate run_tag in ranking")

    @classmethod
    def from_scores(cls, metric_name: str,
                    scores: Mapping[str, float]) -> "SystemRanking":
        ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
        return cls(metric_name=metric_name, entries=tuple(ordered))

    def run_tags(self) -> list[str]:
        return [tag for tag, _ in self.entries]

    def scores(self) -> dict[str, float]:
        return dict(self.entries)

    def ranks(self) -> dict[str, Fraction]:
        """1-based ranks; tied scores share the average of their positions."""
        out: dict[str, Fraction] = {}
        position = 0
        index = 0
        while index < len(self.entries):
            group = [self.entries[index]]
            while (index + len(group) < len(self.entries)
                   and self.entries[index + len(group)][1] == group[0][1]):
                group.append(self.entries[index + len(group)])
            first = position + 1
            last = position + len(group)
            average = Fraction(first + last, 2)
            for tag, _ in group:
                out[tag] = average
            position = last
            index += len(group)
        return out


def rank_submission(target: str, ranking: SystemRanking) -> tuple[float, int]:
    """1-based (possibly .5 on ties) rank of `target`, with the field size."""
    ranks = ranking.ranks()
    if target not in ranks:
        raise ConeError(f"run {target!r} not present in the "
                        f"{ranking.metric_name} ranking")
    return float(ranks[target]), len(ranking.entries)


def _aligned_scores(
    ranking_a: SystemRanking, ranking_b: SystemRanking
) -> tuple[list[float], list[float]]:
    tags_a = set(ranking_a.run_tags())
    tags_b = set(ranking_b.run_tags())
    if tags_a != tags_b:
        missing = sorted(tags_a ^ tags_b)
        raise ConeError(f"rankings cover different runs; mismatched: {missing}")
    if len(tags_a) < 2:
        raise UndefinedMetricError("correlation needs at least 2 runs")
    order = sorted(tags_a)
    scores_a = ranking_a.scores()
    scores_b = ranking_b.scores()
    return [scores_a[tag] for tag in order], [scores_b[tag] for tag in order]


def kendall_tau(ranking_a: SystemRanking, ranking_b: SystemRanking,
                variant: str = TAU_B) -> float:
    """Kendall correlation between two rankings over the same runs.

    Variant "b" (default) applies the tie correction
    (C - D) / sqrt((n0 - n1)(n0 - n2)); variant "a" divides by n0.
    """
    if variant not in (TAU_A, TAU_B):
        raise ValueError(f"unknown tau variant {variant!r}")
    a, b = _aligned_scores(ranking_a, ranking_b)
    n = len(a)
    concordant = 0
    discordant = 0
    ties_a = 0
    ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = a[i] - a[j]
            db = b[i] - b[j]
            if da == 0 and db == 0:
                ties_a += 1
                ties_b += 1
            elif da == 0:
                ties_a += 1
            elif db == 0:
                ties_b += 1
            elif (da > 0) == (db > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    if variant == TAU_A:
        return (concordant - discordant) / n0
    denominator_sq = (n0 - ties_a) * (n0 - ties_b)
    if denominator_sq == 0:
        raise UndefinedMetricError(
            "tau-b undefined: a ranking has all scores tied"
        )
    return (concordant - discordant) / math.sqrt(denominator_sq)


def average_ranks(scores: Sequence[float]) -> list[Fraction]:
    """1-based average-tie ranks of a score vector (higher score = rank 1)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranks: list[Fraction] = [Fraction(0)] * len(scores)
    position = 0
    while position < len(order):
        end = position
        while (end + 1 < len(order)
               and scores[order[end + 1]] == scores[order[position]]):
            end += 1
        average = Fraction(position + 1 + end + 1, 2)
        for index in order[position:end + 1]:
            ranks[index] = average
        position = end + 1
    return ranks


def spearman_rho(ranking_a: SystemRanking, ranking_b: SystemRanking) -> float:
    """Pearson correlation of the two rankings' average-tie ranks."""
    a, b = _aligned_scores(ranking_a, ranking_b)
    ranks_a = average_ranks(a)
    ranks_b = average_ranks(b)
    n = len(ranks_a)
    mean_a = sum(ranks_a, Fraction(0)) / n
    mean_b = sum(ranks_b, Fraction(0)) / n
    dev_a = [rank - mean_a for rank in ranks_a]
    dev_b = [rank - mean_b for rank in ranks_b]
    covariance = sum((da * db for da, db in zip(dev_a, dev_b)), Fraction(0))
    variance_a = sum((da * da for da in dev_a), Fraction(0))
    variance_b = sum((db * db for db in dev_b), Fraction(0))
    if variance_a == 0 or variance_b == 0:
        raise UndefinedMetricError(
            "spearman undefined: a ranking has zero rank variance"
        )
    return float(covariance) / math.sqrt(float(variance_a) * float(variance_b))


# ---------------------------------------------------------------------------
# Labeler agreement


@dataclass(frozen=True)
class LabelVector:
    """Binary labels over (response_id, nugget_id) items from one source."""

    keys: tuple[tuple[str, str], ...]
    labels: tuple[int, ...]
    source: LabelSource

    def __post_init__(self):
        if len(self.keys) != len(self.labels):
            raise ValueError("keys and labels must have equal length")
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("duplicate label keys")
        for label in self.labels:
            if label not in (0, 1):
                raise ValueError(f"labels must be binary, got {label!r}")

    def __len__(self) -> int:
        return len(self.labels)


def agreement(human: LabelVector, model: LabelVector) -> tuple[float, float]:
    """(accuracy, Cohen's kappa) between two aligned binary label vectors."""
    if human.keys != model.keys:
        raise ConeError("label vectors cover different (response, nugget) items")
    n = len(human)
    if n < 1:
        raise UndefinedMetricError("agreement needs at least one item")
    equal = sum(1 for h, m in zip(human.labels, model.labels) if h == m)
    ones_h = sum(human.labels)
    ones_m = sum(model.labels)
    observed = Fraction(equal, n)
    expected = Fraction(ones_h * ones_m + (n - ones_h) * (n - ones_m), n * n)
    if expected == 1:
        if observed == 1:
            return 1.0, 1.0
        raise UndefinedMetricError("kappa undefined: expected agreement is 1")
    kappa = (observed - expected) / (1 - expected)
    return float(observed), float(kappa)


def majority_vote(
    labels_by_item: Mapping[tuple[str, str], Sequence[int]],
    source: LabelSource = LabelSource.HUMAN,
) -> LabelVector:
    """Per-item majority over the annotators' binary labels."""
    keys: list[tuple[str, str]] = []
    labels: list[int] = []
    for key in labels_by_item:
        votes = list(labels_by_item[key])
        ones = sum(1 for vote in votes if vote == 1)
        zeros = len(votes) - ones
        if ones == zeros:
            raise ConeError(f"no majority for item {key}: {votes}")
        keys.append(key)
        labels.append(1 if ones > zeros else 0)
    return LabelVector(keys=tuple(keys), labels=tuple(labels), source=source)
