"""Brute-force reference implementations used to freeze expected values.

Every function here recomputes a quantity straight from its definition with
the dumbest correct algorithm available (exhaustive enumeration where it is
feasible) and shares no code with the package. Tests compare package output
against these, so a bug would have to appear twice, in two different shapes,
to go unnoticed.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Callable, Mapping, Sequence

# ---------------------------------------------------------------------------
# Nugget coverage


def coverage(entails: Callable[[str, str], bool],
             extracted: Sequence[str],
             gold: Sequence[str]) -> tuple[set[int], set[int]]:
    """Indices of covered gold texts and of extracted texts that cover any."""
    covered = set()
    covering = set()
    for j, gold_text in enumerate(gold):
        for i, extracted_text in enumerate(extracted):
            if entails(extracted_text, gold_text):
                covered.add(j)
                covering.add(i)
    return covered, covering


def recall_ntn(entails, extracted: Sequence[str], gold: Sequence[str]) -> float:
    covered, _ = coverage(entails, extracted, gold)
    return len(covered) / len(gold)


def precision_ntn(entails, extracted: Sequence[str],
                  gold: Sequence[str]) -> float:
    if not extracted:
        return 0.0
    _, covering = coverage(entails, extracted, gold)
    return len(covering) / len(extracted)


def recall_ntr(captures: Callable[[str], bool], gold: Sequence[str]) -> float:
    return sum(1 for text in gold if captures(text)) / len(gold)


# ---------------------------------------------------------------------------
# Ranked retrieval


def dcg(grades_in_rank_order: Sequence[int], exponential: bool = False) -> float:
    total = 0.0
    for position, grade in enumerate(grades_in_rank_order, start=1):
        value = float(2 ** grade - 1) if exponential else float(grade)
        total += value / math.log2(position + 1)
    return total


def ndcg(ranked_ids: Sequence[str], judged: Mapping[str, int], k: int,
         exponential: bool = False) -> float | None:
    """nDCG@k; ideal DCG found by trying every ordering of the judged docs.

    None when no ordering scores above zero (the turn is undefined).
    """
    assert len(judged) <= 7, "exhaustive oracle needs few judged docs"
    best = 0.0
    for ordering in itertools.permutations(judged):
        grades = [judged[doc] for doc in ordering[:k]]
        best = max(best, dcg(grades, exponential))
    if best == 0.0:
        return None
    grades = [judged.get(doc, 0) for doc in ranked_ids[:k]]
    return dcg(grades, exponential) / best


def precision_at(ranked_ids: Sequence[str], judged: Mapping[str, int],
                 k: int, threshold: int = 1) -> float:
    hits = [doc for doc in ranked_ids[:k] if judged.get(doc, 0) >= threshold]
    return len(hits) / k


def recall_at(ranked_ids: Sequence[str], judged: Mapping[str, int],
              k: int, threshold: int = 1) -> float | None:
    relevant = {doc for doc, grade in judged.items() if grade >= threshold}
    if not relevant:
        return None
    hits = [doc for doc in ranked_ids[:k] if doc in relevant]
    return len(hits) / len(relevant)


def average_precision(ranked_ids: Sequence[str], judged: Mapping[str, int],
                      depth: int = 1000,
                      threshold: int = 1) -> float | None:
    relevant = {doc for doc, grade in judged.items() if grade >= threshold}
    if not relevant:
        return None
    total = 0.0
    seen_relevant = 0
    for rank, doc in enumerate(ranked_ids[:depth], start=1):
        if doc in relevant:
            seen_relevant += 1
            total += seen_relevant / rank
    return total / len(relevant)


# ---------------------------------------------------------------------------
# Text overlap


def lcs(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length by enumerating every subsequence."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    assert len(short) <= 14, "exhaustive oracle needs a short sequence"

    def is_subsequence(needle: Sequence, haystack: Sequence) -> bool:
        position = 0
        for item in haystack:
            if position < len(needle) and item == needle[position]:
                position += 1
        return position == len(needle)

    best = 0
    for mask in range(2 ** len(short)):
        candidate = [short[i] for i in range(len(short)) if mask >> i & 1]
        if len(candidate) > best and is_subsequence(candidate, long_):
            best = len(candidate)
    return best


def ngram_overlap(candidate: Sequence[str], reference: Sequence[str],
                  n: int) -> int:
    """Clipped n-gram match count."""
    def grams(tokens: Sequence[str]) -> list[tuple[str, ...]]:
        return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]

    cand = grams(candidate)
    ref = grams(reference)
    total = 0
    for gram in set(cand) | set(ref):
        total += min(cand.count(gram), ref.count(gram))
    return total


def f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# Rank correlation and agreement


def kendall_tau(a: Sequence[float], b: Sequence[float],
                variant: str = "b") -> float:
    concordant = discordant = open_a = open_b = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        sign_a = (a[i] > a[j]) - (a[i] < a[j])
        sign_b = (b[i] > b[j]) - (b[i] < b[j])
        if sign_a and sign_b:
            if sign_a == sign_b:
                concordant += 1
            else:
                discordant += 1
        # pairs untied in a / in b, counted for the denominators
        if sign_a:
            open_a += 1
        if sign_b:
            open_b += 1
    n0 = len(a) * (len(a) - 1) // 2
    if variant == "a":
        return (concordant - discordant) / n0
    if open_a == 0 or open_b == 0:
        raise ZeroDivisionError("tau-b undefined")
    return (concordant - discordant) / math.sqrt(open_a * open_b)


def average_ranks(scores: Sequence[float]) -> list[Fraction]:
    """Rank = strictly-better count + (tied count + 1) / 2, best rank 1."""
    ranks = []
    for value in scores:
        better = sum(1 for other in scores if other > value)
        tied = sum(1 for other in scores if other == value)
        ranks.append(better + Fraction(tied + 1, 2))
    return ranks


def spearman_rho(a: Sequence[float], b: Sequence[float]) -> float:
    ranks_a = average_ranks(a)
    ranks_b = average_ranks(b)
    n = len(a)
    mean_a = sum(ranks_a, Fraction(0)) / n
    mean_b = sum(ranks_b, Fraction(0)) / n
    covariance = sum(((ra - mean_a) * (rb - mean_b)
                      for ra, rb in zip(ranks_a, ranks_b)), Fraction(0))
    variance_a = sum(((ra - mean_a) ** 2 for ra in ranks_a), Fraction(0))
    variance_b = sum(((rb - mean_b) ** 2 for rb in ranks_b), Fraction(0))
    if variance_a == 0 or variance_b == 0:
        raise ZeroDivisionError("rho undefined")
    return float(covariance) / math.sqrt(float(variance_a) * float(variance_b))


def cohen_kappa(human: Sequence[int], model: Sequence[int]) -> tuple[float, float]:
    n = len(human)
    observed = Fraction(sum(1 for h, m in zip(human, model) if h == m), n)
    expected = Fraction(0)
    for label in (0, 1):
        count_h = sum(1 for h in human if h == label)
        count_m = sum(1 for m in model if m == label)
        expected += Fraction(count_h, n) * Fraction(count_m, n)
    if expected == 1:
        if observed == 1:
            return 1.0, 1.0
        raise ZeroDivisionError("kappa undefined")
    kappa = (observed - expected) / (1 - expected)
    return float(observed), float(kappa)


# ---------------------------------------------------------------------------
# Pooling


def pool_pairs(runs: Mapping[str, Mapping[str, Sequence[str]]],
               k_guaranteed: int, k_max: int,
               accept: Callable[[str, str], bool]) -> set[tuple[str, str]]:
    """(turn, passage) pairs a pool must contain, from the definition."""
    guaranteed = {
        (turn_id, passage_id)
        for rankings in runs.values()
        for turn_id, ranked in rankings.items()
        for passage_id in ranked[:k_guaranteed]
    }
    candidates = {
        (turn_id, passage_id)
        for rankings in runs.values()
        for turn_id, ranked in rankings.items()
        for passage_id in ranked[:k_max]
    } - guaranteed
    return guaranteed | {pair for pair in candidates if accept(*pair)}
