"""Entailment-based duplicate removal inside a nugget set.

Candidates are processed longest-first (ties broken by original position).
A candidate is dropped exactly when an already-retained nugget entails it;
dropped nuggets never eliminate anything, so under mutual entailment the
longest text survives and the result is deterministic.
"""

from __future__ import annotations

import logging
from typing import Mapping

from .corpus import Nugget, NuggetSet
from .errors import DedupBackendError, GatewayError
from .gateway import EntailmentQuery, Gateway

logger = logging.getLogger(__name__)


def canonical_order(nuggets: NuggetSet) -> list[Nugget]:
    """Text length descending, then original index ascending."""
    indexed = list(enumerate(nuggets))
    indexed.sort(key=lambda pair: (-len(pair[1].text), pair[0]))
    return [nugget for _, nugget in indexed]


def deduplicate(nuggets: NuggetSet, gateway: Gateway) -> NuggetSet:
    """Remove every nugget entailed by a retained one.

    Self-pairs are never queried. On backend failure the original set is
    attached to the raised error, unmodified.
    """
    retained: list[Nugget] = []
    try:
        for candidate in canonical_order(nuggets):
            queries = {
                keeper.nugget_id: EntailmentQuery(
                    premise=keeper.text, hypothesis=candidate.text
                )
                for keeper in retained
            }
            verdicts = gateway.entail_many(queries)
            if not any(v.is_entailment for v in verdicts.values()):
                retained.append(candidate)
    except GatewayError as exc:
        raise DedupBackendError(
            f"turn {nuggets.turn_id}: deduplication aborted: {exc}",
            original=nuggets,
        ) from exc

    retained_ids = {nugget.nugget_id for nugget in retained}
    kept_in_input_order = tuple(
        nugget for nugget in nuggets if nugget.nugget_id in retained_ids
    )
    return NuggetSet(turn_id=nuggets.turn_id, nuggets=kept_in_input_order,
                     deduplicated=True)


def deduplicate_all(
    nugget_sets: Mapping[str, NuggetSet], gateway: Gateway,
    keep_failed: bool = False,
) -> dict[str, NuggetSet]:
    """Deduplicate each turn's set.

    With keep_failed, a turn whose backend calls fail keeps its original
    (unflagged) set and the failure is logged; otherwise the error propagates.
    """
    out: dict[str, NuggetSet] = {}
    for turn_id in sorted(nugget_sets):
        try:
            out[turn_id] = deduplicate(nugget_sets[turn_id], gateway)
        except DedupBackendError as exc:
            if not keep_failed:
                raise
            logger.warning("%s (set kept as-is)", exc)
            out[turn_id] = exc.original
    return out
