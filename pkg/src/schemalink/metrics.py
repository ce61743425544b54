"""Retrieval metrics and token/cost accounting."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .catalog import EntityType

# Characters per token used for all schema-size accounting.
CHARS_PER_TOKEN = 3.5

# Default per-1,000-input-token prices (USD) by provider role.
DEFAULT_PRICES = {
    "keyword-model": 0.0008,
    "main-model": 0.003,
    "embedder": 0.0001,
}


def recall_at_n(predicted: Sequence[str], gold: set[str], n: int) -> float:
    """Fraction of gold tables present in the top n predictions."""
    if not gold:
        raise ValueError("gold set must be non-empty")
    return len(gold.intersection(predicted[:n])) / len(gold)


def macro_recall_at_n(
    per_question: Sequence[tuple[Sequence[str], set[str]]], n: int
) -> float:
    """Mean recall_at_n over questions."""
    if not per_question:
        raise ValueError("no questions to average over")
    return sum(recall_at_n(pred, gold, n) for pred, gold in per_question) / len(
        per_question
    )


def count_tokens(text: str) -> int:
    """Estimate tokens as ceil(len / 3.5); integer arithmetic keeps it exact."""
    return (2 * len(text) + 6) // 7


def estimate_cost(
    tokens_by_role: Mapping[str, int],
    prices_per_1k: Mapping[str, float] | None = None,
) -> float:
    """Total cost in currency units given token tallies and per-1k prices."""
    prices = DEFAULT_PRICES if prices_per_1k is None else prices_per_1k
    total = 0.0
    for role, tokens in tokens_by_role.items():
        price = prices.get(role)
        if price is None:
            raise ValueError(f"no price configured for role '{role}'")
        if price < 0:
            raise ValueError(f"negative price for role '{role}'")
        total += tokens / 1000.0 * price
    return total


def entity_usage(
    filtered: Iterable, full: Iterable
) -> dict[str, float]:
    """Percentage of each entity type retained by the filter.

    Both arguments are iterables of objects with an ``entity_type`` attribute
    (entities or retrieval hits). Types absent from the full set are skipped.
    """
    totals: dict[EntityType, int] = {}
    for item in full:
        totals[item.entity_type] = totals.get(item.entity_type, 0) + 1
    kept: dict[EntityType, int] = {}
    for item in filtered:
        kept[item.entity_type] = kept.get(item.entity_type, 0) + 1
    return {
        etype.value: 100.0 * kept.get(etype, 0) / total
        for etype, total in totals.items()
    }
