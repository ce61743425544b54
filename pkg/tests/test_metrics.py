import math
import random
from fractions import Fraction

import pytest

from schemalink.catalog import EntityType
from schemalink.index import RetrievalHit
from schemalink.metrics import (
    DEFAULT_PRICES,
    count_tokens,
    entity_usage,
    estimate_cost,
    macro_recall_at_n,
    recall_at_n,
)


def test_recall_full_hit():
    assert recall_at_n(["A", "B", "C"], {"A", "B"}, 5) == 1.0


def test_recall_partial():
    assert recall_at_n(["A", "X", "Y"], {"A", "B"}, 3) == 0.5


def test_recall_macro_mean():
    per_question = [(["A"], {"A"}), (["X", "B"], {"B", "C"})]
    assert macro_recall_at_n(per_question, 2) == pytest.approx(0.75)


def test_recall_requires_gold():
    with pytest.raises(ValueError):
        recall_at_n(["A"], set(), 1)


def test_count_tokens_examples():
    assert count_tokens("") == 0
    assert count_tokens("student_club.member") == 6  # 19 chars
    assert count_tokens("x" * 35) == 10
    assert count_tokens("x" * 7) == 2


def test_count_tokens_matches_ceiling_oracle():
    rng = random.Random(13)
    for _ in range(500):
        text = "x" * rng.randint(0, 4000)
        expected = math.ceil(Fraction(len(text)) / Fraction(7, 2))
        assert count_tokens(text) == expected


def test_estimate_cost_unit_example():
    assert estimate_cost({"main-model": 1_000_000}) == pytest.approx(3.00, abs=1e-9)


def test_estimate_cost_zero():
    assert estimate_cost({"main-model": 0, "embedder": 0}) == 0.0


def test_default_price_table():
    assert DEFAULT_PRICES == {
        "keyword-model": 0.0008,
        "main-model": 0.003,
        "embedder": 0.0001,
    }


def test_estimate_cost_custom_prices_and_validation():
    assert estimate_cost({"role": 2000}, {"role": 0.5}) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        estimate_cost({"role": 10}, {})
    with pytest.raises(ValueError):
        estimate_cost({"role": 10}, {"role": -1.0})


def _hit(etype, i):
    return RetrievalHit(
        entity_id=f"e{i}",
        entity_type=etype,
        database="db",
        table="t",
        column=None,
        query_text="q",
        raw_score=0.5,
        calibrated_score=0.5,
    )


class _Entity:
    def __init__(self, etype):
        self.entity_type = etype


def test_entity_usage_full_filter_is_100():
    full = [_Entity(EntityType.COLUMN_NAME) for _ in range(4)] + [
        _Entity(EntityType.TABLE_NAME) for _ in range(2)
    ]
    usage = entity_usage(full, full)
    assert usage == {"column_name": 100.0, "table_name": 100.0}


def test_entity_usage_empty_filter_is_0():
    full = [_Entity(EntityType.COLUMN_NAME)]
    assert entity_usage([], full) == {"column_name": 0.0}


def test_entity_usage_fraction():
    full = [_Entity(EntityType.COLUMN_NAME) for _ in range(100)]
    kept = [_hit(EntityType.COLUMN_NAME, i) for i in range(7)]
    assert entity_usage(kept, full) == {"column_name": 7.0}
