import json
import random

import pytest

from oracles import random_catalog_entities, reference_table_ranking
from schemalink.calibration import CalibrationWeights, entity_type_weights
from schemalink.catalog import ALL_ENTITY_TYPES, EntityType, decompose, parse_catalog
from schemalink.embedding import HashEmbeddingProvider
from schemalink.errors import UnknownTableError
from schemalink.evaluation import BenchmarkRecord
from schemalink.index import RetrievalHit, build_index
from schemalink.linker import (
    PipelineConfig,
    build_candidate_schema,
    calibrate_weights,
    link,
    rank_tables,
    retrieve_all,
)
from schemalink.nlq import KeywordSet, fallback_keywords

TN = EntityType.TABLE_NAME
CN = EntityType.COLUMN_NAME


def hit(entity_id, etype, raw, query="q", table="t", database="db", column=None):
    return RetrievalHit(
        entity_id=entity_id,
        entity_type=etype,
        database=database,
        table=table,
        column=column,
        query_text=query,
        raw_score=raw,
        calibrated_score=raw,
    )


@pytest.fixture
def club_index(student_club_catalog, hash64):
    entities = decompose(student_club_catalog, {TN, CN})
    return build_index(entities, hash64)


# ---------------------------------------------------------------------------
# PipelineConfig
# ---------------------------------------------------------------------------

def test_config_defaults():
    config = PipelineConfig()
    assert config.per_query_top_k == 100
    assert config.table_budget == 50
    assert config.keyword_source == "fallback"
    assert config.entropy_calibration is False


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(per_query_top_k=0)
    with pytest.raises(ValueError):
        PipelineConfig(table_budget=0)
    with pytest.raises(ValueError):
        PipelineConfig(keyword_source="psychic")


def test_config_dict_round_trip():
    config = PipelineConfig(
        per_query_top_k=7, table_budget=3, enabled_types=("table_name",), workers=2
    )
    again = PipelineConfig.from_dict(config.to_dict())
    assert again == config


def test_config_unknown_field_rejected():
    with pytest.raises(ValueError, match="unknown config field"):
        PipelineConfig.from_dict({"per_query_topk": 5})


# ---------------------------------------------------------------------------
# retrieve_all
# ---------------------------------------------------------------------------

def test_retrieve_all_hit_count_law(club_index, hash64):
    keywords = KeywordSet(
        question="where do members live", keywords=("zip", "city", "state"), source="llm"
    )
    config = PipelineConfig(per_query_top_k=100)
    hits = retrieve_all(keywords, club_index, config, hash64)
    # 4 queries x (min(3,100) table_name + min(9,100) column_name entities)
    assert len(hits) == 4 * (3 + 9)


def test_retrieve_all_respects_top_k(club_index, hash64):
    keywords = KeywordSet(question="zip", keywords=(), source="fallback")
    config = PipelineConfig(per_query_top_k=2)
    hits = retrieve_all(keywords, club_index, config, hash64)
    assert len(hits) == 2 + 2  # top-2 per partition


def test_retrieve_all_question_only(club_index, hash64):
    keywords = KeywordSet(question="zip", keywords=(), source="fallback")
    hits = retrieve_all(keywords, club_index, PipelineConfig(), hash64)
    assert {h.query_text for h in hits} == {"zip"}


def test_retrieve_all_enabled_types_filter(club_index, hash64):
    keywords = KeywordSet(question="zip", keywords=(), source="fallback")
    config = PipelineConfig(enabled_types=(TN,))
    hits = retrieve_all(keywords, club_index, config, hash64)
    assert {h.entity_type for h in hits} == {TN}


def test_retrieve_all_amy_firth_columns(club_index, hash64):
    question = "Where is Amy Firth's hometown? Hometown refers to city, county, state"
    hits = retrieve_all(fallback_keywords(question), club_index, PipelineConfig(), hash64)
    exact = {
        (h.table, h.column) for h in hits if h.raw_score == 1.0 and h.entity_type is CN
    }
    assert {("zip_code", "city"), ("zip_code", "county"), ("zip_code", "state")} <= exact


def test_retrieve_all_workers_match_sequential(club_index, hash64):
    question = "Where is Amy Firth's hometown? Hometown refers to city, county, state"
    keywords = fallback_keywords(question)
    sequential = retrieve_all(keywords, club_index, PipelineConfig(workers=1), hash64)
    threaded = retrieve_all(keywords, club_index, PipelineConfig(workers=4), hash64)
    assert sequential == threaded


def test_retrieve_all_keyword_failure_degrades(club_index, hash64):
    # keyword embedding failures degrade with a warning; the question is fatal
    from schemalink.errors import ProviderTransportError

    class Provider:
        name = "flaky"
        dimension = 64

        def embed_batch(self, texts):
            if texts[0] == "boom":
                raise ProviderTransportError("down")
            return HashEmbeddingProvider(64).embed_batch(texts)

    keywords = KeywordSet(question="zip", keywords=("boom",), source="llm")
    hits = retrieve_all(keywords, club_index, PipelineConfig(), Provider())
    assert hits  # question hits survive
    assert all(h.query_text == "zip" for h in hits)

    fatal = KeywordSet(question="boom", keywords=("zip",), source="llm")
    with pytest.raises(ProviderTransportError):
        retrieve_all(fatal, club_index, PipelineConfig(), Provider())


# ---------------------------------------------------------------------------
# rank_tables
# ---------------------------------------------------------------------------

def test_rank_single_hit():
    candidates = rank_tables([hit("e1", CN, 0.42, table="a")], None, PipelineConfig())
    assert len(candidates) == 1
    assert candidates[0].qualified == "db.a"
    assert candidates[0].score == 0.42
    assert candidates[0].support == 1


def test_rank_max_aggregation_beats_support():
    hits = [
        hit("a1", CN, 0.9, table="a"),
        hit("b1", CN, 0.8, table="b"),
        hit("b2", CN, 0.8, table="b"),
        hit("b3", CN, 0.8, table="b"),
    ]
    candidates = rank_tables(hits, None, PipelineConfig())
    assert [c.qualified for c in candidates] == ["db.a", "db.b"]
    assert candidates[0].score == pytest.approx(0.9)
    assert candidates[1].support == 3


def test_rank_equal_scores_higher_support_first():
    hits = [
        hit("a1", CN, 0.8, table="a", query="q1"),
        hit("a1", CN, 0.8, table="a", query="q2"),
        hit("a1", CN, 0.8, table="a", query="q3"),
        hit("b1", CN, 0.8, table="b", query="q1"),
    ]
    candidates = rank_tables(hits, None, PipelineConfig())
    assert [c.qualified for c in candidates] == ["db.a", "db.b"]
    assert candidates[0].support == 3


def test_rank_full_tie_breaks_by_name():
    hits = [hit("b1", CN, 0.5, table="beta"), hit("a1", CN, 0.5, table="alpha")]
    candidates = rank_tables(hits, None, PipelineConfig())
    assert [c.qualified for c in candidates] == ["db.alpha", "db.beta"]


def test_rank_dedupes_entity_across_queries():
    hits = [
        hit("e1", CN, 0.3, table="a", query="q1"),
        hit("e1", CN, 0.7, table="a", query="q2"),
    ]
    candidates = rank_tables(hits, None, PipelineConfig())
    assert candidates[0].score == pytest.approx(0.7)
    assert candidates[0].support == 2
    assert len(candidates[0].best_hits) == 1
    assert candidates[0].best_hits["e1"].query_text == "q2"


def test_rank_applies_type_weights():
    weights = CalibrationWeights(weights={TN: 2.0, CN: 0.5}, aucs={})
    hits = [hit("t1", TN, 0.5, table="a"), hit("c1", CN, 0.9, table="b")]
    candidates = rank_tables(hits, weights, PipelineConfig())
    assert [c.qualified for c in candidates] == ["db.a", "db.b"]
    assert candidates[0].score == pytest.approx(1.0)
    assert candidates[1].score == pytest.approx(0.45)


def test_rank_entropy_then_weights_compose():
    config = PipelineConfig(entropy_calibration=True, entropy_alpha=1.0)
    weights = CalibrationWeights(weights={CN: 2.0}, aucs={})
    # single group: multiplier is exactly 0.5, then the type weight doubles it
    candidates = rank_tables([hit("e1", CN, 0.8)], weights, config)
    assert candidates[0].score == pytest.approx(0.8, abs=1e-12)


def test_rank_budget_truncates():
    hits = [hit(f"e{i}", CN, i / 100, table=f"t{i}") for i in range(20)]
    candidates = rank_tables(hits, None, PipelineConfig(table_budget=5))
    assert len(candidates) == 5


def test_rank_empty_hits():
    assert rank_tables([], None, PipelineConfig()) == []


def test_rank_budget_prefix_property():
    rng = random.Random(17)
    hits = [
        hit(f"e{i}", CN, round(rng.uniform(0, 1), 2), table=f"t{rng.randint(0, 12)}")
        for i in range(60)
    ]
    small = rank_tables(hits, None, PipelineConfig(table_budget=4))
    big = rank_tables(hits, None, PipelineConfig(table_budget=9))
    assert [c.qualified for c in big[:4]] == [c.qualified for c in small]


def test_rank_zero_scores_still_well_formed():
    hits = [hit("e1", CN, 0.0, table="a"), hit("e2", CN, 0.0, table="b")]
    candidates = rank_tables(hits, None, PipelineConfig())
    assert [c.qualified for c in candidates] == ["db.a", "db.b"]


# ---------------------------------------------------------------------------
# build_candidate_schema
# ---------------------------------------------------------------------------

def _candidates_for(question, index, catalog, hash64, **config_kwargs):
    config = PipelineConfig(**config_kwargs)
    hits = retrieve_all(fallback_keywords(question), index, config, hash64)
    return rank_tables(hits, None, config), config


def test_schema_lists_only_hit_columns(student_club_catalog, club_index, hash64):
    config = PipelineConfig(per_query_top_k=1, table_budget=1)
    hits = retrieve_all(fallback_keywords("zip"), club_index, config, hash64)
    candidates = rank_tables(hits, None, config)
    assert candidates[0].table == "member"
    text = build_candidate_schema(student_club_catalog, candidates, config)
    assert "(zip:integer)," in text
    assert "first_name" not in text


def test_schema_table_level_hit_only_renders_empty_schema(student_club_catalog):
    candidates = rank_tables(
        [hit("t", TN, 0.9, database="student_club", table="member")],
        None,
        PipelineConfig(),
    )
    text = build_candidate_schema(student_club_catalog, candidates, PipelineConfig())
    assert "<table>member" in text
    assert "<schema>\n</schema>" in text


def test_schema_orders_tables_by_rank(student_club_catalog):
    hits = [
        hit("m", TN, 0.5, database="student_club", table="member"),
        hit("z", TN, 0.9, database="student_club", table="zip_code"),
    ]
    candidates = rank_tables(hits, None, PipelineConfig())
    text = build_candidate_schema(student_club_catalog, candidates, PipelineConfig())
    assert text.index("<table>zip_code") < text.index("<table>member")


def test_schema_unknown_table_is_fatal(student_club_catalog):
    candidates = rank_tables(
        [hit("g", TN, 0.9, database="student_club", table="ghost")],
        None,
        PipelineConfig(),
    )
    with pytest.raises(UnknownTableError, match="rebuild"):
        build_candidate_schema(student_club_catalog, candidates, PipelineConfig())


def test_schema_description_only_when_retained_and_enabled(rich_catalog, hash64):
    entities = decompose(rich_catalog, set(ALL_ENTITY_TYPES))
    index = build_index(entities, hash64)
    config = PipelineConfig(per_query_top_k=100)
    hits = retrieve_all(
        KeywordSet(question="holds records", keywords=(), source="fallback"),
        index,
        config,
        hash64,
    )
    candidates = rank_tables(hits, None, config)
    with_desc = build_candidate_schema(rich_catalog, candidates, config)
    assert "<desc>" in with_desc
    no_desc_config = PipelineConfig(include_table_descriptions=False)
    without = build_candidate_schema(rich_catalog, candidates, no_desc_config)
    assert "<desc>" not in without


def test_schema_column_fields_follow_hits(rich_catalog):
    hits = [
        hit(
            "sales|table_0|col_0_0|value_description",
            EntityType.VALUE_DESCRIPTION,
            0.9,
            database="sales",
            table="table_0",
            column="col_0_0",
        )
    ]
    candidates = rank_tables(hits, None, PipelineConfig())
    text = build_candidate_schema(rich_catalog, candidates, PipelineConfig())
    assert "(col_0_0:text, Value description: Values for 00)," in text
    assert "Column description" not in text


# ---------------------------------------------------------------------------
# link
# ---------------------------------------------------------------------------

FORMULA_DOC = {
    "version": 1,
    "databases": [
        {
            "name": "formula_1",
            "tables": [
                {
                    "name": "circuits",
                    "columns": [
                        {"name": "circuitid", "data_type": "integer"},
                        {"name": "country", "data_type": "text"},
                    ],
                },
                {
                    "name": "races",
                    "columns": [
                        {"name": "raceid", "data_type": "integer"},
                        {"name": "year", "data_type": "integer"},
                    ],
                },
                {
                    "name": "drivers",
                    "columns": [{"name": "forename", "data_type": "text"}],
                },
                {
                    "name": "standings",
                    "columns": [{"name": "points", "data_type": "real"}],
                },
            ],
        }
    ],
}


def test_link_circuits_question_top3(hash64):
    catalog = parse_catalog(FORMULA_DOC)
    entities = decompose(catalog, {TN, CN})
    index = build_index(entities, hash64)
    config = PipelineConfig(per_query_top_k=1000, table_budget=4)
    question = "How many formula_1 races took place on the circuits in Italy?"
    result = link(question, index, catalog, None, config, hash64)
    assert "formula_1.circuits" in result.table_ranking()[:3]
    # brute-force oracle agrees on the whole ranking
    oracle = reference_table_ranking(
        entities, fallback_keywords(question).queries(), hash64, None, 4
    )
    assert result.table_ranking() == oracle


def test_link_zero_similarity_still_well_formed(student_club_catalog, club_index, hash64):
    result = link(
        "xylophone quux", club_index, student_club_catalog, None, PipelineConfig(), hash64
    )
    assert len(result.candidates) == 3
    assert all(c.score == 0.0 for c in result.candidates)
    # zero-score hits are still retained entities, so every table renders
    assert result.candidate_schema.count("<table>") == 3
    # deterministic tie rule: equal scores fall back to support, then name
    supports = [c.support for c in result.candidates]
    assert supports == sorted(supports, reverse=True)


def test_link_budget_one(student_club_catalog, club_index, hash64):
    result = link(
        "Where is Amy Firth's hometown? Hometown refers to city, county, state",
        club_index,
        student_club_catalog,
        None,
        PipelineConfig(table_budget=1),
        hash64,
    )
    assert len(result.candidates) == 1
    assert result.candidate_schema.count("<table>") == 1


def test_link_budget_law_and_prefix(student_club_catalog, club_index, hash64):
    question = "Where is Amy Firth's hometown? Hometown refers to city, county, state"
    rankings = {}
    for budget in (1, 2, 3):
        result = link(
            question,
            club_index,
            student_club_catalog,
            None,
            PipelineConfig(table_budget=budget),
            hash64,
        )
        assert len(result.candidates) <= budget
        rankings[budget] = result.table_ranking()
    assert rankings[3][:1] == rankings[1]
    assert rankings[3][:2] == rankings[2]


def test_link_filtered_entities_belong_to_candidates(student_club_catalog, club_index, hash64):
    result = link(
        "zip city state",
        club_index,
        student_club_catalog,
        None,
        PipelineConfig(table_budget=2),
        hash64,
    )
    candidate_tables = {c.qualified for c in result.candidates}
    for h in result.filtered_hits:
        assert f"{h.database}.{h.table}" in candidate_tables


def test_link_deterministic(student_club_catalog, club_index, hash64):
    question = "Where is Amy Firth's hometown? Hometown refers to city, county, state"
    a = link(question, club_index, student_club_catalog, None, PipelineConfig(), hash64)
    b = link(question, club_index, student_club_catalog, None, PipelineConfig(), hash64)
    assert a.table_ranking() == b.table_ranking()
    assert a.candidate_schema == b.candidate_schema
    assert a.keywords == b.keywords
    assert [c.score for c in a.candidates] == [c.score for c in b.candidates]
    assert a.filtered_hits == b.filtered_hits


def test_link_accounting_populated(student_club_catalog, club_index, hash64):
    result = link("zip", club_index, student_club_catalog, None, PipelineConfig(), hash64)
    acct = result.accounting
    assert set(acct.stage_seconds) == {"keywords", "retrieve", "rank", "render"}
    assert acct.query_count == 1
    assert acct.hit_count > 0
    assert acct.schema_tokens > 0


def test_link_matches_brute_force_on_random_catalogs(hash64):
    rng = random.Random(31)
    for _ in range(3):
        catalog, entities = random_catalog_entities(rng, max_entities=300)
        index = build_index(entities, hash64)
        config = PipelineConfig(per_query_top_k=10_000, table_budget=10)
        question = " ".join(
            rng.choice([e.text for e in entities if e.entity_type is CN]) for _ in range(2)
        )
        result = link(question, index, catalog, None, config, hash64)
        oracle = reference_table_ranking(
            entities, fallback_keywords(question).queries(), hash64, None, 10
        )
        assert result.table_ranking() == oracle


# ---------------------------------------------------------------------------
# calibrate_weights
# ---------------------------------------------------------------------------

def test_calibrate_perfect_type_gets_max_weight(student_club_catalog, club_index, hash64):
    records = [
        BenchmarkRecord("1", "zip", frozenset({"student_club.member"})),
        BenchmarkRecord("2", "city", frozenset({"student_club.zip_code"})),
        BenchmarkRecord("3", "event_name", frozenset({"student_club.event"})),
    ]
    weights = calibrate_weights(
        club_index, records, PipelineConfig(), hash64, n_max=3, sample_count=200
    )
    assert weights.aucs[CN] > weights.aucs[TN]
    assert weights.weights[CN] == max(weights.weights.values())
    assert weights.training_sample_count == 3


def test_calibrate_all_zero_falls_back_to_uniform(student_club_catalog, club_index, hash64):
    records = [
        BenchmarkRecord("1", "xylophone", frozenset({"student_club.member"})),
    ]
    config = PipelineConfig(per_query_top_k=1, table_budget=1)
    weights = calibrate_weights(
        club_index, records, config, hash64, n_max=1, sample_count=10
    )
    # zero-similarity question: tie rule ranks db.event first, member never in top-1
    assert all(w == 1.0 for w in weights.weights.values())


def test_calibrate_sampling_deterministic(student_club_catalog, club_index, hash64):
    records = [
        BenchmarkRecord(str(i), q, frozenset({"student_club.member"}))
        for i, q in enumerate(["zip", "first_name", "last_name", "member"] * 3)
    ]
    a = calibrate_weights(club_index, records, PipelineConfig(), hash64, sample_count=5, seed=9)
    b = calibrate_weights(club_index, records, PipelineConfig(), hash64, sample_count=5, seed=9)
    assert a.weights == b.weights
    assert a.training_sample_count == 5
