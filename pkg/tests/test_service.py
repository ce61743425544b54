import pytest
from fastapi.testclient import TestClient

from conftest import STUDENT_CLUB_DOC
from schemalink.catalog import EntityType, decompose
from schemalink.embedding import HashEmbeddingProvider
from schemalink.engine import LinkEngine
from schemalink.index import build_index
from schemalink.llm import ScriptedStubProvider
from schemalink.service import create_app

PREDICTION_REPLY = """<relevant_tables>
  <database name="student_club">
    <table rank="1">zip_code</table>
    <table rank="2">member</table>
  </database>
</relevant_tables>"""

SQL_REPLY = """<database>student_club</database>
<sql_query>SELECT city FROM zip_code</sql_query>"""


@pytest.fixture
def empty_client():
    return TestClient(create_app())


@pytest.fixture
def client(student_club_catalog, hash64):
    index = build_index(
        decompose(student_club_catalog, {EntityType.TABLE_NAME, EntityType.COLUMN_NAME}),
        hash64,
    )
    engine = LinkEngine(
        catalog=student_club_catalog,
        index=index,
        embedder=hash64,
        main_model=ScriptedStubProvider(
            {"### User Question": PREDICTION_REPLY, "### Database Schema": SQL_REPLY}
        ),
    )
    return TestClient(create_app(engine))


def test_health_reports_index_state(empty_client, client):
    body = empty_client.get("/health").json()
    assert body["status"] == "ok"
    assert body["index_loaded"] is False
    assert client.get("/health").json()["index_loaded"] is True


def test_endpoints_require_index(empty_client):
    resp = empty_client.post("/link", json={"question": "zip"})
    assert resp.status_code == 409


def test_index_build_inline_catalog(empty_client):
    resp = empty_client.post(
        "/index/build",
        json={
            "catalog": STUDENT_CLUB_DOC,
            "entity_types": ["table_name", "column_name"],
            "provider": {"kind": "hash", "dimension": 64},
        },
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["entity_count"] == 12
    assert body["partitions"] == {"table_name": 3, "column_name": 9}
    info = empty_client.get("/index/info").json()
    assert info["entity_count"] == 12
    assert info["tables"] == 3


def test_index_build_bad_catalog_maps_error_category(empty_client):
    resp = empty_client.post("/index/build", json={"catalog": {"version": 7, "databases": []}})
    assert resp.status_code == 400
    assert resp.json()["error"]["category"] == "catalog"


def test_keywords_endpoint(client):
    body = client.post("/keywords", json={"question": "formula_1 races in Italy"}).json()
    assert body["keywords"] == ["formula_1", "races", "italy", "formula_1 races"]
    assert body["source"] == "fallback"


def test_link_endpoint_with_overrides(client):
    body = client.post("/link", json={"question": "zip", "top_tables": 1}).json()
    assert len(body["tables"]) == 1
    assert body["tables"][0]["table"] == "member"
    assert body["tables"][0]["score"] == 1.0
    assert "<table>member" in body["candidate_schema"]
    assert body["accounting"]["query_count"] == 1


def test_link_endpoint_validation(client):
    assert client.post("/link", json={"question": "zip", "top_tables": 0}).status_code == 422


def test_predict_endpoint(client):
    body = client.post("/tables/predict", json={"question": "city zip"}).json()
    assert [t["table"] for t in body["tables"]] == ["zip_code", "member"]
    assert body["tables"][0]["rank"] == 1


def test_sql_endpoint(client):
    body = client.post("/sql", json={"question": "city zip"}).json()
    assert body["database"] == "student_club"
    assert body["sql"] == "SELECT city FROM zip_code"
    assert body["correction_rounds"] == 0
    assert [t["table"] for t in body["predicted_tables"]] == ["zip_code", "member"]


def test_sql_endpoint_unparseable_maps_category(student_club_catalog, hash64):
    index = build_index(
        decompose(student_club_catalog, {EntityType.COLUMN_NAME}), hash64
    )
    engine = LinkEngine(
        catalog=student_club_catalog,
        index=index,
        embedder=hash64,
        main_model=ScriptedStubProvider(default_reply="none"),
    )
    client = TestClient(create_app(engine), raise_server_exceptions=False)
    resp = client.post("/sql", json={"question": "zip"})
    assert resp.status_code == 400
    assert resp.json()["error"]["category"] == "sql-parse"


def test_calibrate_endpoint_adopts_weights(client):
    records = [
        {"question": "zip", "gold_tables": ["student_club.member"]},
        {"question": "city", "gold_tables": ["student_club.zip_code"]},
    ]
    body = client.post(
        "/calibrate", json={"records": records, "n_max": 3, "sample_count": 10}
    ).json()
    assert set(body["weights"]) == {"table_name", "column_name"}
    assert abs(sum(body["weights"].values()) - 2.0) < 1e-9
    assert client.get("/index/info").json()["weights_loaded"] is True


def test_eval_endpoint(client):
    records = [
        {"question_id": "q1", "question": "zip", "gold_tables": ["student_club.member"]},
    ]
    body = client.post(
        "/eval", json={"records": records, "method": "rasl_retriever", "at": [1, 3]}
    ).json()
    assert body["method"] == "rasl_retriever"
    assert body["macro_recall"]["1"] == 1.0
    assert body["question_count"] == 1


def test_eval_endpoint_bad_method(client):
    resp = client.post(
        "/eval", json={"records": [{"question": "q", "gold_tables": ["student_club.member"]}],
                        "method": "psychic"}
    )
    assert resp.status_code == 400
