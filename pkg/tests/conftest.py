import json

import pytest

from schemalink.catalog import parse_catalog
from schemalink.embedding import HashEmbeddingProvider

STUDENT_CLUB_DOC = {
    "version": 1,
    "databases": [
        {
            "name": "student_club",
            "tables": [
                {
                    "name": "member",
                    "columns": [
                        {"name": "first_name", "data_type": "text"},
                        {"name": "last_name", "data_type": "text"},
                        {"name": "zip", "data_type": "integer"},
                    ],
                },
                {
                    "name": "zip_code",
                    "columns": [
                        {"name": "zip_code", "data_type": "integer"},
                        {"name": "city", "data_type": "text"},
                        {"name": "county", "data_type": "text"},
                        {"name": "state", "data_type": "text"},
                    ],
                },
                {
                    "name": "event",
                    "columns": [
                        {"name": "event_id", "data_type": "integer"},
                        {"name": "event_name", "data_type": "text"},
                    ],
                },
            ],
            "foreign_keys": ["member.zip=zip_code.zip_code"],
        }
    ],
}

# Two tables x three columns with every metadata field populated:
# 2*3 table-level entities + 2*3*4 column-level entities = 30.
RICH_DOC = {
    "version": 1,
    "databases": [
        {
            "name": "sales",
            "tables": [
                {
                    "name": f"table_{t}",
                    "alias": f"Table {t}",
                    "description": f"Holds {t} records",
                    "columns": [
                        {
                            "name": f"col_{t}_{c}",
                            "data_type": "text",
                            "alias": f"Column {t}{c}",
                            "description": f"Describes {t}{c}",
                            "value_description": f"Values for {t}{c}",
                        }
                        for c in range(3)
                    ],
                }
                for t in range(2)
            ],
            "foreign_keys": [],
        }
    ],
}


@pytest.fixture
def student_club_catalog():
    return parse_catalog(json.dumps(STUDENT_CLUB_DOC))


@pytest.fixture
def rich_catalog():
    return parse_catalog(json.dumps(RICH_DOC))


@pytest.fixture
def hash64():
    return HashEmbeddingProvider(64)
