from pathlib import Path

import pytest

from schemalink import prompts

GOLDEN = Path(__file__).parent / "golden"

SCHEMA_TEXT = (
    "<db>student_club\n\n<table>member\n<schema>\n(zip:integer),\n</schema>\n</table>\n\n</db>"
)
ZIP_SCHEMA_TEXT = (
    "<db>student_club\n\n<table>zip_code\n<schema>\n(city:text),\n(state:text),\n</schema>\n</table>\n\n</db>"
)


def golden(name: str) -> str:
    return (GOLDEN / f"{name}.txt").read_text(encoding="utf-8")


def test_table_prediction_snapshot():
    rendered = prompts.render(
        prompts.TABLE_PREDICTION,
        SCHEMA=SCHEMA_TEXT,
        QUESTION="Where is Amy Firth's hometown?",
    )
    assert rendered == golden("table_prediction")


def test_sql_generation_snapshot():
    rendered = prompts.render(
        prompts.SQL_GENERATION,
        DIALECT_INSTRUCTION="The SQL query must be valid SQLite.",
        DATABASE_SCHEMA=SCHEMA_TEXT,
        QUESTION="How many members are there?",
    )
    assert rendered == golden("sql_generation")


def test_keyword_extraction_snapshot():
    rendered = prompts.render(
        prompts.KEYWORD_EXTRACTION,
        QUESTION="How many formula_1 races took place on the circuits in Italy?",
    )
    assert rendered == golden("keyword_extraction")


def test_table_description_snapshot():
    rendered = prompts.render(prompts.TABLE_DESCRIPTION, TABLE_SCHEMA=ZIP_SCHEMA_TEXT)
    assert rendered == golden("table_description")


def test_render_is_deterministic():
    a = prompts.render(prompts.TABLE_PREDICTION, SCHEMA="s", QUESTION="q")
    b = prompts.render(prompts.TABLE_PREDICTION, SCHEMA="s", QUESTION="q")
    assert a == b


def test_render_substitutes_all_slots():
    rendered = prompts.render(prompts.TABLE_PREDICTION, SCHEMA="THE_SCHEMA", QUESTION="THE_QUESTION")
    assert "THE_SCHEMA" in rendered
    assert "THE_QUESTION" in rendered
    assert "{SCHEMA}" not in rendered
    assert "{QUESTION}" not in rendered


def test_render_unknown_slot_raises():
    with pytest.raises(KeyError):
        prompts.render(prompts.TABLE_PREDICTION, NOPE="x")


def test_templates_load_without_trailing_newline():
    for name in (
        prompts.TABLE_PREDICTION,
        prompts.SQL_GENERATION,
        prompts.KEYWORD_EXTRACTION,
        prompts.TABLE_DESCRIPTION,
    ):
        text = prompts.load_template(name)
        assert text
        assert not text.endswith("\n")
