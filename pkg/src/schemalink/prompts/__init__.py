"""Versioned prompt template assets and slot substitution."""

from importlib import resources

KEYWORD_EXTRACTION = "keyword_extraction_v1"
TABLE_PREDICTION = "table_prediction_v1"
SQL_GENERATION = "sql_generation_v1"
TABLE_DESCRIPTION = "table_description_v1"

_cache: dict[str, str] = {}


def load_template(name: str) -> str:
    """Return the template text for a named asset (without trailing newline)."""
    if name not in _cache:
        path = resources.files(__package__) / "assets" / f"{name}.txt"
        _cache[name] = path.read_text(encoding="utf-8").removesuffix("\n")
    return _cache[name]


def render(name: str, **slots: str) -> str:
    """Substitute {SLOT} markers in a template. Plain replacement, no escaping."""
    text = load_template(name)
    for slot, value in slots.items():
        marker = "{" + slot + "}"
        if marker not in text:
            raise KeyError(f"template '{name}' has no slot {marker}")
        text = text.replace(marker, value)
    return text
