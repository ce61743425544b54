"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``category`` so the CLI and the
HTTP service can map failures to stable identifiers without string matching.
"""


class SchemalinkError(Exception):
    """Base class for all package errors."""

    category = "error"


class CatalogError(SchemalinkError):
    """Malformed catalog document, duplicate names, or dangling references."""

    category = "catalog"

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        if path:
            message = f"{message} (at {path})"
        super().__init__(message)


class UnknownTableError(SchemalinkError):
    """A selection or candidate references a table missing from the catalog."""

    category = "unknown-table"


class DimensionMismatchError(SchemalinkError):
    """A provider returned vectors whose length differs from the index."""

    category = "dimension-mismatch"


class ProviderTransportError(SchemalinkError):
    """A remote provider call failed after the configured retries."""

    category = "provider-transport"

    def __init__(self, message: str, retryable: bool = True):
        self.retryable = retryable
        super().__init__(message)


class IndexBuildError(SchemalinkError):
    """Invalid inputs to index construction (empty, duplicate ids)."""

    category = "index-build"


class IndexFileError(SchemalinkError):
    """Unreadable, corrupt, or version-incompatible index/weights file."""

    category = "index-file"


class CalibrationError(SchemalinkError):
    """Degenerate calibration input, e.g. every AUC equal to zero."""

    category = "calibration"


class PredictionParseError(SchemalinkError):
    """Table-prediction reply had no usable ranked-table block."""

    category = "prediction-parse"


class SqlParseError(SchemalinkError):
    """SQL-generation reply had no database / sql_query block."""

    category = "sql-parse"


class DescriptionSynthesisError(SchemalinkError):
    """Description-synthesis reply had no description block."""

    category = "description-synthesis"


class DatasetError(SchemalinkError):
    """Benchmark dataset unreadable or inconsistent with the catalog."""

    category = "dataset"
