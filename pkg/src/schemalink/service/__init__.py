"""HTTP service wrapping the linking engine."""

from .app import create_app  # noqa: F401
