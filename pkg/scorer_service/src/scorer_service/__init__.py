"""Entailment scoring and sentence embedding over HTTP."""

__version__ = "0.1.0"

from .app import create_app  # noqa: F401
