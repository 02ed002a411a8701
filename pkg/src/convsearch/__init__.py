"""Conversational clarification retrieval.

Two-phase pipeline: lexical first-phase retrieval over an intent summary
inferred from a clarification dialogue, then constrained generative
re-ranking that emits keyword-based document identifiers.
"""

__version__ = "0.1.0"


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class RemoteClientError(Exception):
    """A remote judge/summarizer endpoint failed (CLI exit code 3)."""
