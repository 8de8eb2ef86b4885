"""Local-first staged repository review engine.

The package splits review into acquisition, context synthesis, per-file
analysis, prioritization, and summarization, and exposes the shared core
through a CLI, an HTTP job service with SSE progress, and an evaluation
harness.
"""

__version__ = "0.1.0"

from .model import (
    ContextSummary,
    ProgressEvent,
    RepoSource,
    ReviewComment,
    ReviewMode,
    ReviewReport,
    RunStats,
    Severity,
    SkippedFile,
    parse_repo_url,
    validate_report,
)

__all__ = [
    "ContextSummary",
    "ProgressEvent",
    "RepoSource",
    "ReviewComment",
    "ReviewMode",
    "ReviewReport",
    "RunStats",
    "Severity",
    "SkippedFile",
    "parse_repo_url",
    "validate_report",
    "__version__",
]
