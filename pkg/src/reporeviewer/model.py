"""Shared domain types, severity ordering, repo-URL parsing, and report validation."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from urllib.parse import urlparse

SCHEMA_VERSION = "1"

TRUNCATION_MARKER = "…[truncated]"


class Severity(str, Enum):
    """Five-level finding severity, ordered critical > high > medium > low > info."""

    CRITICAL = "critical"
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    INFO = "info"


# Lower rank sorts first (most severe).
_SEVERITY_RANK = {
    Severity.CRITICAL: 0,
    Severity.HIGH: 1,
    Severity.MEDIUM: 2,
    Severity.LOW: 3,
    Severity.INFO: 4,
}


def severity_rank(severity: Severity) -> int:
    """Position of `severity` in the total order; 0 is most severe."""
    return _SEVERITY_RANK[severity]


def compare_severity(a: Severity, b: Severity) -> int:
    """Comparator for the total order: negative when `a` sorts before `b` (more severe)."""
    return _SEVERITY_RANK[a] - _SEVERITY_RANK[b]


class ReviewMode(str, Enum):
    FULL = "full"
    SINGLE_AGENT = "single_agent"
    NO_CONTEXT = "no_context"
    NO_PRIORITY = "no_priority"


class SkipReason(str, Enum):
    BINARY = "binary"
    OVERSIZED = "oversized"
    GENERATED = "generated"
    EXCLUDED_BY_CONFIG = "excluded_by_config"
    OVER_FILE_LIMIT = "over_file_limit"
    UNREADABLE = "unreadable"


class Stage(str, Enum):
    CLONE = "clone"
    CONTEXT = "context"
    REVIEW = "review"
    PRIORITY = "priority"
    SUMMARY = "summary"
    ARTIFACTS = "artifacts"


class EventStatus(str, Enum):
    STARTED = "started"
    PROGRESS = "progress"
    COMPLETED = "completed"
    FAILED = "failed"


class UrlParseError(ValueError):
    """Raised when a repository URL cannot be parsed; the message names the offending part."""


@dataclass(frozen=True)
class RepoSource:
    """Review target: a GitHub repository, optionally pinned to a pull request."""

    owner: str
    name: str
    pr_number: int | None = None
    original_url: str = ""

    def canonical_url(self) -> str:
        return f"https://github.com/{self.owner}/{self.name}"


@dataclass(frozen=True)
class ReviewComment:
    """One structured finding tied to a file and line."""

    id: str
    file: str
    line: int
    severity: Severity
    issue: str
    suggestion: str = ""
    snippet: str = ""


@dataclass(frozen=True)
class SkippedFile:
    path: str
    reason: SkipReason


@dataclass(frozen=True)
class ContextSummary:
    """Model-synthesized project context plus the raw excerpts it was built from."""

    text: str
    tree_excerpt: str
    readme_excerpt: str
    preview_paths: tuple[str, ...] = ()
    truncated: bool = False


@dataclass(frozen=True)
class RunStats:
    files_reviewed: int = 0
    files_skipped: int = 0
    provider_calls: int = 0
    tokens_in: int = 0
    tokens_out: int = 0
    est_cost_usd: float = 0.0
    duration_s: float = 0.0
    parse_failures: int = 0
    retries: int = 0


@dataclass(frozen=True)
class ReviewReport:
    """Full output of one review run, serialized to review.json by the artifact writer."""

    schema_version: str
    source: RepoSource
    mode: ReviewMode
    model_id: str
    generated_at: str
    context: ContextSummary | None
    findings: tuple[ReviewComment, ...]
    skipped: tuple[SkippedFile, ...]
    summary_text: str
    stats: RunStats


@dataclass(frozen=True)
class ProgressEvent:
    """Append-only staged-execution event consumed by the CLI, SSE stream, and UI."""

    job_id: str
    seq: int
    stage: Stage
    status: EventStatus
    detail: str = ""
    current: int | None = None
    total: int | None = None
    timestamp: str = ""


def format_timestamp(dt: datetime) -> str:
    """RFC 3339 UTC with second precision, e.g. 2026-08-09T13:20:00Z."""
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


_GITHUB_HOSTS = {"github.com", "www.github.com"}
_SEGMENT_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def parse_repo_url(url: str, pr_number: int | None = None) -> RepoSource:
    """Parse a GitHub repository or pull-request URL into a RepoSource.

    Accepts https://github.com/{owner}/{name} with optional trailing `.git`,
    trailing slash, or `/pull/{n}` suffix. An explicit `pr_number` argument
    overrides a URL-embedded one.
    """
    raw = url.strip()
    if not raw:
        raise UrlParseError("empty URL")
    parsed = urlparse(raw)
    if parsed.scheme not in ("http", "https"):
        raise UrlParseError(f"unsupported URL scheme {parsed.scheme!r} in {raw!r}")
    if parsed.hostname not in _GITHUB_HOSTS:
        raise UrlParseError(f"non-github host {parsed.hostname!r} in {raw!r}")

    segments = [s for s in parsed.path.split("/") if s]
    if len(segments) < 1:
        raise UrlParseError(f"missing owner segment in {raw!r}")
    if len(segments) < 2:
        raise UrlParseError(f"missing repository name segment in {raw!r}")

    owner, name = segments[0], segments[1]
    if name.endswith(".git"):
        name = name[: -len(".git")]

    url_pr: int | None = None
    rest = segments[2:]
    if rest:
        if len(rest) == 2 and rest[0] == "pull":
            if not rest[1].isdigit() or int(rest[1]) < 1:
                raise UrlParseError(f"invalid pull request number {rest[1]!r} in {raw!r}")
            url_pr = int(rest[1])
        else:
            raise UrlParseError(f"unrecognized path suffix {'/'.join(rest)!r} in {raw!r}")

    if not name or not _SEGMENT_RE.match(name):
        raise UrlParseError(f"invalid repository name {name!r} in {raw!r}")
    if not owner or not _SEGMENT_RE.match(owner):
        raise UrlParseError(f"invalid owner {owner!r} in {raw!r}")

    effective_pr = pr_number if pr_number is not None else url_pr
    if effective_pr is not None and effective_pr < 1:
        raise UrlParseError(f"pull request number must be positive, got {effective_pr}")
    return RepoSource(owner=owner, name=name, pr_number=effective_pr, original_url=raw)


_NON_ALNUM_RE = re.compile(r"[^a-z0-9]+")


def normalize_issue(issue: str) -> str:
    """Lowercase, replace non-alphanumerics with spaces, collapse whitespace, trim."""
    return _NON_ALNUM_RE.sub(" ", issue.lower()).strip()


def comment_id(file: str, line: int, issue: str) -> str:
    """Stable finding id: first 12 hex chars of a SHA-256 over file, line, and normalized issue."""
    payload = f"{file}\n{line}\n{normalize_issue(issue)}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def _is_clean_relative_path(path: str) -> bool:
    if not path or path.startswith("/") or "\\" in path:
        return False
    parts = path.split("/")
    return all(p not in ("", "..") for p in parts)


# Modes whose reports must carry severity-sorted findings / a context summary.
PRIORITIZED_MODES = frozenset({ReviewMode.FULL, ReviewMode.NO_CONTEXT})
CONTEXTUAL_MODES = frozenset({ReviewMode.FULL, ReviewMode.NO_PRIORITY})


def validate_report(report: ReviewReport) -> list[str]:
    """Check every report invariant; returns all violations (empty list means ok)."""
    violations: list[str] = []

    if report.schema_version != SCHEMA_VERSION:
        violations.append(
            f"schema_version must be {SCHEMA_VERSION!r}, got {report.schema_version!r}"
        )

    if not report.source.owner or "/" in report.source.owner:
        violations.append(f"source.owner invalid: {report.source.owner!r}")
    if not report.source.name or "/" in report.source.name:
        violations.append(f"source.name invalid: {report.source.name!r}")
    if report.source.pr_number is not None and report.source.pr_number < 1:
        violations.append(f"source.pr_number must be positive: {report.source.pr_number}")

    if report.mode in CONTEXTUAL_MODES and report.context is None:
        violations.append(f"context must be present in mode {report.mode.value}")
    if report.mode not in CONTEXTUAL_MODES and report.context is not None:
        violations.append(f"context must be absent in mode {report.mode.value}")

    if report.context is not None and report.context.truncated:
        has_marker = report.context.tree_excerpt.endswith(
            TRUNCATION_MARKER
        ) or report.context.readme_excerpt.endswith(TRUNCATION_MARKER)
        if not has_marker:
            violations.append("context.truncated set but no excerpt ends with the marker")

    for c in report.findings:
        label = f"finding {c.id} ({c.file}:{c.line})"
        if c.line < 1:
            violations.append(f"{label}: line must be >= 1")
        if not _is_clean_relative_path(c.file):
            violations.append(f"{label}: file path must be relative with forward slashes")
        if not c.issue.strip():
            violations.append(f"{label}: issue must be nonempty")
        if not isinstance(c.severity, Severity):
            violations.append(f"{label}: severity {c.severity!r} not in the five-level scale")
        if c.id != comment_id(c.file, c.line, c.issue):
            violations.append(f"{label}: id does not match its (file, line, issue) hash")

    if report.mode in PRIORITIZED_MODES:
        keys = [
            (severity_rank(c.severity), c.file, c.line, c.id) for c in report.findings
        ]
        if keys != sorted(keys):
            violations.append("findings not sorted by severity with the rank tie-break")

    for s in report.skipped:
        if not isinstance(s.reason, SkipReason):
            violations.append(f"skipped {s.path}: unknown reason {s.reason!r}")
        if not _is_clean_relative_path(s.path):
            violations.append(f"skipped {s.path!r}: path must be relative with forward slashes")

    st = report.stats
    for name in (
        "files_reviewed",
        "files_skipped",
        "provider_calls",
        "tokens_in",
        "tokens_out",
        "parse_failures",
        "retries",
    ):
        if getattr(st, name) < 0:
            violations.append(f"stats.{name} must be >= 0")
    if st.est_cost_usd < 0:
        violations.append("stats.est_cost_usd must be >= 0")
    if st.duration_s < 0:
        violations.append("stats.duration_s must be >= 0")

    return violations
