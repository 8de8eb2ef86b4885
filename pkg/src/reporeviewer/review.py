"""Per-file structured review via one model call each, with defensive output parsing.

The parser accepts arbitrary model text without ever raising: fences are
stripped, the first JSON array (or bare object) is extracted by bracket
counting that ignores brackets inside string literals, and each element is
coerced field by field into a valid ReviewComment or dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .gateway import GatewayError, ModelRequest, ModelResponse, Provider
from .model import ContextSummary, ReviewComment, Severity, comment_id
from .selection import FileEntry

MAX_CONTENT_PROMPT_CHARS = 48000
SNIPPET_RADIUS = 2

REVIEW_SYSTEM_PROMPT = (
    "You are a meticulous senior code reviewer. Identify concrete problems in the file "
    "you are given: bugs, security issues, error handling gaps, and significant "
    "maintainability risks. Respond with only a JSON array of objects with keys "
    "file, line, severity, issue, suggestion; severity one of "
    "critical|high|medium|low|info. Use an empty array when there is nothing to report."
)

SINGLE_AGENT_SYSTEM_PROMPT = (
    "You are a meticulous senior code reviewer examining an entire repository in one "
    "pass. Respond with only a JSON object of the form "
    '{"findings": [...], "summary": "..."} where findings is an array of objects with '
    "keys file, line, severity, issue, suggestion; severity one of "
    "critical|high|medium|low|info; and summary is a concise review summary."
)

# Severity coercion table: canonical names map to themselves, synonyms fold in,
# anything else becomes medium and is counted as coerced.
SEVERITY_SYNONYMS = {
    "blocker": Severity.CRITICAL,
    "critical": Severity.CRITICAL,
    "major": Severity.HIGH,
    "error": Severity.HIGH,
    "severe": Severity.HIGH,
    "high": Severity.HIGH,
    "warning": Severity.MEDIUM,
    "moderate": Severity.MEDIUM,
    "medium": Severity.MEDIUM,
    "minor": Severity.LOW,
    "low": Severity.LOW,
    "nit": Severity.LOW,
    "nitpick": Severity.LOW,
    "info": Severity.INFO,
    "note": Severity.INFO,
    "style": Severity.INFO,
    "informational": Severity.INFO,
}


@dataclass(frozen=True)
class ParseResult:
    comments: tuple[ReviewComment, ...]
    dropped: int = 0
    coerced: int = 0
    parse_failed: bool = False


@dataclass(frozen=True)
class FileReviewResult:
    comments: tuple[ReviewComment, ...]
    response: ModelResponse | None
    dropped: int = 0
    coerced: int = 0
    parse_failed: bool = False
    failed: bool = False  # provider failure after retries; the pipeline continues


def numbered_lines(content: str) -> str:
    return "\n".join(f"{i}: {line}" for i, line in enumerate(content.split("\n"), start=1))


def build_review_prompt(
    file: FileEntry, context: ContextSummary | None
) -> tuple[tuple[str, str], ...]:
    """System persona plus the numbered file content, optionally preceded by context."""
    body = numbered_lines(file.content)
    if len(body) > MAX_CONTENT_PROMPT_CHARS:
        body = (
            body[:MAX_CONTENT_PROMPT_CHARS]
            + "\n…[truncated]\nNote: file content was truncated; review only the visible portion."
        )
    sections: list[str] = []
    if context is not None:
        sections.append("PROJECT CONTEXT:")
        sections.append(context.text)
        sections.append("")
    sections.append(f"FILE: {file.path}")
    sections.append(body)
    return (("system", REVIEW_SYSTEM_PROMPT), ("user", "\n".join(sections)))


def _strip_fences(text: str) -> str:
    stripped = text.strip()
    if not stripped.startswith("```"):
        return text
    lines = stripped.split("\n")
    if len(lines) < 2:
        return text
    # Drop the opening fence (with optional language tag) and a closing fence line.
    body = lines[1:]
    if body and body[-1].strip().startswith("```"):
        body = body[:-1]
    return "\n".join(body)


def _extract_balanced(text: str, open_ch: str, close_ch: str) -> str | None:
    """Slice from the first `open_ch` to its matching `close_ch`, skipping string literals."""
    start = text.find(open_ch)
    if start == -1:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == open_ch:
            depth += 1
        elif ch == close_ch:
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _extract_payload(text: str) -> list | None:
    """First JSON array in the text, or a bare object wrapped into a one-element array."""
    cleaned = _strip_fences(text)
    array_slice = _extract_balanced(cleaned, "[", "]")
    if array_slice is not None:
        try:
            parsed = json.loads(array_slice)
            if isinstance(parsed, list):
                return parsed
        except ValueError:
            pass
    object_slice = _extract_balanced(cleaned, "{", "}")
    if object_slice is not None:
        try:
            parsed = json.loads(object_slice)
            if isinstance(parsed, dict):
                return [parsed]
        except ValueError:
            pass
    return None


def _coerce_line(value: object, line_count: int) -> int:
    line = 1
    if isinstance(value, bool):
        line = 1
    elif isinstance(value, int):
        line = value
    elif isinstance(value, float) and value.is_integer():
        line = int(value)
    elif isinstance(value, str):
        text = value.strip()
        if text.isdigit():
            line = int(text)
    return max(1, min(line, max(1, line_count)))


def _coerce_severity(value: object) -> tuple[Severity, bool]:
    if isinstance(value, str):
        mapped = SEVERITY_SYNONYMS.get(value.strip().lower())
        if mapped is not None:
            canonical = value.strip().lower() == mapped.value
            return mapped, not canonical
    return Severity.MEDIUM, True


def _coerce_element(
    element: object, default_file: str, line_count: int
) -> tuple[ReviewComment | None, int]:
    """One raw finding to a ReviewComment, or None when it must be dropped."""
    if not isinstance(element, dict):
        return None, 0
    issue = element.get("issue")
    if not isinstance(issue, str) or not issue.strip():
        return None, 0
    issue = issue.strip()

    coerced = 0
    supplied_file = element.get("file")
    file = default_file
    if isinstance(supplied_file, str) and supplied_file and supplied_file != default_file:
        coerced += 1  # model-supplied path overridden to prevent hallucinated grouping

    line = _coerce_line(element.get("line"), line_count)
    severity, severity_coerced = _coerce_severity(element.get("severity"))
    if severity_coerced:
        coerced += 1
    suggestion = element.get("suggestion")
    if not isinstance(suggestion, str):
        suggestion = ""

    comment = ReviewComment(
        id=comment_id(file, line, issue),
        file=file,
        line=line,
        severity=severity,
        issue=issue,
        suggestion=suggestion,
    )
    return comment, coerced


def parse_findings(text: str, file: FileEntry) -> ParseResult:
    """Total over arbitrary input: never raises, all failure is counted."""
    payload = _extract_payload(text)
    if payload is None:
        return ParseResult(comments=(), parse_failed=True)
    comments: list[ReviewComment] = []
    dropped = 0
    coerced = 0
    for element in payload:
        comment, element_coerced = _coerce_element(element, file.path, file.line_count)
        if comment is None:
            dropped += 1
            continue
        coerced += element_coerced
        comments.append(comment)
    return ParseResult(comments=tuple(comments), dropped=dropped, coerced=coerced)


def attach_snippet(
    comment: ReviewComment, file: FileEntry, radius: int = SNIPPET_RADIUS
) -> ReviewComment:
    """Numbered source window of `radius` lines around the finding."""
    lo = max(1, comment.line - radius)
    hi = min(file.line_count, comment.line + radius)
    if hi < lo:
        return comment
    display = file.content.split("\n")
    window = "\n".join(f"{n}: {display[n - 1]}" for n in range(lo, hi + 1))
    return replace(comment, snippet=window)


def review_file(
    file: FileEntry,
    context: ContextSummary | None,
    gateway: Provider,
    model_id: str,
    max_output_tokens: int = 2048,
) -> FileReviewResult:
    """One model call for one file; provider failure yields zero comments, never an exception."""
    request = ModelRequest(
        model_id=model_id,
        messages=build_review_prompt(file, context),
        max_output_tokens=max_output_tokens,
    )
    try:
        response = gateway.complete(request)
    except GatewayError:
        return FileReviewResult(comments=(), response=None, failed=True)
    parsed = parse_findings(response.text, file)
    comments = tuple(attach_snippet(c, file) for c in parsed.comments)
    return FileReviewResult(
        comments=comments,
        response=response,
        dropped=parsed.dropped,
        coerced=parsed.coerced,
        parse_failed=parsed.parse_failed,
    )


def build_single_agent_prompt(
    tree_text: str, files: list[FileEntry], budget_chars: int
) -> tuple[tuple[tuple[str, str], ...], list[FileEntry]]:
    """One combined prompt: tree plus as many whole files as fit, in selection order."""
    sections = ["REPOSITORY STRUCTURE:", tree_text.rstrip("\n"), ""]
    remaining = budget_chars - sum(len(s) + 1 for s in sections)
    included: list[FileEntry] = []
    for entry in files:
        block = f"FILE: {entry.path}\n{numbered_lines(entry.content)}\n"
        if len(block) <= remaining:
            sections.append(block)
            remaining -= len(block) + 1
            included.append(entry)
        elif remaining > 1000:
            sections.append(block[: remaining - 13] + "\n…[truncated]\n")
            remaining = 0
            included.append(entry)
        else:
            break
    messages = (("system", SINGLE_AGENT_SYSTEM_PROMPT), ("user", "\n".join(sections)))
    return messages, included


def parse_single_agent_response(
    text: str, files: list[FileEntry]
) -> tuple[ParseResult, str]:
    """The per-file parser extended to the wrapping {findings, summary} object.

    Model-supplied file paths are kept when they name a prompted file and
    otherwise fall back to the first prompted file (counted as coerced).
    """
    by_path = {f.path: f for f in files}
    cleaned = _strip_fences(text)
    payload: list | None = None
    summary_text = ""
    wrapper: dict | None = None
    object_slice = _extract_balanced(cleaned, "{", "}")
    if object_slice is not None:
        try:
            parsed = json.loads(object_slice)
            if isinstance(parsed, dict):
                wrapper = parsed
        except ValueError:
            wrapper = None
    if wrapper is not None and ("findings" in wrapper or "summary" in wrapper):
        raw_findings = wrapper.get("findings")
        payload = raw_findings if isinstance(raw_findings, list) else []
        raw_summary = wrapper.get("summary")
        summary_text = raw_summary if isinstance(raw_summary, str) else ""
    if payload is None:
        # Not the wrapping shape; fall back to a bare findings array, then
        # to a lone finding object.
        array_slice = _extract_balanced(cleaned, "[", "]")
        if array_slice is not None:
            try:
                parsed = json.loads(array_slice)
                if isinstance(parsed, list):
                    payload = parsed
            except ValueError:
                payload = None
    if payload is None and wrapper is not None:
        payload = [wrapper]
    if payload is None:
        return ParseResult(comments=(), parse_failed=True), ""

    comments: list[ReviewComment] = []
    dropped = 0
    coerced = 0
    for element in payload:
        if not isinstance(element, dict):
            dropped += 1
            continue
        supplied = element.get("file")
        target: FileEntry | None = None
        if isinstance(supplied, str):
            normalized = supplied.replace("\\", "/").removeprefix("./")
            target = by_path.get(normalized) or by_path.get(supplied)
        file_coerced = 0
        if target is None:
            if not files:
                dropped += 1
                continue
            target = files[0]
            file_coerced = 1
        comment, element_coerced = _coerce_element(
            element, target.path, target.line_count
        )
        if comment is None:
            dropped += 1
            continue
        coerced += element_coerced + file_coerced
        comments.append(attach_snippet(comment, target))
    return (
        ParseResult(comments=tuple(comments), dropped=dropped, coerced=coerced),
        summary_text,
    )
