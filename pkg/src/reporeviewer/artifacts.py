"""Canonical review.json serialization and review.md rendering.

Artifacts are first-class outputs: key order and indentation are fixed so
equal reports produce byte-identical files, and writes are atomic
(temp file + rename) so a crashed run never leaves a half-written artifact.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from .model import (
    ContextSummary,
    RepoSource,
    ReviewComment,
    ReviewMode,
    ReviewReport,
    RunStats,
    Severity,
    SkipReason,
    SkippedFile,
    severity_rank,
    validate_report,
)

JSON_NAME = "review.json"
MARKDOWN_NAME = "review.md"


class ArtifactError(Exception):
    """Terminal artifact failure: invalid report or an IO error on write."""


def report_to_dict(report: ReviewReport) -> dict:
    context = None
    if report.context is not None:
        context = {
            "text": report.context.text,
            "tree_excerpt": report.context.tree_excerpt,
            "readme_excerpt": report.context.readme_excerpt,
            "preview_paths": list(report.context.preview_paths),
            "truncated": report.context.truncated,
        }
    return {
        "schema_version": report.schema_version,
        "source": {
            "owner": report.source.owner,
            "name": report.source.name,
            "pr_number": report.source.pr_number,
            "original_url": report.source.original_url,
        },
        "mode": report.mode.value,
        "model_id": report.model_id,
        "generated_at": report.generated_at,
        "context": context,
        "findings": [
            {
                "id": c.id,
                "file": c.file,
                "line": c.line,
                "severity": c.severity.value,
                "issue": c.issue,
                "suggestion": c.suggestion,
                "snippet": c.snippet,
            }
            for c in report.findings
        ],
        "skipped": [{"path": s.path, "reason": s.reason.value} for s in report.skipped],
        "summary_text": report.summary_text,
        "stats": {
            "files_reviewed": report.stats.files_reviewed,
            "files_skipped": report.stats.files_skipped,
            "provider_calls": report.stats.provider_calls,
            "tokens_in": report.stats.tokens_in,
            "tokens_out": report.stats.tokens_out,
            "est_cost_usd": report.stats.est_cost_usd,
            "duration_s": report.stats.duration_s,
            "parse_failures": report.stats.parse_failures,
            "retries": report.stats.retries,
        },
    }


def report_from_dict(data: dict) -> ReviewReport:
    raw_context = data.get("context")
    context = None
    if raw_context is not None:
        context = ContextSummary(
            text=raw_context["text"],
            tree_excerpt=raw_context["tree_excerpt"],
            readme_excerpt=raw_context["readme_excerpt"],
            preview_paths=tuple(raw_context["preview_paths"]),
            truncated=raw_context["truncated"],
        )
    return ReviewReport(
        schema_version=data["schema_version"],
        source=RepoSource(
            owner=data["source"]["owner"],
            name=data["source"]["name"],
            pr_number=data["source"]["pr_number"],
            original_url=data["source"]["original_url"],
        ),
        mode=ReviewMode(data["mode"]),
        model_id=data["model_id"],
        generated_at=data["generated_at"],
        context=context,
        findings=tuple(
            ReviewComment(
                id=f["id"],
                file=f["file"],
                line=f["line"],
                severity=Severity(f["severity"]),
                issue=f["issue"],
                suggestion=f["suggestion"],
                snippet=f["snippet"],
            )
            for f in data["findings"]
        ),
        skipped=tuple(
            SkippedFile(path=s["path"], reason=SkipReason(s["reason"])) for s in data["skipped"]
        ),
        summary_text=data["summary_text"],
        stats=RunStats(**data["stats"]),
    )


def report_to_json_bytes(report: ReviewReport) -> bytes:
    text = json.dumps(report_to_dict(report), indent=2, ensure_ascii=False) + "\n"
    return text.encode("utf-8")


def load_report(path: str | Path) -> ReviewReport:
    return report_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _atomic_write(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp_name, path)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
    except OSError as exc:
        raise ArtifactError(f"cannot write artifact {path}: {exc}") from exc


def write_json_report(report: ReviewReport, out_dir: str | Path) -> Path:
    violations = validate_report(report)
    if violations:
        raise ArtifactError(f"refusing to write invalid report: {'; '.join(violations)}")
    path = Path(out_dir) / JSON_NAME
    _atomic_write(path, report_to_json_bytes(report))
    return path


def _severity_heading(severity: Severity) -> str:
    return severity.value.capitalize()


def render_markdown(report: ReviewReport) -> str:
    lines: list[str] = []
    title = f"# Review: {report.source.owner}/{report.source.name}"
    if report.source.pr_number is not None:
        title += f" (PR #{report.source.pr_number})"
    lines.append(title)
    lines.append("")
    lines.append(f"- Mode: {report.mode.value}")
    lines.append(f"- Model: {report.model_id}")
    lines.append(f"- Generated: {report.generated_at}")
    lines.append(f"- Duration: {report.stats.duration_s:.1f} s")
    lines.append(f"- Estimated cost: ${report.stats.est_cost_usd:.4f}")
    lines.append("")
    lines.append("## Summary")
    lines.append("")
    lines.append(report.summary_text if report.summary_text else "(no summary)")
    lines.append("")
    lines.append("## Findings")
    lines.append("")
    if not report.findings:
        lines.append("No findings.")
        lines.append("")
    else:
        by_severity: dict[Severity, list[ReviewComment]] = {}
        for c in report.findings:
            by_severity.setdefault(c.severity, []).append(c)
        for severity in sorted(by_severity, key=severity_rank):
            lines.append(f"### {_severity_heading(severity)}")
            lines.append("")
            for c in by_severity[severity]:
                lines.append(f"- **{c.file}:{c.line}** — {c.issue}")
                if c.suggestion:
                    lines.append(f"  Suggestion: {c.suggestion}")
                if c.snippet:
                    lines.append("")
                    lines.append("  ```")
                    for snippet_line in c.snippet.split("\n"):
                        lines.append(f"  {snippet_line}")
                    lines.append("  ```")
                lines.append("")
    lines.append("## Skipped Files")
    lines.append("")
    if not report.skipped:
        lines.append("None.")
        lines.append("")
    else:
        counts: dict[SkipReason, int] = {}
        for s in report.skipped:
            counts[s.reason] = counts.get(s.reason, 0) + 1
        lines.append("| Reason | Count |")
        lines.append("|---|---|")
        for reason in SkipReason:
            if reason in counts:
                lines.append(f"| {reason.value} | {counts[reason]} |")
        lines.append("")
        for s in report.skipped:
            lines.append(f"- {s.path} — {s.reason.value}")
        lines.append("")
    return "\n".join(lines)


def write_markdown_report(report: ReviewReport, out_dir: str | Path) -> Path:
    path = Path(out_dir) / MARKDOWN_NAME
    _atomic_write(path, render_markdown(report).encode("utf-8"))
    return path


def write_all(report: ReviewReport, out_dir: str | Path) -> dict[str, Path]:
    """Write both artifacts; any failure is terminal."""
    json_path = write_json_report(report, out_dir)
    md_path = write_markdown_report(report, out_dir)
    return {"json": json_path, "markdown": md_path}
