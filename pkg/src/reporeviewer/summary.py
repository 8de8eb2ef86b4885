"""Human-readable run summary emphasizing top findings and skipped-file categories.

One model call with a deterministic fixed-format fallback, so the pipeline
always ends with a usable summary.
"""

from __future__ import annotations

from dataclasses import dataclass

from .context import skip_tally
from .gateway import GatewayError, ModelRequest, ModelResponse, Provider
from .model import ContextSummary, ReviewComment, Severity, SkippedFile
from .priority import top_k

PROMPT_TOP_FINDINGS = 10
FALLBACK_TOP_FINDINGS = 5

SUMMARY_SYSTEM_PROMPT = (
    "You are a senior code reviewer writing the closing summary of a repository review. "
    "In at most 300 words, summarize the overall state of the code, then give a "
    "prioritized action list. Mention notable skipped-file categories when relevant."
)


@dataclass(frozen=True)
class SummaryResult:
    text: str
    response: ModelResponse | None
    degraded: bool


def _finding_line(c: ReviewComment) -> str:
    return f"{c.severity.value} — {c.file}:{c.line} — {c.issue}"


def build_summary_prompt(
    ranked: list[ReviewComment],
    skipped: list[SkippedFile],
    context: ContextSummary | None,
) -> tuple[tuple[str, str], ...]:
    sections: list[str] = []
    if context is not None:
        sections.append("PROJECT CONTEXT:")
        sections.append(context.text)
        sections.append("")
    sections.append("TOP FINDINGS:")
    top = top_k(ranked, PROMPT_TOP_FINDINGS)
    if top:
        sections.extend(_finding_line(c) for c in top)
    else:
        sections.append("No findings.")
    sections.append("")
    sections.append("SKIPPED FILES:")
    sections.extend(skip_tally(skipped))
    return (("system", SUMMARY_SYSTEM_PROMPT), ("user", "\n".join(sections)))


def fallback_summary_text(ranked: list[ReviewComment], skipped: list[SkippedFile]) -> str:
    """Deterministic digest: total count, per-severity counts, top findings, skip tally."""
    lines = [f"Review digest: {len(ranked)} findings."]
    counts = {severity: 0 for severity in Severity}
    for c in ranked:
        counts[c.severity] += 1
    for severity, count in counts.items():
        if count:
            lines.append(f"{severity.value}: {count}")
    top = top_k(ranked, FALLBACK_TOP_FINDINGS)
    if top:
        lines.append("Top findings:")
        lines.extend(_finding_line(c) for c in top)
    lines.extend(skip_tally(skipped))
    return "\n".join(lines)


def summarize(
    ranked: list[ReviewComment],
    skipped: list[SkippedFile],
    context: ContextSummary | None,
    gateway: Provider,
    model_id: str,
    max_output_tokens: int = 1024,
) -> SummaryResult:
    """One model call; provider failure degrades to the fixed-format digest."""
    request = ModelRequest(
        model_id=model_id,
        messages=build_summary_prompt(ranked, skipped, context),
        max_output_tokens=max_output_tokens,
    )
    try:
        response = gateway.complete(request)
    except GatewayError:
        return SummaryResult(
            text=fallback_summary_text(ranked, skipped), response=None, degraded=True
        )
    return SummaryResult(text=response.text, response=response, degraded=False)
