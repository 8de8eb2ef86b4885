"""Staged execution of a review run: plan, wire agents, emit progress, assemble the report.

The stage plan is linear. Clone failure is terminal; every model-dependent
stage degrades instead of failing so a run always ends with valid artifacts.
"""

from __future__ import annotations

import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Protocol

from .acquisition import AcquisitionError, GithubClient, cleanup_workspace, clone_repository
from .artifacts import ArtifactError, write_all
from .context import ContextBudget, collect_context_inputs, render_tree, synthesize_context
from .gateway import (
    GatewayError,
    ModelRequest,
    ModelResponse,
    PriceTable,
    Provider,
    estimate_cost,
)
from .model import (
    SCHEMA_VERSION,
    ContextSummary,
    EventStatus,
    ProgressEvent,
    RepoSource,
    ReviewComment,
    ReviewMode,
    ReviewReport,
    RunStats,
    Stage,
    format_timestamp,
    validate_report,
)
from .priority import deduplicate, rank
from .review import (
    FileReviewResult,
    build_single_agent_prompt,
    parse_single_agent_response,
    review_file,
)
from .selection import FileEntry, SelectionConfig, walk_repository
from .summary import fallback_summary_text, summarize

ENV_FIXED_TIME = "REPOREVIEWER_FIXED_TIME"

# The single-agent baseline gets the whole context budget several times over
# so it is not starved relative to the multi-stage pipeline.
SINGLE_AGENT_BUDGET_FACTOR = 4


class Clock(Protocol):
    def now(self) -> datetime: ...

    def monotonic(self) -> float: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)

    def monotonic(self) -> float:
        return time.monotonic()


class FixedClock:
    """Constant clock for deterministic artifacts in tests."""

    def __init__(self, now: datetime, monotonic: float = 0.0):
        self._now = now
        self._monotonic = monotonic

    def now(self) -> datetime:
        return self._now

    def monotonic(self) -> float:
        return self._monotonic


def clock_from_env() -> Clock:
    """SystemClock, or a FixedClock pinned to REPOREVIEWER_FIXED_TIME when set."""
    raw = os.environ.get(ENV_FIXED_TIME)
    if not raw:
        return SystemClock()
    moment = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return FixedClock(moment)


class ReviewRunError(Exception):
    """Terminal run failure (clone or artifact write)."""

    def __init__(self, stage: Stage, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]

    def __post_init__(self) -> None:
        if not self.stages or self.stages[0] != Stage.CLONE:
            raise ValueError("clone must be the first stage")
        if self.stages[-1] != Stage.ARTIFACTS:
            raise ValueError("artifacts must be the last stage")
        if Stage.REVIEW not in self.stages:
            raise ValueError("review stage must be present")


def plan_stages(mode: ReviewMode) -> StagePlan:
    full = (Stage.CLONE, Stage.CONTEXT, Stage.REVIEW, Stage.PRIORITY, Stage.SUMMARY, Stage.ARTIFACTS)
    if mode is ReviewMode.FULL:
        return StagePlan(full)
    if mode is ReviewMode.NO_CONTEXT:
        return StagePlan(tuple(s for s in full if s != Stage.CONTEXT))
    if mode is ReviewMode.NO_PRIORITY:
        return StagePlan(tuple(s for s in full if s != Stage.PRIORITY))
    return StagePlan((Stage.CLONE, Stage.REVIEW, Stage.ARTIFACTS))


ProgressSink = Callable[[ProgressEvent], None]


@dataclass(frozen=True)
class RunDeps:
    """Everything a run needs, injectable for determinism."""

    gateway: Provider
    workspace_parent: Path
    output_dir: Path
    github: GithubClient | None = None
    clock: Clock = field(default_factory=SystemClock)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    budget: ContextBudget = field(default_factory=ContextBudget)
    price_table: PriceTable = field(default_factory=PriceTable)
    progress_sink: ProgressSink | None = None
    model_id: str = "default"
    job_id: str | None = None
    keep_workspace: bool = False
    remote_override: str | None = None
    review_parallelism: int = 1


def emit_progress(sink: ProgressSink | None, event: ProgressEvent) -> None:
    """Deliver one event; sink exceptions are swallowed (progress is advisory)."""
    if sink is None:
        return
    try:
        sink(event)
    except Exception:
        pass


class _Emitter:
    def __init__(self, job_id: str, sink: ProgressSink | None, clock: Clock):
        self._job_id = job_id
        self._sink = sink
        self._clock = clock
        self._seq = 0

    def emit(
        self,
        stage: Stage,
        status: EventStatus,
        detail: str = "",
        current: int | None = None,
        total: int | None = None,
    ) -> None:
        self._seq += 1
        emit_progress(
            self._sink,
            ProgressEvent(
                job_id=self._job_id,
                seq=self._seq,
                stage=stage,
                status=status,
                detail=detail,
                current=current,
                total=total,
                timestamp=format_timestamp(self._clock.now()),
            ),
        )


class _StatsGateway:
    """Counts calls, tokens, and retries for every completion made during one run."""

    def __init__(self, inner: Provider):
        self._inner = inner
        self._lock = threading.Lock()
        self.calls = 0
        self.tokens_in = 0
        self.tokens_out = 0
        self.retries = 0

    def complete(self, request: ModelRequest) -> ModelResponse:
        with self._lock:
            self.calls += 1
        try:
            response = self._inner.complete(request)
        except GatewayError as exc:
            with self._lock:
                self.retries += max(0, getattr(exc, "attempts", 1) - 1)
            raise
        with self._lock:
            self.tokens_in += response.tokens_in
            self.tokens_out += response.tokens_out
            self.retries += response.attempts - 1
        return response


def _review_selected(
    selected: list[FileEntry],
    context: ContextSummary | None,
    gateway: Provider,
    deps: RunDeps,
    emitter: _Emitter,
) -> list[FileReviewResult]:
    """Per-file reviews, optionally in parallel, merged back into selection order."""
    total = len(selected)
    results: list[FileReviewResult | None] = [None] * total

    if deps.review_parallelism <= 1:
        for i, entry in enumerate(selected):
            results[i] = review_file(entry, context, gateway, deps.model_id)
            detail = entry.path if not results[i].failed else f"review failed: {entry.path}"
            emitter.emit(Stage.REVIEW, EventStatus.PROGRESS, detail, current=i + 1, total=total)
        return [r for r in results if r is not None]

    done = 0
    lock = threading.Lock()

    def work(index: int, entry: FileEntry) -> None:
        nonlocal done
        result = review_file(entry, context, gateway, deps.model_id)
        with lock:
            results[index] = result
            done += 1
            detail = entry.path if not result.failed else f"review failed: {entry.path}"
            emitter.emit(Stage.REVIEW, EventStatus.PROGRESS, detail, current=done, total=total)

    with ThreadPoolExecutor(max_workers=deps.review_parallelism) as pool:
        futures = [pool.submit(work, i, entry) for i, entry in enumerate(selected)]
        for future in futures:
            future.result()
    return [r for r in results if r is not None]


def run_review(source: RepoSource, mode: ReviewMode, deps: RunDeps) -> ReviewReport:
    """Execute the staged plan for `mode` and write artifacts; returns the report."""
    job_id = deps.job_id or uuid.uuid4().hex[:12]
    emitter = _Emitter(job_id, deps.progress_sink, deps.clock)
    gateway = _StatsGateway(deps.gateway)
    plan = plan_stages(mode)
    started_monotonic = deps.clock.monotonic()

    emitter.emit(Stage.CLONE, EventStatus.STARTED, detail=source.original_url or source.canonical_url())
    try:
        workspace = clone_repository(
            source,
            Path(deps.workspace_parent),
            deps.github,
            job_id=job_id,
            remote_override=deps.remote_override,
        )
    except (AcquisitionError, ValueError) as exc:
        emitter.emit(Stage.CLONE, EventStatus.FAILED, detail=str(exc))
        raise ReviewRunError(Stage.CLONE, str(exc)) from exc

    try:
        selected, skipped = walk_repository(workspace, deps.selection)
        emitter.emit(
            Stage.CLONE,
            EventStatus.PROGRESS,
            detail=f"selected {len(selected)} files, skipped {len(skipped)}",
        )
        emitter.emit(Stage.CLONE, EventStatus.COMPLETED, detail=workspace.head_commit)

        context: ContextSummary | None = None
        parse_failures = 0
        degraded_calls = 0

        if Stage.CONTEXT in plan.stages:
            emitter.emit(Stage.CONTEXT, EventStatus.STARTED)
            inputs = collect_context_inputs(workspace, selected, deps.budget, skipped)
            outcome = synthesize_context(inputs, gateway, deps.model_id)
            context = outcome.summary
            if outcome.degraded:
                degraded_calls += 1
                emitter.emit(
                    Stage.CONTEXT, EventStatus.COMPLETED, detail="degraded: fallback context"
                )
            else:
                emitter.emit(Stage.CONTEXT, EventStatus.COMPLETED)

        findings: list[ReviewComment] = []
        summary_text = ""

        emitter.emit(Stage.REVIEW, EventStatus.STARTED, detail=f"{len(selected)} files")
        if mode is ReviewMode.SINGLE_AGENT:
            tree_text = render_tree(selected, skipped, deps.budget)
            budget_chars = deps.budget.total_chars * SINGLE_AGENT_BUDGET_FACTOR
            messages, included = build_single_agent_prompt(tree_text, selected, budget_chars)
            try:
                response = gateway.complete(
                    ModelRequest(model_id=deps.model_id, messages=messages, max_output_tokens=4096)
                )
            except GatewayError as exc:
                degraded_calls += 1
                summary_text = fallback_summary_text([], skipped)
                emitter.emit(
                    Stage.REVIEW, EventStatus.PROGRESS, f"review failed: {exc}", current=1, total=1
                )
            else:
                parsed, summary_text = parse_single_agent_response(response.text, included)
                findings = list(parsed.comments)
                if parsed.parse_failed:
                    parse_failures += 1
                    summary_text = fallback_summary_text([], skipped)
                emitter.emit(Stage.REVIEW, EventStatus.PROGRESS, "combined review", current=1, total=1)
            emitter.emit(Stage.REVIEW, EventStatus.COMPLETED)
        else:
            results = _review_selected(selected, context, gateway, deps, emitter)
            for result in results:
                findings.extend(result.comments)
                parse_failures += 1 if result.parse_failed else 0
                degraded_calls += 1 if result.failed else 0
            emitter.emit(Stage.REVIEW, EventStatus.COMPLETED, detail=f"{len(findings)} findings")

        if Stage.PRIORITY in plan.stages:
            emitter.emit(Stage.PRIORITY, EventStatus.STARTED)
            kept, removed = deduplicate(findings)
            findings = rank(kept)
            emitter.emit(
                Stage.PRIORITY, EventStatus.COMPLETED, detail=f"{removed} duplicates removed"
            )

        if Stage.SUMMARY in plan.stages:
            emitter.emit(Stage.SUMMARY, EventStatus.STARTED)
            outcome = summarize(findings, skipped, context, gateway, deps.model_id)
            summary_text = outcome.text
            if outcome.degraded:
                degraded_calls += 1
                emitter.emit(
                    Stage.SUMMARY, EventStatus.COMPLETED, detail="degraded: fallback summary"
                )
            else:
                emitter.emit(Stage.SUMMARY, EventStatus.COMPLETED)

        duration_s = deps.clock.monotonic() - started_monotonic
        stats = RunStats(
            files_reviewed=len(selected),
            files_skipped=len(skipped),
            provider_calls=gateway.calls,
            tokens_in=gateway.tokens_in,
            tokens_out=gateway.tokens_out,
            est_cost_usd=estimate_cost(
                gateway.tokens_in, gateway.tokens_out, deps.model_id, deps.price_table
            ),
            duration_s=duration_s,
            parse_failures=parse_failures,
            retries=gateway.retries,
        )
        report = ReviewReport(
            schema_version=SCHEMA_VERSION,
            source=source,
            mode=mode,
            model_id=deps.model_id,
            generated_at=format_timestamp(deps.clock.now()),
            context=context,
            findings=tuple(findings),
            skipped=tuple(skipped),
            summary_text=summary_text,
            stats=stats,
        )

        emitter.emit(Stage.ARTIFACTS, EventStatus.STARTED)
        violations = validate_report(report)
        if violations:
            message = f"assembled report invalid: {'; '.join(violations)}"
            emitter.emit(Stage.ARTIFACTS, EventStatus.FAILED, detail=message)
            raise ReviewRunError(Stage.ARTIFACTS, message)
        try:
            paths = write_all(report, deps.output_dir)
        except ArtifactError as exc:
            emitter.emit(Stage.ARTIFACTS, EventStatus.FAILED, detail=str(exc))
            raise ReviewRunError(Stage.ARTIFACTS, str(exc)) from exc
        emitter.emit(
            Stage.ARTIFACTS,
            EventStatus.COMPLETED,
            detail=f"{paths['json']}, {paths['markdown']}",
        )
        return report
    finally:
        cleanup_workspace(workspace, keep=deps.keep_workspace)
