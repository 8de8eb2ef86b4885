"""HTTP facade: background review jobs, live SSE progress, and artifact downloads.

The service adds no review logic of its own; it schedules `run_review` on
background threads and fans the per-job event log out to any number of SSE
subscribers. Job metadata lives in memory, artifacts live on disk.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from . import __version__
from .acquisition import HttpGithubClient
from .gateway import RetryingProvider, default_model_id, live_provider_from_env
from .model import ProgressEvent, RepoSource, ReviewMode, UrlParseError, format_timestamp, parse_repo_url
from .orchestrator import ReviewRunError, RunDeps, clock_from_env, run_review

DEFAULT_PORT = 8080
DEFAULT_ARTIFACT_ROOT = Path("./runs")
DEFAULT_CORS_ORIGINS = ("http://localhost:3000",)
ARTIFACT_NAMES = {
    "review.json": "application/json",
    "review.md": "text/markdown",
}

DepsFactory = Callable[[str, Path], RunDeps]


def default_deps_factory(job_id: str, artifact_dir: Path) -> RunDeps:
    """Production deps: live provider and GitHub client from the environment."""
    return RunDeps(
        gateway=RetryingProvider(live_provider_from_env()),
        github=HttpGithubClient(),
        clock=clock_from_env(),
        workspace_parent=artifact_dir / "ws",
        output_dir=artifact_dir,
        model_id=default_model_id(),
    )


@dataclass(frozen=True)
class ServiceConfig:
    artifact_root: Path = DEFAULT_ARTIFACT_ROOT
    max_concurrent_jobs: int = 4
    cors_origins: tuple[str, ...] = DEFAULT_CORS_ORIGINS
    ping_interval_s: float = 15.0
    deps_factory: DepsFactory = default_deps_factory
    id_factory: Callable[[], str] = field(default=lambda: uuid.uuid4().hex[:12])

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        """Defaults from PORT-adjacent env vars; keyword overrides win."""
        import os

        env: dict = {}
        if os.environ.get("ARTIFACT_ROOT"):
            env["artifact_root"] = Path(os.environ["ARTIFACT_ROOT"])
        if os.environ.get("MAX_CONCURRENT_JOBS"):
            env["max_concurrent_jobs"] = int(os.environ["MAX_CONCURRENT_JOBS"])
        if os.environ.get("CORS_ORIGINS"):
            env["cors_origins"] = tuple(
                origin.strip()
                for origin in os.environ["CORS_ORIGINS"].split(",")
                if origin.strip()
            )
        env.update(overrides)
        return cls(**env)


def port_from_env(default: int = DEFAULT_PORT) -> int:
    import os

    raw = os.environ.get("PORT")
    return int(raw) if raw else default


class JobState:
    QUEUED = "queued"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"

    TERMINAL = (SUCCEEDED, FAILED)


class JobRecord:
    """Single-writer job state plus an append-only event log with many readers."""

    def __init__(self, job_id: str, source: RepoSource, mode: ReviewMode, model_id: str,
                 artifact_dir: Path, created_at: str):
        self.job_id = job_id
        self.source = source
        self.mode = mode
        self.model_id = model_id
        self.artifact_dir = artifact_dir
        self.created_at = created_at
        self.finished_at: str | None = None
        self.state = JobState.QUEUED
        self.error: str | None = None
        self.events: list[ProgressEvent] = []
        self.condition = threading.Condition()

    def append_event(self, event: ProgressEvent) -> None:
        with self.condition:
            self.events.append(event)
            self.condition.notify_all()

    def finish(self, state: str, finished_at: str, error: str | None = None) -> None:
        with self.condition:
            self.state = state
            self.finished_at = finished_at
            self.error = error
            self.condition.notify_all()

    def snapshot(self) -> dict:
        with self.condition:
            return {
                "job_id": self.job_id,
                "state": self.state,
                "source": {
                    "owner": self.source.owner,
                    "name": self.source.name,
                    "pr_number": self.source.pr_number,
                    "original_url": self.source.original_url,
                },
                "mode": self.mode.value,
                "model_id": self.model_id,
                "created_at": self.created_at,
                "finished_at": self.finished_at,
                "error": self.error,
                "artifact_dir": str(self.artifact_dir),
            }


def event_to_dict(event: ProgressEvent) -> dict:
    return {
        "job_id": event.job_id,
        "seq": event.seq,
        "stage": event.stage.value,
        "status": event.status.value,
        "detail": event.detail,
        "current": event.current,
        "total": event.total,
        "timestamp": event.timestamp,
    }


def sse_frame(event: ProgressEvent) -> bytes:
    data = json.dumps(event_to_dict(event), ensure_ascii=False)
    return f"id: {event.seq}\nevent: progress\ndata: {data}\n\n".encode("utf-8")


def sse_done_frame() -> bytes:
    return b"event: done\ndata: {}\n\n"


def sse_error_frame(error: str) -> bytes:
    data = json.dumps(error, ensure_ascii=False)
    return f"event: error\ndata: {data}\n\n".encode("utf-8")


SSE_PING = b": ping\n\n"


class JobStore:
    def __init__(self) -> None:
        self._jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()

    def add(self, record: JobRecord) -> None:
        with self._lock:
            self._jobs[record.job_id] = record

    def get(self, job_id: str) -> JobRecord | None:
        with self._lock:
            return self._jobs.get(job_id)

    def active_count(self) -> int:
        with self._lock:
            return sum(1 for r in self._jobs.values() if r.state not in JobState.TERMINAL)


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="reporeviewer", version=__version__)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(config.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = JobStore()
    app.state.jobs = store
    app.state.config = config

    def execute(record: JobRecord, deps: RunDeps) -> None:
        with record.condition:
            record.state = JobState.RUNNING
            record.condition.notify_all()
        clock = deps.clock
        try:
            run_review(record.source, record.mode, deps)
        except ReviewRunError as exc:
            record.finish(JobState.FAILED, format_timestamp(clock.now()), str(exc))
        except Exception as exc:  # never leave a job stuck in running
            record.finish(JobState.FAILED, format_timestamp(clock.now()), f"internal error: {exc}")
        else:
            record.finish(JobState.SUCCEEDED, format_timestamp(clock.now()))

    @app.post("/reviews", status_code=202)
    async def submit_job(request: Request) -> Response:
        try:
            body = await request.json()
        except ValueError:
            return JSONResponse({"error": "body must be a JSON object"}, status_code=400)
        if not isinstance(body, dict):
            return JSONResponse({"error": "body must be a JSON object"}, status_code=400)

        repo_url = body.get("repo_url")
        if not isinstance(repo_url, str):
            return JSONResponse({"error": "repo_url: required string"}, status_code=400)
        pr_number = body.get("pr_number")
        if pr_number is not None and (not isinstance(pr_number, int) or pr_number < 1):
            return JSONResponse(
                {"error": "pr_number: must be a positive integer"}, status_code=400
            )
        try:
            source = parse_repo_url(repo_url, pr_number)
        except UrlParseError as exc:
            return JSONResponse({"error": f"repo_url: {exc}"}, status_code=400)
        raw_mode = body.get("mode", ReviewMode.FULL.value)
        try:
            mode = ReviewMode(raw_mode)
        except ValueError:
            return JSONResponse({"error": f"mode: unknown mode {raw_mode!r}"}, status_code=400)

        if store.active_count() >= config.max_concurrent_jobs:
            return JSONResponse(
                {"error": f"concurrent job limit ({config.max_concurrent_jobs}) reached"},
                status_code=429,
            )

        job_id = config.id_factory()
        artifact_dir = Path(config.artifact_root) / job_id
        artifact_dir.mkdir(parents=True, exist_ok=True)
        deps = config.deps_factory(job_id, artifact_dir)
        model_id = body.get("model_id")
        if isinstance(model_id, str) and model_id:
            deps = replace(deps, model_id=model_id)
        record = JobRecord(
            job_id=job_id,
            source=source,
            mode=mode,
            model_id=deps.model_id,
            artifact_dir=artifact_dir,
            created_at=format_timestamp(deps.clock.now()),
        )
        deps = replace(
            deps, job_id=job_id, output_dir=artifact_dir, progress_sink=record.append_event
        )
        store.add(record)
        threading.Thread(target=execute, args=(record, deps), daemon=True).start()
        return JSONResponse({"job_id": job_id}, status_code=202)

    @app.get("/reviews/{job_id}")
    def get_job(job_id: str) -> Response:
        record = store.get(job_id)
        if record is None:
            return JSONResponse({"error": f"unknown job {job_id}"}, status_code=404)
        return JSONResponse(record.snapshot())

    @app.get("/reviews/{job_id}/events")
    def stream_events(job_id: str, request: Request) -> Response:
        record = store.get(job_id)
        if record is None:
            return JSONResponse({"error": f"unknown job {job_id}"}, status_code=404)

        last_seq = 0
        header = request.headers.get("last-event-id")
        if header is not None:
            try:
                last_seq = max(0, int(header))
            except ValueError:
                last_seq = 0

        def generate(resume_after: int) -> Iterator[bytes]:
            cursor = 0
            while True:
                with record.condition:
                    while cursor >= len(record.events) and record.state not in JobState.TERMINAL:
                        if not record.condition.wait(timeout=config.ping_interval_s):
                            break
                    pending = record.events[cursor:]
                    cursor += len(pending)
                    state = record.state
                    error = record.error
                    drained = cursor >= len(record.events)
                if not pending and state not in JobState.TERMINAL:
                    yield SSE_PING
                    continue
                for event in pending:
                    if event.seq > resume_after:
                        yield sse_frame(event)
                if state in JobState.TERMINAL and drained:
                    yield sse_error_frame(error or "failed") if state == JobState.FAILED else sse_done_frame()
                    return

        return StreamingResponse(generate(last_seq), media_type="text/event-stream")

    @app.get("/reviews/{job_id}/artifacts/{name}")
    def get_artifact(job_id: str, name: str) -> Response:
        record = store.get(job_id)
        if record is None:
            return JSONResponse({"error": f"unknown job {job_id}"}, status_code=404)
        content_type = ARTIFACT_NAMES.get(name)
        if content_type is None:
            return JSONResponse({"error": f"unknown artifact {name}"}, status_code=404)
        if record.state != JobState.SUCCEEDED:
            return JSONResponse(
                {"error": f"job {job_id} is {record.state}, artifacts not available"},
                status_code=409,
            )
        path = record.artifact_dir / name
        if not path.is_file():
            return JSONResponse({"error": f"artifact {name} missing on disk"}, status_code=404)
        return Response(content=path.read_bytes(), media_type=content_type)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    return app
