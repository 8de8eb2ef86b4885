from __future__ import annotations

import csv
import json
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import httpx
import pytest
from click.testing import CliRunner

from conftest import (
    FIXED_TIME_ISO,
    demo_source,
    file_url,
    fixed_clock,
    seed_stub_for_run,
)
from reporeviewer.cli import main
from reporeviewer.evaluation import export_annotation_sheet, run_experiment
from reporeviewer.gateway import RecordingProvider, StubProvider
from reporeviewer.model import ReviewMode
from reporeviewer.orchestrator import ENV_FIXED_TIME, RunDeps, run_review


@pytest.fixture
def runner():
    return CliRunner()


def record_transcript(tmp_path, remote, mode=ReviewMode.FULL) -> Path:
    """Produce a provider transcript matching a CLI run over the fixture remote."""
    source = demo_source()
    stub = StubProvider()
    seed_stub_for_run(stub, source, remote, mode, tmp_path / "seed")
    transcript = tmp_path / "transcript.jsonl"
    deps = RunDeps(
        gateway=RecordingProvider(stub, transcript),
        workspace_parent=tmp_path / "rec-ws",
        output_dir=tmp_path / "rec-out",
        clock=fixed_clock(),
        model_id="default",
        job_id="recording",
        remote_override=file_url(remote),
    )
    run_review(source, mode, deps)
    return transcript


def test_review_command_replay(tmp_path, mixed_remote, runner):
    transcript = record_transcript(tmp_path, mixed_remote)
    out = tmp_path / "out"
    result = runner.invoke(
        main,
        [
            "review", "https://github.com/demo/project",
            "--replay", str(transcript),
            "--remote", file_url(mixed_remote),
            "--out", str(out),
        ],
        env={ENV_FIXED_TIME: FIXED_TIME_ISO},
    )
    assert result.exit_code == 0, result.output + result.stderr
    assert result.stdout.splitlines() == [str(out / "review.json"), str(out / "review.md")]
    assert (out / "review.json").is_file()
    report = json.loads((out / "review.json").read_text())
    assert report["mode"] == "full"
    assert len(report["findings"]) == 4

    stderr = result.stderr
    assert "[1/6] clone: started" in stderr
    assert "[6/6] artifacts: completed" in stderr


def test_review_cli_matches_library_bytes(tmp_path, mixed_remote, runner):
    transcript = record_transcript(tmp_path, mixed_remote)
    lib_bytes = (tmp_path / "rec-out" / "review.json").read_bytes()
    out = tmp_path / "cli-out"
    result = runner.invoke(
        main,
        [
            "review", "https://github.com/demo/project",
            "--replay", str(transcript),
            "--remote", file_url(mixed_remote),
            "--out", str(out),
        ],
        env={ENV_FIXED_TIME: FIXED_TIME_ISO},
    )
    assert result.exit_code == 0
    assert (out / "review.json").read_bytes() == lib_bytes


def test_review_usage_error_exit_2(runner):
    result = runner.invoke(main, ["review", "not-a-url"])
    assert result.exit_code == 2


def test_review_unreachable_repo_exit_1(tmp_path, runner):
    result = runner.invoke(
        main,
        [
            "review", "https://github.com/gone/gone",
            "--remote", file_url(tmp_path / "missing"),
            "--out", str(tmp_path / "out"),
        ],
    )
    assert result.exit_code == 1
    assert not (tmp_path / "out" / "review.json").exists()


def test_review_show_prompts(runner):
    result = runner.invoke(main, ["review", "ignored-url", "--show-prompts"])
    assert result.exit_code == 0
    assert "review system prompt" in result.output
    assert "JSON array" in result.output


def test_review_config_file_defaults(tmp_path, mixed_remote, runner):
    transcript = record_transcript(tmp_path, mixed_remote)
    out = tmp_path / "from-config"
    config = {
        "out": str(out),
        "remote": file_url(mixed_remote),
        "replay": str(transcript),
    }
    with runner.isolated_filesystem(temp_dir=tmp_path):
        Path("reporeviewer.json").write_text(json.dumps(config))
        result = runner.invoke(
            main, ["review", "https://github.com/demo/project"],
            env={ENV_FIXED_TIME: FIXED_TIME_ISO},
        )
    assert result.exit_code == 0, result.output
    assert (out / "review.json").is_file()


def test_eval_command_runs_cross_product(tmp_path, mixed_remote, runner):
    repos = tmp_path / "repos.txt"
    repos.write_text("# targets\nhttps://github.com/demo/project\n")
    out = tmp_path / "exp"
    result = runner.invoke(
        main,
        [
            "eval", "--repos", str(repos),
            "--modes", "full,single_agent",
            "--out", str(out),
            "--replay-dir", str(tmp_path / "no-transcripts"),
            "--remote", file_url(mixed_remote),
        ],
        env={ENV_FIXED_TIME: FIXED_TIME_ISO},
    )
    assert result.exit_code == 0, result.output + result.stderr
    assert (out / "runs.json").is_file()
    index = json.loads((out / "runs.json").read_text())
    assert len(index) == 2
    assert {r["status"] for r in index} == {"ok"}  # degraded runs still complete
    for r in index:
        assert (out / r["run_id"] / "review.json").is_file()
        assert (out / r["run_id"] / "events.jsonl").is_file()


def test_eval_missing_repos_file_exit_2(tmp_path, runner):
    result = runner.invoke(
        main, ["eval", "--repos", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o")]
    )
    assert result.exit_code == 2


def test_eval_unreachable_repo_recorded_not_fatal(tmp_path, runner):
    repos = tmp_path / "repos.txt"
    repos.write_text("https://github.com/gone/gone\n")
    out = tmp_path / "exp"
    result = runner.invoke(
        main,
        [
            "eval", "--repos", str(repos), "--out", str(out),
            "--remote", file_url(tmp_path / "missing"),
        ],
    )
    assert result.exit_code == 0
    index = json.loads((out / "runs.json").read_text())
    assert index[0]["status"] == "failed"


def _annotated_fixture(tmp_path, mixed_remote) -> tuple[Path, Path]:
    source = demo_source()
    stub = StubProvider()
    for mode in (ReviewMode.FULL, ReviewMode.NO_CONTEXT):
        seed_stub_for_run(stub, source, mixed_remote, mode, tmp_path / f"seed-{mode.value}")

    def factory(run_id: str, run_dir: Path) -> RunDeps:
        return RunDeps(
            gateway=stub,
            workspace_parent=run_dir / "ws",
            output_dir=run_dir,
            clock=fixed_clock(),
            model_id="stub-model",
            remote_override=file_url(mixed_remote),
        )

    out = tmp_path / "exp"
    records = run_experiment(
        [source], [ReviewMode.FULL, ReviewMode.NO_CONTEXT], factory, out
    )
    sheet = export_annotation_sheet(records, out / "annotations.csv")

    with sheet.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for i, row in enumerate(rows):
        row["valid"] = "yes" if i % 2 == 0 else "no"
        row["actionable"] = "yes"
    annotated = tmp_path / "annotated.csv"
    with annotated.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=rows[0].keys())
        writer.writeheader()
        writer.writerows(rows)
    return annotated, out


def test_aggregate_command_writes_metrics(tmp_path, mixed_remote, runner):
    annotated, runs_dir = _annotated_fixture(tmp_path, mixed_remote)
    out = tmp_path / "metrics"
    result = runner.invoke(
        main,
        ["aggregate", "--annotations", str(annotated), "--runs", str(runs_dir), "--out", str(out)],
    )
    assert result.exit_code == 0, result.output + result.stderr
    for name in ("metrics.csv", "metrics.json", "metrics.tex", "metrics.png"):
        assert (out / name).is_file()
    printed = result.stdout.splitlines()
    assert str(out / "metrics.csv") in printed


def test_aggregate_malformed_row_exit_1(tmp_path, mixed_remote, runner):
    annotated, runs_dir = _annotated_fixture(tmp_path, mixed_remote)
    lines = annotated.read_text().splitlines()
    lines[2] = lines[2] + ",extra-column"
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    result = runner.invoke(
        main,
        ["aggregate", "--annotations", str(bad), "--runs", str(runs_dir),
         "--out", str(tmp_path / "m")],
    )
    assert result.exit_code == 1
    assert "row 3" in result.stderr


def test_aggregate_empty_annotations_exit_1(tmp_path, mixed_remote, runner):
    _, runs_dir = _annotated_fixture(tmp_path, mixed_remote)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    result = runner.invoke(
        main,
        ["aggregate", "--annotations", str(empty), "--runs", str(runs_dir),
         "--out", str(tmp_path / "m")],
    )
    assert result.exit_code == 1
    assert "no rows" in result.stderr


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_health_and_clean_shutdown(tmp_path):
    port = _free_port()
    proc = subprocess.Popen(
        [sys.executable, "-m", "reporeviewer.cli", "serve", "--port", str(port),
         "--artifact-root", str(tmp_path / "runs")],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        cwd=tmp_path,
    )
    try:
        deadline = time.monotonic() + 15
        body = None
        while time.monotonic() < deadline:
            try:
                body = httpx.get(f"http://127.0.0.1:{port}/health", timeout=1.0).json()
                break
            except httpx.HTTPError:
                time.sleep(0.1)
        assert body == {"status": "ok", "version": "0.1.0"}
    finally:
        proc.send_signal(signal.SIGINT)
        proc.wait(timeout=10)
    assert proc.returncode == 0


def test_serve_occupied_port_exit_1(tmp_path):
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        proc = subprocess.run(
            [sys.executable, "-m", "reporeviewer.cli", "serve", "--port", str(port)],
            capture_output=True,
            timeout=30,
            cwd=tmp_path,
        )
        assert proc.returncode == 1
        assert b"cannot serve" in proc.stderr
    finally:
        blocker.close()
