"""Command-line surface over the shared review core.

Progress goes to stderr as human-readable stage lines; stdout carries only
machine-usable artifact paths. Exit codes: 0 success, 1 terminal run
failure, 2 usage error.
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from . import __version__
from .acquisition import HttpGithubClient
from .context import CONTEXT_SYSTEM_PROMPT, ContextBudget
from .evaluation import (
    EvaluationError,
    aggregate as aggregate_annotations,
    export_annotation_sheet,
    export_metrics,
    load_runs_index,
    parse_repos_file,
    run_experiment,
)
from .gateway import (
    FailingProvider,
    PriceTable,
    Provider,
    RecordingProvider,
    ReplayProvider,
    RetryingProvider,
    TranscriptLoadError,
    default_model_id,
    live_provider_from_env,
)
from .model import ProgressEvent, ReviewMode, UrlParseError, parse_repo_url
from .orchestrator import ReviewRunError, RunDeps, clock_from_env, plan_stages, run_review
from .review import REVIEW_SYSTEM_PROMPT, SINGLE_AGENT_SYSTEM_PROMPT
from .selection import SelectionConfig
from .summary import SUMMARY_SYSTEM_PROMPT

CONFIG_FILE = "reporeviewer.json"


def _load_config() -> dict:
    path = Path(CONFIG_FILE)
    if not path.is_file():
        return {}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise click.UsageError(f"invalid {CONFIG_FILE}: {exc}")
    if not isinstance(data, dict):
        raise click.UsageError(f"invalid {CONFIG_FILE}: top level must be an object")
    return data


def _setting(flag_value, config: dict, key: str, default):
    """Flags win over the config file, which wins over the built-in default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def _build_provider(replay: str | None, record: str | None) -> Provider:
    if replay:
        try:
            return RetryingProvider(ReplayProvider(replay))
        except TranscriptLoadError as exc:
            raise click.ClickException(str(exc))
    inner = live_provider_from_env()
    if record:
        return RetryingProvider(RecordingProvider(inner, record))
    return RetryingProvider(inner)


def _stage_progress_printer(mode: ReviewMode):
    plan = plan_stages(mode)
    index = {stage: i + 1 for i, stage in enumerate(plan.stages)}
    total = len(plan.stages)

    def sink(event: ProgressEvent) -> None:
        position = index.get(event.stage, 0)
        line = f"[{position}/{total}] {event.stage.value}: {event.status.value}"
        if event.current is not None and event.total is not None:
            line += f" ({event.current}/{event.total})"
        if event.detail:
            line += f" — {event.detail}"
        click.echo(line, err=True)

    return sink


def _print_prompts() -> None:
    blocks = (
        ("context system prompt", CONTEXT_SYSTEM_PROMPT),
        ("review system prompt", REVIEW_SYSTEM_PROMPT),
        ("single-agent system prompt", SINGLE_AGENT_SYSTEM_PROMPT),
        ("summary system prompt", SUMMARY_SYSTEM_PROMPT),
    )
    for name, text in blocks:
        click.echo(f"--- {name} ---")
        click.echo(text)
        click.echo("")


@click.group()
@click.version_option(version=__version__)
def main() -> None:
    """Local-first staged repository review."""


@main.command
@click.argument("url")
@click.option("--pr", type=int, default=None, help="Pull request number (overrides a /pull/N URL).")
@click.option("--mode", "mode_name", type=click.Choice([m.value for m in ReviewMode]), default=None)
@click.option("--model", "model_id", default=None, help="Model id sent to the provider.")
@click.option("--out", "out_dir", default=None, help="Artifact output directory.")
@click.option("--max-files", type=int, default=None)
@click.option("--max-file-kb", type=int, default=None)
@click.option("--keep-workspace", is_flag=True, default=False)
@click.option("--replay", "replay_path", default=None, help="Replay provider transcript (JSONL).")
@click.option("--record", "record_path", default=None, help="Record provider calls to a transcript.")
@click.option("--show-prompts", is_flag=True, default=False, help="Print prompt templates and exit.")
@click.option("--remote", "remote_override", default=None,
              help="Clone from this git remote instead of the GitHub URL (local mirrors, fixtures).")
@click.option("--parallel", type=int, default=None, help="Concurrent file reviews (default 1).")
def review(url, pr, mode_name, model_id, out_dir, max_files, max_file_kb, keep_workspace,
           replay_path, record_path, show_prompts, remote_override, parallel) -> None:
    """Review a repository or pull request and write review.json / review.md."""
    if show_prompts:
        _print_prompts()
        return
    config = _load_config()
    mode = ReviewMode(_setting(mode_name, config, "mode", ReviewMode.FULL.value))
    model = _setting(model_id, config, "model", default_model_id())
    out = Path(_setting(out_dir, config, "out", "review-output"))
    replay = _setting(replay_path, config, "replay", None)
    record = _setting(record_path, config, "record", None)
    remote = _setting(remote_override, config, "remote", None)
    selection = SelectionConfig(
        max_file_bytes=int(_setting(max_file_kb, config, "max_file_kb", 200)) * 1024,
        max_files=int(_setting(max_files, config, "max_files", 50)),
    )
    price_table = PriceTable()
    price_path = config.get("price_table")
    if price_path:
        price_table = PriceTable.from_json_file(price_path)

    try:
        source = parse_repo_url(url, pr)
    except UrlParseError as exc:
        raise click.UsageError(str(exc))

    deps = RunDeps(
        gateway=_build_provider(replay, record),
        github=HttpGithubClient(),
        clock=clock_from_env(),
        workspace_parent=out / "ws",
        output_dir=out,
        selection=selection,
        budget=ContextBudget(),
        price_table=price_table,
        progress_sink=_stage_progress_printer(mode),
        model_id=model,
        keep_workspace=keep_workspace or bool(config.get("keep_workspace")),
        remote_override=remote,
        review_parallelism=int(_setting(parallel, config, "parallel", 1)),
    )
    try:
        run_review(source, mode, deps)
    except ReviewRunError as exc:
        raise click.ClickException(str(exc))
    click.echo(str(out / "review.json"))
    click.echo(str(out / "review.md"))


@main.command
@click.option("--port", type=int, default=None)
@click.option("--artifact-root", default=None)
def serve(port, artifact_root) -> None:
    """Run the HTTP job service until interrupted."""
    import uvicorn

    from .service import ServiceConfig, create_app, port_from_env

    config = _load_config()
    chosen_port = int(_setting(port, config, "port", port_from_env()))
    root_setting = _setting(artifact_root, config, "artifact_root", None)
    service_config = (
        ServiceConfig.from_env(artifact_root=Path(root_setting))
        if root_setting
        else ServiceConfig.from_env()
    )
    app = create_app(service_config)
    try:
        uvicorn.run(app, host="127.0.0.1", port=chosen_port, log_level="warning")
    except (OSError, SystemExit) as exc:
        if isinstance(exc, SystemExit) and not exc.code:
            return
        raise click.ClickException(f"cannot serve on port {chosen_port}: {exc}")


@main.command("eval")
@click.option("--repos", "repos_path", required=True, help="Targets file: URL or URL#PR per line.")
@click.option("--modes", "modes_csv", default=None, help="Comma-separated review modes.")
@click.option("--out", "out_dir", required=True)
@click.option("--replay-dir", default=None, help="Directory of per-run transcripts ({run_id}.jsonl).")
@click.option("--force", is_flag=True, default=False, help="Allow a non-empty output directory.")
@click.option("--remote", "remote_override", default=None,
              help="Clone every target from this git remote (fixtures).")
def eval_cmd(repos_path, modes_csv, out_dir, replay_dir, force, remote_override) -> None:
    """Run the repos x modes cross product and export the annotation sheet."""
    config = _load_config()
    if not Path(repos_path).is_file():
        raise click.UsageError(f"repos file not found: {repos_path}")
    try:
        repos = parse_repos_file(repos_path)
    except EvaluationError as exc:
        raise click.UsageError(str(exc))
    if not repos:
        raise click.UsageError(f"repos file {repos_path} lists no targets")
    raw_modes = _setting(modes_csv, config, "modes", ReviewMode.FULL.value)
    try:
        modes = [ReviewMode(m.strip()) for m in str(raw_modes).split(",") if m.strip()]
    except ValueError as exc:
        raise click.UsageError(f"unknown mode in --modes: {exc}")
    if not modes:
        raise click.UsageError("--modes lists no modes")
    remote = _setting(remote_override, config, "remote", None)

    def deps_factory(run_id: str, run_dir: Path) -> RunDeps:
        if replay_dir:
            transcript = Path(replay_dir) / f"{run_id}.jsonl"
            provider: Provider = (
                RetryingProvider(ReplayProvider(transcript))
                if transcript.is_file()
                else FailingProvider()
            )
        else:
            provider = RetryingProvider(live_provider_from_env())
        return RunDeps(
            gateway=provider,
            github=HttpGithubClient(),
            clock=clock_from_env(),
            workspace_parent=run_dir / "ws",
            output_dir=run_dir,
            model_id=default_model_id(),
            remote_override=remote,
        )

    try:
        records = run_experiment(repos, modes, deps_factory, out_dir, force=force)
    except EvaluationError as exc:
        raise click.UsageError(str(exc))
    ok = sum(1 for r in records if r.status == "ok")
    click.echo(f"{ok}/{len(records)} runs ok", err=True)
    if ok:
        sheet = export_annotation_sheet(records, Path(out_dir) / "annotations.csv")
        click.echo(str(sheet))
    click.echo(str(Path(out_dir) / "runs.json"))


@main.command("aggregate")
@click.option("--annotations", "annotations_path", required=True)
@click.option("--runs", "runs_dir", required=True)
@click.option("--out", "out_dir", required=True)
def aggregate_cmd(annotations_path, runs_dir, out_dir) -> None:
    """Aggregate human annotations into metrics.csv / metrics.json / metrics.tex."""
    if not Path(annotations_path).is_file():
        raise click.UsageError(f"annotations file not found: {annotations_path}")
    try:
        records = load_runs_index(runs_dir)
        table = aggregate_annotations(annotations_path, records)
        paths = export_metrics(table, out_dir)
    except EvaluationError as exc:
        raise click.ClickException(str(exc))
    for key in ("csv", "json", "tex", "png"):
        if key in paths:
            click.echo(str(paths[key]))


if __name__ == "__main__":
    main()
