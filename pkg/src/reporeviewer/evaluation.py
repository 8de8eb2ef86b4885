"""Comparative runs across modes, annotation sheet export, and metric aggregation.

Runs execute sequentially (provider quota friendliness) and failures never
abort the batch. Human annotations come back as CSV and are aggregated into
per-mode precision, actionable rate, duplicate rate, severity agreement,
top-5 usefulness, runtime, and estimated cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

from .artifacts import load_report
from .model import (
    ProgressEvent,
    RepoSource,
    ReviewMode,
    ReviewReport,
    RunStats,
    Severity,
    UrlParseError,
    parse_repo_url,
)
from .orchestrator import ReviewRunError, RunDeps, run_review
from .service import event_to_dict

ANNOTATION_HEADER = (
    "run_id,finding_id,file,line,system_severity,issue,suggestion,"
    "valid,actionable,duplicate_of,annotator_severity,usefulness"
)
ANNOTATION_COLUMNS = ANNOTATION_HEADER.split(",")

VALID_CHOICES = {"yes", "no", "unsure"}
ACTIONABLE_CHOICES = {"yes", "no"}
TOP_USEFULNESS_COUNT = 5

# Canonical mode order for metric tables.
MODE_ORDER = (ReviewMode.FULL, ReviewMode.SINGLE_AGENT, ReviewMode.NO_CONTEXT, ReviewMode.NO_PRIORITY)


class EvaluationError(Exception):
    pass


class AggregationError(EvaluationError):
    """Bad annotation input; the message names the offending row (and column when known)."""


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    source: RepoSource
    mode: ReviewMode
    status: str  # "ok" | "failed"
    report_path: str | None = None
    stats: RunStats | None = None
    failure: str | None = None


@dataclass(frozen=True)
class MetricsRow:
    mode: ReviewMode
    n_runs: int
    n_findings: int
    precision: float | None
    actionable_rate: float | None
    duplicate_rate: float | None
    severity_agreement: float | None
    top5_usefulness: float | None
    mean_runtime_s: float | None
    mean_cost_usd: float | None


@dataclass(frozen=True)
class MetricsTable:
    rows: tuple[MetricsRow, ...]


DepsFactory = Callable[[str, Path], RunDeps]


def parse_repos_file(path: str | Path) -> list[RepoSource]:
    """One target per line: `URL` or `URL#PRNUMBER`; `#`-prefixed comment lines ignored."""
    sources: list[RepoSource] = []
    for number, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        url, pr = line, None
        if "#" in line:
            candidate, suffix = line.rsplit("#", 1)
            if suffix.isdigit():
                url, pr = candidate, int(suffix)
        try:
            sources.append(parse_repo_url(url, pr))
        except UrlParseError as exc:
            raise EvaluationError(f"repos file line {number}: {exc}") from exc
    return sources


def _record_to_dict(record: RunRecord) -> dict:
    stats = None
    if record.stats is not None:
        stats = {
            "files_reviewed": record.stats.files_reviewed,
            "files_skipped": record.stats.files_skipped,
            "provider_calls": record.stats.provider_calls,
            "tokens_in": record.stats.tokens_in,
            "tokens_out": record.stats.tokens_out,
            "est_cost_usd": record.stats.est_cost_usd,
            "duration_s": record.stats.duration_s,
            "parse_failures": record.stats.parse_failures,
            "retries": record.stats.retries,
        }
    return {
        "run_id": record.run_id,
        "source": {
            "owner": record.source.owner,
            "name": record.source.name,
            "pr_number": record.source.pr_number,
            "original_url": record.source.original_url,
        },
        "mode": record.mode.value,
        "status": record.status,
        "report_path": record.report_path,
        "stats": stats,
        "failure": record.failure,
    }


def _record_from_dict(data: dict) -> RunRecord:
    stats = RunStats(**data["stats"]) if data.get("stats") else None
    return RunRecord(
        run_id=data["run_id"],
        source=RepoSource(
            owner=data["source"]["owner"],
            name=data["source"]["name"],
            pr_number=data["source"]["pr_number"],
            original_url=data["source"]["original_url"],
        ),
        mode=ReviewMode(data["mode"]),
        status=data["status"],
        report_path=data.get("report_path"),
        stats=stats,
        failure=data.get("failure"),
    )


def load_runs_index(out_dir: str | Path) -> list[RunRecord]:
    path = Path(out_dir) / "runs.json"
    if not path.is_file():
        raise EvaluationError(f"runs index not found: {path}")
    return [_record_from_dict(d) for d in json.loads(path.read_text(encoding="utf-8"))]


def _execute_run(
    source: RepoSource, mode: ReviewMode, run_id: str, run_dir: Path, deps_factory: DepsFactory
) -> RunRecord:
    run_dir.mkdir(parents=True, exist_ok=True)
    events: list[ProgressEvent] = []
    deps = deps_factory(run_id, run_dir)
    deps = replace(deps, job_id=run_id, output_dir=run_dir, progress_sink=events.append)
    try:
        report = run_review(source, mode, deps)
        record = RunRecord(
            run_id=run_id, source=source, mode=mode, status="ok",
            report_path=str(run_dir / "review.json"), stats=report.stats,
        )
    except ReviewRunError as exc:
        record = RunRecord(
            run_id=run_id, source=source, mode=mode, status="failed", failure=str(exc)
        )
    with (run_dir / "events.jsonl").open("w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event_to_dict(event), ensure_ascii=False) + "\n")
    return record


def run_experiment(
    repos: list[RepoSource],
    modes: list[ReviewMode],
    deps_factory: DepsFactory,
    out_dir: str | Path,
    force: bool = False,
    max_parallel: int = 1,
) -> list[RunRecord]:
    """Cross product of repos x modes; failures are recorded, never raised.

    Sequential by default (provider quota friendliness); `max_parallel` > 1
    runs batches concurrently, isolated by run directory, with the record
    order unchanged.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise EvaluationError(f"output directory {out} is not empty (use force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)

    plan = []
    seq = 0
    for source in repos:
        for mode in modes:
            seq += 1
            run_id = f"{source.owner}-{source.name}-{mode.value}-{seq}"
            plan.append((source, mode, run_id, out / run_id))

    if max_parallel <= 1:
        records = [_execute_run(*item, deps_factory) for item in plan]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            futures = [pool.submit(_execute_run, *item, deps_factory) for item in plan]
            records = [f.result() for f in futures]

    index_path = out / "runs.json"
    index_path.write_text(
        json.dumps([_record_to_dict(r) for r in records], indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return records


def _quote_csv(value: str) -> str:
    return '"' + value.replace('"', '""') + '"'


def _escape_text_cell(value: str) -> str:
    # Embedded newlines become literal \n escapes so the sheet stays one row per finding.
    return _quote_csv(value.replace("\r\n", "\n").replace("\n", "\\n").replace("\r", "\\n"))


def _plain_cell(value: str) -> str:
    if any(ch in value for ch in (",", '"', "\n", "\r")):
        return _quote_csv(value)
    return value


def export_annotation_sheet(records: list[RunRecord], out_path: str | Path) -> Path:
    """Flattened annotations.csv: one row per finding per ok run, annotation columns blank."""
    ok = [r for r in records if r.status == "ok" and r.report_path]
    if not ok:
        raise EvaluationError("no ok runs to export")
    lines = [ANNOTATION_HEADER]
    for record in ok:
        report = load_report(record.report_path)
        for finding in report.findings:
            lines.append(
                ",".join(
                    [
                        _plain_cell(record.run_id),
                        _plain_cell(finding.id),
                        _plain_cell(finding.file),
                        str(finding.line),
                        finding.severity.value,
                        _escape_text_cell(finding.issue),
                        _escape_text_cell(finding.suggestion),
                        "",  # valid
                        "",  # actionable
                        "",  # duplicate_of
                        "",  # annotator_severity
                        "",  # usefulness
                    ]
                )
            )
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True)
class _AnnotatedRow:
    row_number: int
    run_id: str
    finding_id: str
    valid: str
    actionable: str
    duplicate_of: str
    annotator_severity: str | None
    usefulness: int | None


def _parse_annotations(path: str | Path, known: dict[str, ReviewReport]) -> list[_AnnotatedRow]:
    import csv

    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise AggregationError("no rows: annotations file is empty") from None
        if header != ANNOTATION_COLUMNS:
            raise AggregationError(
                f"row 1: header mismatch, expected {ANNOTATION_HEADER!r}"
            )
        rows: list[_AnnotatedRow] = []
        for number, cells in enumerate(reader, start=2):
            if not cells or (len(cells) == 1 and not cells[0].strip()):
                continue
            if len(cells) != len(ANNOTATION_COLUMNS):
                raise AggregationError(
                    f"row {number}: expected {len(ANNOTATION_COLUMNS)} columns, got {len(cells)}"
                )
            record = dict(zip(ANNOTATION_COLUMNS, cells))
            run_id = record["run_id"]
            report = known.get(run_id)
            if report is None:
                raise AggregationError(f"row {number}: unknown run_id {run_id!r}")
            finding_ids = {f.id for f in report.findings}
            finding_id = record["finding_id"]
            if finding_id not in finding_ids:
                raise AggregationError(
                    f"row {number}: unknown finding_id {finding_id!r} for run {run_id!r}"
                )
            valid = record["valid"].strip().lower()
            if valid not in VALID_CHOICES:
                raise AggregationError(f"row {number}, column valid: {record['valid']!r}")
            actionable = record["actionable"].strip().lower()
            if actionable not in ACTIONABLE_CHOICES:
                raise AggregationError(f"row {number}, column actionable: {record['actionable']!r}")
            duplicate_of = record["duplicate_of"].strip()
            if duplicate_of and duplicate_of not in finding_ids:
                raise AggregationError(
                    f"row {number}, column duplicate_of: {duplicate_of!r} not in run {run_id!r}"
                )
            raw_severity = record["annotator_severity"].strip().lower()
            annotator_severity: str | None = None
            if raw_severity:
                try:
                    annotator_severity = Severity(raw_severity).value
                except ValueError:
                    raise AggregationError(
                        f"row {number}, column annotator_severity: {record['annotator_severity']!r}"
                    ) from None
            raw_usefulness = record["usefulness"].strip()
            usefulness: int | None = None
            if raw_usefulness:
                if not raw_usefulness.isdigit() or not 1 <= int(raw_usefulness) <= 5:
                    raise AggregationError(
                        f"row {number}, column usefulness: {record['usefulness']!r}"
                    )
                usefulness = int(raw_usefulness)
            rows.append(
                _AnnotatedRow(
                    row_number=number,
                    run_id=run_id,
                    finding_id=finding_id,
                    valid=valid,
                    actionable=actionable,
                    duplicate_of=duplicate_of,
                    annotator_severity=annotator_severity,
                    usefulness=usefulness,
                )
            )
    if not rows:
        raise AggregationError("no rows: annotations file has a header but no data")
    return rows


def aggregate(annotations_path: str | Path, records: list[RunRecord]) -> MetricsTable:
    """Pool each mode's annotated findings into the metric table."""
    ok = [r for r in records if r.status == "ok" and r.report_path]
    reports = {r.run_id: load_report(r.report_path) for r in ok}
    record_by_id = {r.run_id: r for r in records}
    rows = _parse_annotations(annotations_path, reports)

    modes_present = [m for m in MODE_ORDER if any(r.mode == m for r in records)]
    table_rows: list[MetricsRow] = []
    for mode in modes_present:
        mode_run_ids = {r.run_id for r in ok if r.mode == mode}
        mode_rows = [row for row in rows if record_by_id[row.run_id].mode == mode]

        n_rows = len(mode_rows)
        yes = sum(1 for r in mode_rows if r.valid == "yes")
        no = sum(1 for r in mode_rows if r.valid == "no")
        precision = yes / (yes + no) if (yes + no) else None
        actionable_rate = (
            sum(1 for r in mode_rows if r.actionable == "yes") / n_rows if n_rows else None
        )
        duplicate_rate = (
            sum(1 for r in mode_rows if r.duplicate_of) / n_rows if n_rows else None
        )
        severity_rows = [r for r in mode_rows if r.annotator_severity is not None]
        severity_agreement = None
        if severity_rows:
            matches = sum(
                1
                for r in severity_rows
                if _system_severity(reports[r.run_id], r.finding_id) == r.annotator_severity
            )
            severity_agreement = matches / len(severity_rows)

        per_run_means: list[float] = []
        for run_id in sorted(mode_run_ids):
            report = reports[run_id]
            top_ids = [f.id for f in report.findings[:TOP_USEFULNESS_COUNT]]
            values = [
                r.usefulness
                for r in mode_rows
                if r.run_id == run_id and r.finding_id in top_ids and r.usefulness is not None
            ]
            if values:
                per_run_means.append(sum(values) / len(values))
        top5_usefulness = sum(per_run_means) / len(per_run_means) if per_run_means else None

        mode_stats = [r.stats for r in ok if r.mode == mode and r.stats is not None]
        mean_runtime_s = (
            sum(s.duration_s for s in mode_stats) / len(mode_stats) if mode_stats else None
        )
        mean_cost_usd = (
            sum(s.est_cost_usd for s in mode_stats) / len(mode_stats) if mode_stats else None
        )

        table_rows.append(
            MetricsRow(
                mode=mode,
                n_runs=len(mode_run_ids),
                n_findings=n_rows,
                precision=precision,
                actionable_rate=actionable_rate,
                duplicate_rate=duplicate_rate,
                severity_agreement=severity_agreement,
                top5_usefulness=top5_usefulness,
                mean_runtime_s=mean_runtime_s,
                mean_cost_usd=mean_cost_usd,
            )
        )
    return MetricsTable(rows=tuple(table_rows))


def _system_severity(report: ReviewReport, finding_id: str) -> str:
    for finding in report.findings:
        if finding.id == finding_id:
            return finding.severity.value
    raise AggregationError(f"finding {finding_id} not in report")  # guarded earlier


_METRICS_HEADER = (
    "mode,n_runs,n_findings,precision,actionable_rate,duplicate_rate,"
    "severity_agreement,top5_usefulness,mean_runtime_s,mean_cost_usd"
)

UNDEFINED_CELL = "—"
UNDEFINED_TEX = "--"


def _fmt(value: float | None, digits: int, undefined: str = UNDEFINED_CELL) -> str:
    if value is None:
        return undefined
    return f"{value:.{digits}f}"


def _row_cells(row: MetricsRow, undefined: str) -> list[str]:
    return [
        row.mode.value,
        str(row.n_runs),
        str(row.n_findings),
        _fmt(row.precision, 3, undefined),
        _fmt(row.actionable_rate, 3, undefined),
        _fmt(row.duplicate_rate, 3, undefined),
        _fmt(row.severity_agreement, 3, undefined),
        _fmt(row.top5_usefulness, 3, undefined),
        _fmt(row.mean_runtime_s, 1, undefined),
        _fmt(row.mean_cost_usd, 4, undefined),
    ]


def export_metrics(table: MetricsTable, out_dir: str | Path, figure: bool = True) -> dict[str, Path]:
    """Write metrics.csv, metrics.json, metrics.tex (and metrics.png) under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    csv_lines = [_METRICS_HEADER]
    csv_lines.extend(",".join(_row_cells(row, UNDEFINED_CELL)) for row in table.rows)
    csv_path = out / "metrics.csv"
    csv_path.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    json_rows = []
    for row in table.rows:
        json_rows.append(
            {
                "mode": row.mode.value,
                "n_runs": row.n_runs,
                "n_findings": row.n_findings,
                "precision": row.precision,
                "actionable_rate": row.actionable_rate,
                "duplicate_rate": row.duplicate_rate,
                "severity_agreement": row.severity_agreement,
                "top5_usefulness": row.top5_usefulness,
                "mean_runtime_s": row.mean_runtime_s,
                "mean_cost_usd": row.mean_cost_usd,
            }
        )
    json_path = out / "metrics.json"
    json_path.write_text(json.dumps(json_rows, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    tex_lines = [
        r"\begin{tabular}{lrrrrrrrrr}",
        r"\toprule",
        "Mode & Runs & Findings & Precision & Actionable & Duplicate & "
        r"Severity agr. & Top-5 useful & Runtime (s) & Cost (USD) \\",
        r"\midrule",
    ]
    for row in table.rows:
        cells = _row_cells(row, UNDEFINED_TEX)
        cells[0] = cells[0].replace("_", r"\_")
        tex_lines.append(" & ".join(cells) + r" \\")
    tex_lines.append(r"\bottomrule")
    tex_lines.append(r"\end{tabular}")
    tex_path = out / "metrics.tex"
    tex_path.write_text("\n".join(tex_lines) + "\n", encoding="utf-8")

    paths = {"csv": csv_path, "json": json_path, "tex": tex_path}
    if figure:
        from .figures import render_metrics_figure

        paths["png"] = render_metrics_figure(table, out / "metrics.png")
    return paths
