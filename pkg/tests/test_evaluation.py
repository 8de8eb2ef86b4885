from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from conftest import demo_source, file_url, fixed_clock, seed_stub_for_run
from reporeviewer.artifacts import write_all
from reporeviewer.evaluation import (
    ANNOTATION_HEADER,
    AggregationError,
    EvaluationError,
    RunRecord,
    aggregate,
    export_annotation_sheet,
    export_metrics,
    load_runs_index,
    parse_repos_file,
    run_experiment,
)
from reporeviewer.gateway import StubProvider
from reporeviewer.model import (
    ContextSummary,
    RepoSource,
    ReviewComment,
    ReviewMode,
    ReviewReport,
    RunStats,
    SCHEMA_VERSION,
    Severity,
    comment_id,
)
from reporeviewer.orchestrator import RunDeps
from reporeviewer.priority import rank


def finding(file: str, line: int, severity: Severity, issue: str, suggestion: str = "") -> ReviewComment:
    return ReviewComment(
        id=comment_id(file, line, issue), file=file, line=line, severity=severity,
        issue=issue, suggestion=suggestion,
    )


def fabricate_run(
    out: Path,
    run_id: str,
    mode: ReviewMode,
    findings: list[ReviewComment],
    duration_s: float,
    cost: float,
    status: str = "ok",
) -> RunRecord:
    source = RepoSource(owner="o", name="n", original_url="https://github.com/o/n")
    if status != "ok":
        return RunRecord(run_id=run_id, source=source, mode=mode, status="failed", failure="x")
    context = None
    if mode in (ReviewMode.FULL, ReviewMode.NO_PRIORITY):
        context = ContextSummary(text="ctx", tree_excerpt="", readme_excerpt="")
    ordered = rank(findings) if mode in (ReviewMode.FULL, ReviewMode.NO_CONTEXT) else findings
    stats = RunStats(files_reviewed=len(findings), duration_s=duration_s, est_cost_usd=cost)
    report = ReviewReport(
        schema_version=SCHEMA_VERSION,
        source=source,
        mode=mode,
        model_id="m",
        generated_at="2026-08-09T12:00:00Z",
        context=context,
        findings=tuple(ordered),
        skipped=(),
        summary_text="s",
        stats=stats,
    )
    run_dir = out / run_id
    write_all(report, run_dir)
    return RunRecord(
        run_id=run_id, source=source, mode=mode, status="ok",
        report_path=str(run_dir / "review.json"), stats=stats,
    )


@pytest.fixture
def metrics_fixture(tmp_path):
    """Three runs, twelve findings, annotations covering every edge case.

    Expected values are hand-computed and asserted exactly in the tests below.
    """
    out = tmp_path / "runs"

    f1 = finding("a.py", 1, Severity.CRITICAL, "sql injection in query builder")
    f2 = finding("a.py", 5, Severity.HIGH, "missing error handling on open")
    f3 = finding("b.py", 3, Severity.MEDIUM, "magic number in timeout")
    f4 = finding("b.py", 9, Severity.LOW, "inconsistent naming of helper")
    f5 = finding("c.py", 2, Severity.INFO, "comment typo in header")
    run1 = fabricate_run(out, "o-n-full-1", ReviewMode.FULL, [f1, f2, f3, f4, f5], 10.0, 0.01)

    g1 = finding("d.py", 2, Severity.HIGH, "race condition on cache write")
    g2 = finding("d.py", 8, Severity.MEDIUM, "unbounded recursion risk")
    g3 = finding("e.py", 1, Severity.LOW, "dead code path in parser")
    g4 = finding("e.py", 7, Severity.INFO, "todo left in code")
    run2 = fabricate_run(out, "o-n-full-2", ReviewMode.FULL, [g1, g2, g3, g4], 20.0, 0.03)

    h1 = finding("f.py", 4, Severity.MEDIUM, "duplicate branch in switch")
    h2 = finding("f.py", 6, Severity.MEDIUM, "copied branch in switch body")
    h3 = finding("g.py", 1, Severity.LOW, "long function body")
    run3 = fabricate_run(
        out, "o-n-single_agent-3", ReviewMode.SINGLE_AGENT, [h1, h2, h3], 5.0, 0.005
    )

    rows = [
        # run_id, finding, valid, actionable, duplicate_of, annotator_severity, usefulness
        ("o-n-full-1", f1.id, "yes", "yes", "", "critical", "5"),
        ("o-n-full-1", f2.id, "yes", "yes", "", "high", "4"),
        ("o-n-full-1", f3.id, "no", "no", "", "low", "2"),
        ("o-n-full-1", f4.id, "unsure", "no", "", "", ""),
        ("o-n-full-1", f5.id, "yes", "no", f4.id, "info", "1"),
        ("o-n-full-2", g1.id, "yes", "yes", "", "medium", "4"),
        ("o-n-full-2", g2.id, "no", "no", "", "", "3"),
        ("o-n-full-2", g3.id, "yes", "yes", g1.id, "low", ""),
        ("o-n-full-2", g4.id, "unsure", "no", "", "", "1"),
        ("o-n-single_agent-3", h1.id, "yes", "yes", "", "medium", "3"),
        ("o-n-single_agent-3", h2.id, "yes", "no", h1.id, "", "2"),
        ("o-n-single_agent-3", h3.id, "no", "no", "", "high", ""),
    ]
    lines = [ANNOTATION_HEADER]
    for run_id, fid, valid, actionable, dup, sev, useful in rows:
        lines.append(f"{run_id},{fid},x,1,low,\"i\",\"s\",{valid},{actionable},{dup},{sev},{useful}")
    annotations = tmp_path / "annotations.csv"
    annotations.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return annotations, [run1, run2, run3], out


def test_aggregate_matches_hand_computed_values(metrics_fixture):
    annotations, records, _ = metrics_fixture
    table = aggregate(annotations, records)
    by_mode = {row.mode: row for row in table.rows}

    full = by_mode[ReviewMode.FULL]
    assert full.n_runs == 2 and full.n_findings == 9
    assert full.precision == 5 / 7
    assert full.actionable_rate == 4 / 9
    assert full.duplicate_rate == 2 / 9
    assert full.severity_agreement == 4 / 6
    assert full.top5_usefulness == (3.0 + 8 / 3) / 2
    assert full.mean_runtime_s == 15.0
    assert full.mean_cost_usd == 0.02

    single = by_mode[ReviewMode.SINGLE_AGENT]
    assert single.n_runs == 1 and single.n_findings == 3
    assert single.precision == 2 / 3
    assert single.actionable_rate == 1 / 3
    assert single.duplicate_rate == 1 / 3
    assert single.severity_agreement == 0.5
    assert single.top5_usefulness == 2.5
    assert single.mean_runtime_s == 5.0
    assert single.mean_cost_usd == 0.005


def test_aggregate_rejects_unknown_run(metrics_fixture):
    annotations, records, _ = metrics_fixture
    text = annotations.read_text()
    bad = annotations.parent / "bad.csv"
    bad.write_text(text.replace("o-n-full-2", "o-n-full-99", 1))
    with pytest.raises(AggregationError) as excinfo:
        aggregate(bad, records)
    assert "row 7" in str(excinfo.value)


def test_aggregate_rejects_malformed_cell(metrics_fixture):
    annotations, records, _ = metrics_fixture
    lines = annotations.read_text().splitlines()
    lines[3] = lines[3].replace(",no,no,", ",maybe,no,")
    bad = annotations.parent / "bad2.csv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(AggregationError) as excinfo:
        aggregate(bad, records)
    assert "row 4" in str(excinfo.value) and "valid" in str(excinfo.value)


def test_aggregate_rejects_empty_file(tmp_path, metrics_fixture):
    _, records, _ = metrics_fixture
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(AggregationError) as excinfo:
        aggregate(empty, records)
    assert "no rows" in str(excinfo.value)

    header_only = tmp_path / "header.csv"
    header_only.write_text(ANNOTATION_HEADER + "\n")
    with pytest.raises(AggregationError):
        aggregate(header_only, records)


def test_aggregate_determinism(metrics_fixture, tmp_path):
    annotations, records, _ = metrics_fixture
    table = aggregate(annotations, records)
    export_metrics(table, tmp_path / "m1", figure=False)
    export_metrics(aggregate(annotations, records), tmp_path / "m2", figure=False)
    for name in ("metrics.csv", "metrics.json", "metrics.tex"):
        assert (tmp_path / "m1" / name).read_bytes() == (tmp_path / "m2" / name).read_bytes()


def test_export_metrics_formats(metrics_fixture, tmp_path):
    annotations, records, _ = metrics_fixture
    table = aggregate(annotations, records)
    paths = export_metrics(table, tmp_path / "metrics", figure=True)

    csv_text = paths["csv"].read_text()
    lines = csv_text.splitlines()
    assert lines[0].startswith("mode,n_runs,n_findings,precision")
    full_line = next(l for l in lines if l.startswith("full,"))
    assert ",0.714," in full_line  # 5/7 rounded to 3 decimals
    assert ",0.444," in full_line
    assert full_line.endswith(",15.0,0.0200")

    json_rows = json.loads(paths["json"].read_text())
    assert json_rows[0]["mode"] == "full"
    assert json_rows[0]["precision"] == 5 / 7

    tex = paths["tex"].read_text()
    assert "\\toprule" in tex and "\\midrule" in tex and "\\bottomrule" in tex
    body = tex.split("\\midrule")[1].split("\\bottomrule")[0]
    data_rows = [l for l in body.strip().splitlines() if l.strip()]
    assert len(data_rows) == len(table.rows)
    assert "single\\_agent" in tex

    assert paths["png"].is_file() and paths["png"].stat().st_size > 0


def test_export_metrics_undefined_cells(tmp_path):
    records = [
        RunRecord(
            run_id="o-n-no_context-1",
            source=RepoSource(owner="o", name="n"),
            mode=ReviewMode.NO_CONTEXT,
            status="failed",
            failure="clone failed",
        )
    ]
    annotations = tmp_path / "ann.csv"
    annotations.write_text(ANNOTATION_HEADER + "\n")
    with pytest.raises(AggregationError):
        aggregate(annotations, records)


def test_export_metrics_renders_undefined_as_dashes(metrics_fixture, tmp_path):
    annotations, records, _ = metrics_fixture
    records = records + [
        RunRecord(
            run_id="o-n-no_context-9",
            source=RepoSource(owner="o", name="n"),
            mode=ReviewMode.NO_CONTEXT,
            status="failed",
            failure="x",
        )
    ]
    table = aggregate(annotations, records)
    paths = export_metrics(table, tmp_path / "m", figure=False)
    csv_lines = paths["csv"].read_text().splitlines()
    nc_line = next(l for l in csv_lines if l.startswith("no_context,"))
    assert "—" in nc_line
    tex = paths["tex"].read_text()
    nc_row = next(l for l in tex.splitlines() if l.startswith("no\\_context"))
    assert "--" in nc_row


def test_sheet_export_rows_and_quoting(tmp_path):
    out = tmp_path / "runs"
    tricky = finding(
        "a.py", 1, Severity.HIGH, 'breaks on "quotes", commas\nand newlines', "fix,\nplease"
    )
    plain = finding("a.py", 2, Severity.LOW, "simple issue")
    record = fabricate_run(out, "o-n-full-1", ReviewMode.FULL, [tricky, plain], 1.0, 0.0)
    sheet = export_annotation_sheet([record], tmp_path / "annotations.csv")

    text = sheet.read_text()
    assert text.splitlines()[0] == ANNOTATION_HEADER
    with sheet.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert rows[0]["issue"] == 'breaks on "quotes", commas\\nand newlines'
    assert rows[0]["suggestion"] == "fix,\\nplease"
    ids = {r["finding_id"] for r in rows}
    assert ids == {tricky.id, plain.id}


def test_sheet_export_requires_ok_runs(tmp_path):
    record = RunRecord(
        run_id="x", source=RepoSource(owner="o", name="n"), mode=ReviewMode.FULL,
        status="failed", failure="boom",
    )
    with pytest.raises(EvaluationError):
        export_annotation_sheet([record], tmp_path / "a.csv")


def test_parse_repos_file(tmp_path):
    path = tmp_path / "repos.txt"
    path.write_text(
        "# comment line\n"
        "https://github.com/a/b\n"
        "\n"
        "https://github.com/c/d#12\n"
    )
    sources = parse_repos_file(path)
    assert [(s.owner, s.name, s.pr_number) for s in sources] == [
        ("a", "b", None), ("c", "d", 12),
    ]


def test_parse_repos_file_bad_line(tmp_path):
    path = tmp_path / "repos.txt"
    path.write_text("https://github.com/a/b\nnot-a-url\n")
    with pytest.raises(EvaluationError) as excinfo:
        parse_repos_file(path)
    assert "line 2" in str(excinfo.value)


def _experiment_deps_factory(remote, provider):
    def factory(run_id: str, run_dir: Path) -> RunDeps:
        return RunDeps(
            gateway=provider,
            workspace_parent=run_dir / "ws",
            output_dir=run_dir,
            clock=fixed_clock(),
            model_id="stub-model",
            remote_override=file_url(remote),
        )

    return factory


def test_run_experiment_cross_product(tmp_path, mixed_remote):
    source = demo_source()
    stub = StubProvider()
    for mode in (ReviewMode.FULL, ReviewMode.SINGLE_AGENT):
        seed_stub_for_run(stub, source, mixed_remote, mode, tmp_path / f"seed-{mode.value}")
    out = tmp_path / "exp"
    records = run_experiment(
        [source], [ReviewMode.FULL, ReviewMode.SINGLE_AGENT],
        _experiment_deps_factory(mixed_remote, stub), out,
    )
    assert [r.status for r in records] == ["ok", "ok"]
    assert [r.run_id for r in records] == [
        "demo-project-full-1", "demo-project-single_agent-2",
    ]
    for record in records:
        run_dir = out / record.run_id
        assert (run_dir / "review.json").is_file()
        assert (run_dir / "review.md").is_file()
        events = (run_dir / "events.jsonl").read_text().splitlines()
        assert json.loads(events[0])["stage"] == "clone"
        assert json.loads(events[-1])["status"] == "completed"
    loaded = load_runs_index(out)
    assert [r.run_id for r in loaded] == [r.run_id for r in records]
    assert loaded[0].stats is not None


def test_run_experiment_isolates_failures(tmp_path, mixed_remote):
    ok_source = demo_source()
    bad_source = RepoSource(owner="x", name="gone", original_url=file_url(tmp_path / "nope"))
    stub = StubProvider()
    seed_stub_for_run(stub, ok_source, mixed_remote, ReviewMode.FULL, tmp_path / "seed")

    def factory(run_id: str, run_dir: Path) -> RunDeps:
        remote = file_url(mixed_remote) if run_id.startswith("demo-") else None
        return RunDeps(
            gateway=stub,
            workspace_parent=run_dir / "ws",
            output_dir=run_dir,
            clock=fixed_clock(),
            model_id="stub-model",
            remote_override=remote,
        )

    records = run_experiment(
        [ok_source, bad_source], [ReviewMode.FULL], factory, tmp_path / "exp"
    )
    assert [r.status for r in records] == ["ok", "failed"]
    assert records[1].failure
    failed_dir = tmp_path / "exp" / records[1].run_id
    assert (failed_dir / "events.jsonl").is_file()
    assert not (failed_dir / "review.json").exists()


def test_run_experiment_refuses_nonempty_out(tmp_path, mixed_remote):
    out = tmp_path / "exp"
    out.mkdir()
    (out / "stale.txt").write_text("old")
    with pytest.raises(EvaluationError):
        run_experiment([demo_source()], [ReviewMode.FULL], _experiment_deps_factory(mixed_remote, StubProvider()), out)
    records = run_experiment(
        [demo_source()], [ReviewMode.FULL],
        _experiment_deps_factory(mixed_remote, StubProvider()), out, force=True,
    )
    assert len(records) == 1


def test_run_experiment_parallel_matches_sequential(tmp_path, mixed_remote):
    source = demo_source()
    stub = StubProvider()
    for mode in (ReviewMode.FULL, ReviewMode.SINGLE_AGENT):
        seed_stub_for_run(stub, source, mixed_remote, mode, tmp_path / f"seed-{mode.value}")
    sequential = run_experiment(
        [source], [ReviewMode.FULL, ReviewMode.SINGLE_AGENT],
        _experiment_deps_factory(mixed_remote, stub), tmp_path / "seq",
    )
    parallel = run_experiment(
        [source], [ReviewMode.FULL, ReviewMode.SINGLE_AGENT],
        _experiment_deps_factory(mixed_remote, stub), tmp_path / "par", max_parallel=2,
    )
    assert [r.run_id for r in parallel] == [r.run_id for r in sequential]
    assert [r.status for r in parallel] == ["ok", "ok"]
    for seq_record, par_record in zip(sequential, parallel):
        seq_bytes = Path(seq_record.report_path).read_bytes()
        par_bytes = Path(par_record.report_path).read_bytes()
        assert seq_bytes == par_bytes
