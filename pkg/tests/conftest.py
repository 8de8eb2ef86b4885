from __future__ import annotations

import subprocess
from datetime import datetime, timezone
from pathlib import Path

import pytest

from reporeviewer.acquisition import Workspace, clone_repository, cleanup_workspace
from reporeviewer.context import (
    ContextBudget,
    assemble_context_summary,
    build_context_prompt,
    collect_context_inputs,
    render_tree,
)
from reporeviewer.gateway import StubProvider
from reporeviewer.model import RepoSource, ReviewMode
from reporeviewer.orchestrator import SINGLE_AGENT_BUDGET_FACTOR, FixedClock
from reporeviewer.priority import deduplicate, rank
from reporeviewer.review import (
    attach_snippet,
    build_review_prompt,
    build_single_agent_prompt,
    parse_findings,
)
from reporeviewer.selection import SelectionConfig, walk_repository
from reporeviewer.summary import build_summary_prompt

FIXED_NOW = datetime(2026, 8, 9, 12, 0, 0, tzinfo=timezone.utc)
FIXED_TIME_ISO = "2026-08-09T12:00:00+00:00"


def fixed_clock() -> FixedClock:
    return FixedClock(FIXED_NOW)


def run_git(args: list[str], cwd: Path | None = None) -> str:
    proc = subprocess.run(["git", *args], cwd=cwd, capture_output=True, text=True)
    assert proc.returncode == 0, f"git {' '.join(args)} failed: {proc.stderr}"
    return proc.stdout.strip()


def make_git_repo(root: Path, files: dict[str, bytes | str]) -> str:
    """Create a committed git repository at root; returns the head commit sha."""
    root.mkdir(parents=True, exist_ok=True)
    run_git(["init", "-q", "-b", "main", str(root)])
    for rel, content in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content, encoding="utf-8")
    run_git(["-C", str(root), "config", "user.email", "fixture@example.invalid"])
    run_git(["-C", str(root), "config", "user.name", "Fixture"])
    run_git(["-C", str(root), "add", "-A"])
    run_git(["-C", str(root), "commit", "-q", "-m", "fixture"])
    return run_git(["-C", str(root), "rev-parse", "HEAD"])


def file_url(path: Path) -> str:
    return f"file://{path.resolve()}"


HELLO_WORLD_FILES = {"README": "Hello World!\nThis is my first repository.\n"}

MIXED_FILES = {
    "README.md": "# Demo\nA small demo project used in tests.\n",
    "pyproject.toml": "[project]\nname = 'demo'\nversion = '0.1.0'\n",
    "src/app.py": "import os\n\n\ndef main():\n    password = 'hunter2'\n    os.system('echo ' + password)\n    return 0\n",
    "src/util.py": "def add(a, b):\n    return a + b\n",
    "assets/logo.png": b"\x89PNG\x00\x1a\nnot really a png",
    "node_modules/left-pad/index.js": "module.exports = (s) => s;\n",
}


@pytest.fixture(scope="session")
def hello_world_remote(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("hello-world-remote") / "repo"
    make_git_repo(root, HELLO_WORLD_FILES)
    return root


@pytest.fixture(scope="session")
def mixed_remote(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("mixed-remote") / "repo"
    make_git_repo(root, MIXED_FILES)
    return root


def hello_world_source() -> RepoSource:
    return RepoSource(
        owner="octocat",
        name="Hello-World",
        original_url="https://github.com/octocat/Hello-World",
    )


def demo_source() -> RepoSource:
    return RepoSource(owner="demo", name="project", original_url="https://github.com/demo/project")


REVIEW_JSON_BY_PATH = {
    "README": '[{"line": 1, "severity": "low", "issue": "README lacks a project description", '
    '"suggestion": "Describe what the project does."}]',
    "README.md": '[{"line": 2, "severity": "info", "issue": "README could list usage examples", '
    '"suggestion": "Add a usage section."}]',
    "pyproject.toml": "[]",
    "src/app.py": '[{"line": 5, "severity": "critical", "issue": "Hardcoded credential in source", '
    '"suggestion": "Load secrets from the environment."}, '
    '{"line": 6, "severity": "high", "issue": "Shell command built from untrusted string", '
    '"suggestion": "Use subprocess with an argument list."}]',
    "src/util.py": '[{"line": 1, "severity": "info", "issue": "Function lacks type annotations", '
    '"suggestion": "Annotate the parameters."}]',
}

CONTEXT_TEXT = "A small demo project with one application module and a helper."
SUMMARY_TEXT = "Overall solid; fix the credential handling first."
SINGLE_AGENT_TEXT = (
    '{"findings": [{"file": "README", "line": 1, "severity": "low", '
    '"issue": "README lacks a project description", "suggestion": ""}], '
    '"summary": "Single-pass review: minor documentation gaps."}'
)


def seed_stub_for_run(
    stub: StubProvider,
    source: RepoSource,
    remote: Path,
    mode: ReviewMode,
    tmp_dir: Path,
    selection: SelectionConfig | None = None,
    budget: ContextBudget | None = None,
    model_id: str = "stub-model",
    review_json_by_path: dict[str, str] | None = None,
    context_text: str = CONTEXT_TEXT,
    summary_text: str = SUMMARY_TEXT,
    single_agent_text: str = SINGLE_AGENT_TEXT,
) -> None:
    """Register canned responses for every prompt a run over `remote` will make.

    Mirrors the orchestrator's stage flow using the same prompt builders, so
    the registered keys match the real run exactly.
    """
    selection = selection or SelectionConfig()
    budget = budget or ContextBudget()
    reviews = review_json_by_path if review_json_by_path is not None else REVIEW_JSON_BY_PATH

    ws = clone_repository(source, tmp_dir, None, job_id="seed", remote_override=file_url(remote))
    try:
        selected, skipped = walk_repository(ws, selection)

        if mode is ReviewMode.SINGLE_AGENT:
            tree_text = render_tree(selected, skipped, budget)
            messages, _ = build_single_agent_prompt(
                tree_text, selected, budget.total_chars * SINGLE_AGENT_BUDGET_FACTOR
            )
            stub.add_response(messages, single_agent_text)
            return

        context = None
        if mode in (ReviewMode.FULL, ReviewMode.NO_PRIORITY):
            inputs = collect_context_inputs(ws, selected, budget, skipped)
            stub.add_response(build_context_prompt(inputs), context_text)
            context = assemble_context_summary(inputs, context_text)

        findings = []
        for entry in selected:
            text = reviews.get(entry.path, "[]")
            stub.add_response(build_review_prompt(entry, context), text)
            parsed = parse_findings(text, entry)
            findings.extend(attach_snippet(c, entry) for c in parsed.comments)

        if mode in (ReviewMode.FULL, ReviewMode.NO_CONTEXT):
            kept, _ = deduplicate(findings)
            findings = rank(kept)
        stub.add_response(build_summary_prompt(findings, skipped, context), summary_text)
    finally:
        cleanup_workspace(ws)


def read_workspace(source: RepoSource, remote: Path, tmp_dir: Path) -> Workspace:
    return clone_repository(source, tmp_dir, None, job_id="probe", remote_override=file_url(remote))


# --- independent dedup oracle -------------------------------------------------
# Brute-force reimplementation of the duplicate predicate (Fraction arithmetic)
# and the greedy survival rule, kept separate from the production code path.

from fractions import Fraction

from reporeviewer.model import ReviewComment, Severity, comment_id, normalize_issue


def oracle_is_dup(a: ReviewComment, b: ReviewComment) -> bool:
    if a.file != b.file:
        return False
    na = normalize_issue(a.issue)
    nb = normalize_issue(b.issue)
    if na == nb:
        return True
    ta = frozenset(na.split())
    tb = frozenset(nb.split())
    if not (ta | tb):
        return False
    jaccard = Fraction(len(ta & tb), len(ta | tb))
    return jaccard >= Fraction(4, 5) and abs(a.line - b.line) <= 3


def oracle_wins(challenger: ReviewComment, incumbent: ReviewComment) -> bool:
    order = [Severity.CRITICAL, Severity.HIGH, Severity.MEDIUM, Severity.LOW, Severity.INFO]
    ci, ii = order.index(challenger.severity), order.index(incumbent.severity)
    if ci != ii:
        return ci < ii
    return challenger.line < incumbent.line


def oracle_deduplicate(comments: list[ReviewComment]) -> list[ReviewComment]:
    kept: list[ReviewComment] = []
    for c in comments:
        clash_index = None
        for i, k in enumerate(kept):
            if oracle_is_dup(k, c):
                clash_index = i
                break
        if clash_index is None:
            kept.append(c)
            continue
        if oracle_wins(c, kept[clash_index]):
            survivors = []
            for i, k in enumerate(kept):
                if i == clash_index:
                    survivors.append(c)
                elif not oracle_is_dup(k, c):
                    survivors.append(k)
            kept = survivors
    return kept


def fingerprints(comments) -> set[tuple[str, str]]:
    return {(c.file, normalize_issue(c.issue)) for c in comments}


def make_comment(file: str, line: int, severity: Severity, issue: str) -> ReviewComment:
    return ReviewComment(
        id=comment_id(file, line, issue), file=file, line=line, severity=severity, issue=issue
    )


# --- acceptance reporting ------------------------------------------------------


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(num, title): acceptance criterion checked by this test"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    num, title = marker.args
    status = "PASS" if report.passed else "FAIL"
    writer = item.config.pluginmanager.get_plugin("terminalreporter")
    if writer is not None:
        writer.write_line(f"[ACCEPTANCE] criterion {num}: {status} — {title}")
