"""Repository context collection and one-call synthesis.

Collects a rendered directory tree, README content, and key-file previews
under strict character budgets, then asks the model for a project summary.
Provider failure degrades to a deterministic fallback instead of failing
the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

from .gateway import GatewayError, ModelRequest, ModelResponse, Provider
from .model import ContextSummary, SkipReason, SkippedFile, TRUNCATION_MARKER
from .selection import FileEntry

if TYPE_CHECKING:
    from .acquisition import Workspace

README_CANDIDATES = ("readme.md", "readme", "readme.rst", "readme.txt")
MANIFEST_NAMES = (
    "package.json",
    "pyproject.toml",
    "Cargo.toml",
    "go.mod",
    "Makefile",
    "Dockerfile",
    "CMakeLists.txt",
)

CONTEXT_SYSTEM_PROMPT = (
    "You are a senior software engineer preparing to review an unfamiliar repository. "
    "Write a plain-text summary of the project's purpose, architecture, and notable "
    "conventions. Be concrete and concise; do not invent details."
)

FALLBACK_PREFIX = "Context unavailable; structure:"

# Room for fitting at least a short preview after its header line.
_MIN_PREVIEW_CHARS = 24


@dataclass(frozen=True)
class ContextBudget:
    total_chars: int = 24000
    tree_chars: int = 4000
    readme_chars: int = 8000
    preview_chars: int = 12000
    per_preview_chars: int = 2000

    def __post_init__(self) -> None:
        if self.tree_chars + self.readme_chars + self.preview_chars != self.total_chars:
            raise ValueError("tree_chars + readme_chars + preview_chars must equal total_chars")
        if min(self.tree_chars, self.readme_chars, self.preview_chars, self.per_preview_chars) <= 0:
            raise ValueError("all budget fields must be positive")


@dataclass(frozen=True)
class ContextInputs:
    tree_text: str
    readme_text: str
    previews: tuple[tuple[str, str], ...]  # (path, excerpt)
    budget: ContextBudget

    def __post_init__(self) -> None:
        total = len(self.tree_text) + len(self.readme_text) + sum(
            len(excerpt) for _, excerpt in self.previews
        )
        if total > self.budget.total_chars:
            raise ValueError(f"context inputs exceed budget: {total} > {self.budget.total_chars}")

    @property
    def truncated(self) -> bool:
        return self.tree_text.endswith(TRUNCATION_MARKER) or self.readme_text.endswith(
            TRUNCATION_MARKER
        )


@dataclass(frozen=True)
class ContextResult:
    summary: ContextSummary
    response: ModelResponse | None
    degraded: bool


def truncate_text(text: str, limit: int) -> str:
    """Cut to `limit` chars, ending with the truncation marker when anything was cut."""
    if len(text) <= limit:
        return text
    keep = max(limit - len(TRUNCATION_MARKER), 0)
    return text[:keep] + TRUNCATION_MARKER


def skip_tally(skipped: list[SkippedFile]) -> list[str]:
    """One `skipped {reason}: {count}` line per reason, in the fixed enum order."""
    counts = {reason: 0 for reason in SkipReason}
    for s in skipped:
        counts[s.reason] += 1
    return [f"skipped {reason.value}: {count}" for reason, count in counts.items()]


def render_tree(
    selected: list[FileEntry], skipped: list[SkippedFile], budget: ContextBudget
) -> str:
    """Indented tree of selected paths plus the skip tally, truncated at tree_chars."""
    tree: dict = {}
    for entry in selected:
        node = tree
        parts = entry.path.split("/")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = None

    lines: list[str] = []

    def emit(node: dict, depth: int) -> None:
        for name in sorted(node):
            child = node[name]
            if child is None:
                lines.append("  " * depth + name)
            else:
                lines.append("  " * depth + name + "/")
                emit(child, depth + 1)

    emit(tree, 0)
    body = "".join(line + "\n" for line in lines)
    body += "\n".join(skip_tally(skipped)) + "\n"
    return truncate_text(body, budget.tree_chars)


def _find_readme(root: Path) -> Path | None:
    try:
        entries = sorted(p for p in root.iterdir() if p.is_file() and not p.is_symlink())
    except OSError:
        return None
    for candidate in README_CANDIDATES:
        for p in entries:
            if p.name.lower() == candidate:
                return p
    return None


def collect_context_inputs(
    ws: "Workspace", selected: list[FileEntry], budget: ContextBudget,
    skipped: list[SkippedFile] | None = None,
) -> ContextInputs:
    """Pure function of workspace content and budget: tree, README, key-file previews.

    Previews are root manifests first, then the largest selected files by
    line count, until the preview budget is exhausted. The README is never
    also a preview. Preview header lines are charged against the budget so
    the assembled prompt stays within total_chars plus template overhead.
    """
    tree_text = render_tree(selected, skipped or [], budget)

    readme_path = _find_readme(Path(ws.root))
    readme_text = ""
    readme_rel = None
    if readme_path is not None:
        readme_rel = readme_path.name
        try:
            raw = readme_path.read_bytes().decode("utf-8", errors="replace")
        except OSError:
            raw = ""
        readme_text = truncate_text(raw, budget.readme_chars)

    by_path = {entry.path: entry for entry in selected}
    ordered: list[FileEntry] = []
    seen: set[str] = set()
    for name in MANIFEST_NAMES:
        entry = by_path.get(name)
        if entry is not None and entry.path != readme_rel:
            ordered.append(entry)
            seen.add(entry.path)
    rest = [
        e for e in selected
        if e.path not in seen and e.path != readme_rel
    ]
    rest.sort(key=lambda e: (-e.line_count, e.path))
    ordered.extend(rest)

    previews: list[tuple[str, str]] = []
    remaining = budget.preview_chars
    for entry in ordered:
        header_cost = len(f"--- {entry.path} ---\n")
        if remaining - header_cost < _MIN_PREVIEW_CHARS:
            break
        limit = min(budget.per_preview_chars, remaining - header_cost)
        excerpt = truncate_text(entry.content, limit)
        previews.append((entry.path, excerpt))
        remaining -= header_cost + len(excerpt)

    return ContextInputs(
        tree_text=tree_text,
        readme_text=readme_text,
        previews=tuple(previews),
        budget=budget,
    )


def build_context_prompt(inputs: ContextInputs) -> tuple[tuple[str, str], ...]:
    sections = ["REPOSITORY STRUCTURE:", inputs.tree_text.rstrip("\n"), ""]
    sections.append("README:")
    sections.append(inputs.readme_text if inputs.readme_text else "(no README found)")
    sections.append("")
    sections.append("KEY FILE PREVIEWS:")
    if inputs.previews:
        for path, excerpt in inputs.previews:
            sections.append(f"--- {path} ---")
            sections.append(excerpt)
    else:
        sections.append("(none)")
    sections.append("")
    sections.append(
        "Summarize this project's purpose, architecture, and notable conventions."
    )
    return (("system", CONTEXT_SYSTEM_PROMPT), ("user", "\n".join(sections)))


def fallback_context_text(inputs: ContextInputs) -> str:
    """Deterministic summary used when the provider is unavailable."""
    tally_start = inputs.tree_text
    lines = [FALLBACK_PREFIX, tally_start.rstrip("\n")]
    first_readme_line = inputs.readme_text.splitlines()[0] if inputs.readme_text else ""
    if first_readme_line:
        lines.append(f"README: {first_readme_line}")
    return "\n".join(lines)


def assemble_context_summary(inputs: ContextInputs, text: str) -> ContextSummary:
    return ContextSummary(
        text=text,
        tree_excerpt=inputs.tree_text,
        readme_excerpt=inputs.readme_text,
        preview_paths=tuple(path for path, _ in inputs.previews),
        truncated=inputs.truncated,
    )


def synthesize_context(
    inputs: ContextInputs, gateway: Provider, model_id: str, max_output_tokens: int = 1024
) -> ContextResult:
    """One model call; on provider failure returns the deterministic fallback summary."""
    request = ModelRequest(
        model_id=model_id,
        messages=build_context_prompt(inputs),
        max_output_tokens=max_output_tokens,
    )
    try:
        response = gateway.complete(request)
    except GatewayError:
        summary = assemble_context_summary(inputs, fallback_context_text(inputs))
        return ContextResult(summary=summary, response=None, degraded=True)
    return ContextResult(
        summary=assemble_context_summary(inputs, response.text),
        response=response,
        degraded=False,
    )
