"""Deterministic partition of a working tree into reviewable and skipped files.

Classification order is fixed: generated patterns, then config excludes,
then the size cap, then the NUL-byte binary sniff. Walks are sorted so two
runs over the same tree always produce identical output.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Union

from .model import SkipReason, SkippedFile

if TYPE_CHECKING:
    from .acquisition import Workspace

DEFAULT_MAX_FILE_BYTES = 200 * 1024
DEFAULT_MAX_FILES = 50
BINARY_SNIFF_BYTES = 8192


@dataclass(frozen=True)
class SelectionConfig:
    max_file_bytes: int = DEFAULT_MAX_FILE_BYTES
    max_files: int = DEFAULT_MAX_FILES
    extra_exclude_globs: tuple[str, ...] = ()
    include_only: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.max_file_bytes <= 0:
            raise ValueError("max_file_bytes must be > 0")
        if self.max_files <= 0:
            raise ValueError("max_files must be > 0")


@dataclass(frozen=True)
class FileEntry:
    """A selected file with its lossily-decoded text content."""

    path: str
    byte_len: int
    line_count: int
    content: str


@dataclass(frozen=True)
class RuleSet:
    """Built-in generated/vendored patterns: directory names, exact filenames, suffixes."""

    dirs: frozenset[str]
    filenames: frozenset[str]
    suffixes: tuple[str, ...]

    def matches(self, path: str) -> bool:
        parts = path.split("/")
        if any(p in self.dirs for p in parts[:-1]):
            return True
        base = parts[-1]
        if base in self.filenames:
            return True
        return any(base.endswith(s) for s in self.suffixes)


_DEFAULT_RULES = RuleSet(
    dirs=frozenset(
        {".git", "node_modules", "vendor", "dist", "build", "target", "__pycache__", ".venv"}
    ),
    filenames=frozenset(
        {"package-lock.json", "yarn.lock", "Cargo.lock", "poetry.lock", "go.sum"}
    ),
    suffixes=(".min.js", ".min.css", ".map", ".lock"),
)


def default_exclusion_rules() -> RuleSet:
    return _DEFAULT_RULES


def glob_to_regex(pattern: str) -> re.Pattern[str]:
    """Translate a glob into a regex: `**` crosses slashes, `*`/`?` do not.

    A pattern without any `/` matches the basename of a path.
    """
    out = []
    i = 0
    while i < len(pattern):
        ch = pattern[i]
        if ch == "*":
            if pattern[i : i + 2] == "**":
                out.append(".*")
                i += 2
                continue
            out.append("[^/]*")
        elif ch == "?":
            out.append("[^/]")
        elif ch == "[":
            j = i + 1
            if j < len(pattern) and pattern[j] == "!":
                j += 1
            if j < len(pattern) and pattern[j] == "]":
                j += 1
            while j < len(pattern) and pattern[j] != "]":
                j += 1
            if j >= len(pattern):
                out.append(re.escape("["))
            else:
                cls = pattern[i + 1 : j]
                if cls.startswith("!"):
                    cls = "^" + cls[1:]
                out.append(f"[{cls}]")
                i = j
        else:
            out.append(re.escape(ch))
        i += 1
    return re.compile("".join(out) + r"\Z")


def _glob_matches(pattern: str, path: str) -> bool:
    target = path if "/" in pattern else path.rsplit("/", 1)[-1]
    return glob_to_regex(pattern).match(target) is not None


def _pattern_skip_reason(path: str, config: SelectionConfig) -> SkipReason | None:
    if default_exclusion_rules().matches(path):
        return SkipReason.GENERATED
    if any(_glob_matches(g, path) for g in config.extra_exclude_globs):
        return SkipReason.EXCLUDED_BY_CONFIG
    if config.include_only is not None and not any(
        _glob_matches(g, path) for g in config.include_only
    ):
        return SkipReason.EXCLUDED_BY_CONFIG
    return None


def _classify_content(path: str, data: bytes, config: SelectionConfig) -> Union[FileEntry, SkippedFile]:
    if len(data) > config.max_file_bytes:
        return SkippedFile(path=path, reason=SkipReason.OVERSIZED)
    if b"\x00" in data[:BINARY_SNIFF_BYTES]:
        return SkippedFile(path=path, reason=SkipReason.BINARY)
    content = data.decode("utf-8", errors="replace")
    line_count = 0 if not content else 1 + content.count("\n")
    return FileEntry(path=path, byte_len=len(data), line_count=line_count, content=content)


def classify_file(path: str, data: bytes, config: SelectionConfig) -> Union[FileEntry, SkippedFile]:
    """Classify one candidate; returns a FileEntry or a SkippedFile, never raises."""
    reason = _pattern_skip_reason(path, config)
    if reason is not None:
        return SkippedFile(path=path, reason=reason)
    return _classify_content(path, data, config)


def _candidate_paths(root: Path) -> list[str]:
    paths: list[str] = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        dirnames.sort()
        for fname in filenames:
            full = Path(dirpath) / fname
            if full.is_symlink() or not full.is_file():
                continue
            paths.append(full.relative_to(root).as_posix())
    return paths


def walk_repository(
    ws: "Workspace", config: SelectionConfig
) -> tuple[list[FileEntry], list[SkippedFile]]:
    """Partition the workspace tree: every candidate lands in exactly one output list.

    Candidates are classified in byte-wise lexicographic path order; once
    `max_files` files have been selected the rest are skipped over_file_limit.
    In PR mode only the changed files are candidates.
    """
    root = Path(ws.root)
    candidates = _candidate_paths(root)
    if ws.pr_changed_files is not None:
        changed = set(ws.pr_changed_files)
        candidates = [p for p in candidates if p in changed]
    candidates.sort(key=lambda p: p.encode("utf-8"))

    selected: list[FileEntry] = []
    skipped: list[SkippedFile] = []
    for rel in candidates:
        if len(selected) >= config.max_files:
            skipped.append(SkippedFile(path=rel, reason=SkipReason.OVER_FILE_LIMIT))
            continue
        reason = _pattern_skip_reason(rel, config)
        if reason is not None:
            skipped.append(SkippedFile(path=rel, reason=reason))
            continue
        full = root / rel
        try:
            if full.stat().st_size > config.max_file_bytes:
                skipped.append(SkippedFile(path=rel, reason=SkipReason.OVERSIZED))
                continue
            data = full.read_bytes()
        except OSError:
            skipped.append(SkippedFile(path=rel, reason=SkipReason.UNREADABLE))
            continue
        outcome = _classify_content(rel, data, config)
        if isinstance(outcome, FileEntry):
            selected.append(outcome)
        else:
            skipped.append(outcome)
    return selected, skipped
