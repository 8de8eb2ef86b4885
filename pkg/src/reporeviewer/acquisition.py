"""Clone the target repository and, for pull requests, check out the PR head.

Whole-repo mode does a shallow clone of the default branch. PR mode asks the
hosting API for the head sha and changed-file list first, then fetches and
checks out that exact commit so the reviewed content matches the change set.
"""

from __future__ import annotations

import logging
import os
import re
import shutil
import subprocess
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from .model import RepoSource

logger = logging.getLogger(__name__)

ENV_GITHUB_TOKEN = "GITHUB_TOKEN"
GITHUB_API_BASE = "https://api.github.com"
_SHA_RE = re.compile(r"^[0-9a-f]{40}$")


class AcquisitionError(Exception):
    """Base for clone-stage failures; the message is surfaced verbatim in progress events."""


class PrNotFoundError(AcquisitionError):
    pass


class GithubRateLimitedError(AcquisitionError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class GithubAuthError(AcquisitionError):
    pass


class GithubNetworkError(AcquisitionError):
    pass


class CloneError(AcquisitionError):
    pass


class CheckoutError(AcquisitionError):
    pass


@dataclass(frozen=True)
class PrMetadata:
    number: int
    head_ref: str
    head_sha: str
    # None when the files sub-resource was unretrievable; selection then
    # falls back to the full repository.
    changed_files: tuple[str, ...] | None

    def __post_init__(self) -> None:
        if not _SHA_RE.match(self.head_sha):
            raise ValueError(f"head_sha must be 40 lowercase hex chars, got {self.head_sha!r}")


@dataclass(frozen=True)
class Workspace:
    root: Path
    head_commit: str
    source: RepoSource
    pr_changed_files: tuple[str, ...] | None = None


class GithubClient(Protocol):
    def get_pull(self, owner: str, name: str, number: int) -> PrMetadata: ...


class HttpGithubClient:
    """REST client for pull-request metadata; GITHUB_TOKEN is sent as a bearer when set."""

    def __init__(self, token: str | None = None, base_url: str = GITHUB_API_BASE,
                 client: httpx.Client | None = None):
        self._token = token if token is not None else os.environ.get(ENV_GITHUB_TOKEN, "")
        self._base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=30.0)

    def _headers(self) -> dict[str, str]:
        headers = {"Accept": "application/vnd.github+json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        return headers

    def _get(self, path: str, params: dict | None = None) -> httpx.Response:
        try:
            resp = self._client.get(f"{self._base_url}{path}", params=params, headers=self._headers())
        except httpx.HTTPError as exc:
            raise GithubNetworkError(f"GitHub API network failure: {exc}") from exc
        if resp.status_code == 404:
            raise PrNotFoundError(f"not found: {path}")
        if resp.status_code in (403, 429) and resp.headers.get("x-ratelimit-remaining") == "0":
            retry_after = None
            header = resp.headers.get("retry-after")
            if header is not None:
                try:
                    retry_after = float(header)
                except ValueError:
                    retry_after = None
            raise GithubRateLimitedError("GitHub API rate limited", retry_after)
        if resp.status_code in (401, 403):
            raise GithubAuthError(f"GitHub API auth failure (HTTP {resp.status_code})")
        if resp.status_code != 200:
            raise GithubNetworkError(f"GitHub API unexpected status {resp.status_code} for {path}")
        return resp

    def get_pull(self, owner: str, name: str, number: int) -> PrMetadata:
        pull = self._get(f"/repos/{owner}/{name}/pulls/{number}").json()
        changed_files: tuple[str, ...] | None
        try:
            changed: list[str] = []
            page = 1
            while True:
                batch = self._get(
                    f"/repos/{owner}/{name}/pulls/{number}/files",
                    params={"per_page": 100, "page": page},
                ).json()
                changed.extend(item["filename"] for item in batch)
                if len(batch) < 100:
                    break
                page += 1
            changed_files = tuple(changed)
        except AcquisitionError as exc:
            # The head sha is what the clone needs; an unretrievable file list
            # only widens selection back to the whole repository.
            logger.warning("PR file list unretrievable for %s/%s#%s: %s", owner, name, number, exc)
            changed_files = None
        return PrMetadata(
            number=number,
            head_ref=pull["head"]["ref"],
            head_sha=pull["head"]["sha"].lower(),
            changed_files=changed_files,
        )


class StubGithubClient:
    """Canned PR metadata for tests; raises the configured error instead when set."""

    def __init__(self, metadata: PrMetadata | None = None, error: Exception | None = None):
        self._metadata = metadata
        self._error = error
        self.calls: list[tuple[str, str, int]] = []

    def get_pull(self, owner: str, name: str, number: int) -> PrMetadata:
        self.calls.append((owner, name, number))
        if self._error is not None:
            raise self._error
        if self._metadata is None:
            raise PrNotFoundError(f"no stubbed pull for {owner}/{name}#{number}")
        return self._metadata


def fetch_pr_metadata(source: RepoSource, github: GithubClient) -> PrMetadata:
    """Resolve the PR head ref/sha and changed-file list via the hosting API."""
    if source.pr_number is None or source.pr_number < 1:
        raise ValueError(f"pr_number must be a positive integer, got {source.pr_number!r}")
    try:
        return github.get_pull(source.owner, source.name, source.pr_number)
    except PrNotFoundError:
        raise PrNotFoundError(
            f"pull request {source.owner}/{source.name}#{source.pr_number} not found"
        ) from None


def _run_git(args: list[str], cwd: Path | None = None) -> subprocess.CompletedProcess:
    return subprocess.run(
        ["git", *args],
        cwd=cwd,
        capture_output=True,
        text=True,
        env={**os.environ, "GIT_TERMINAL_PROMPT": "0"},
    )


def _head_commit(root: Path) -> str:
    proc = _run_git(["rev-parse", "HEAD"], cwd=root)
    if proc.returncode != 0:
        raise CloneError(f"cannot resolve HEAD in {root}: {proc.stderr.strip()}")
    return proc.stdout.strip()


def clone_repository(
    source: RepoSource,
    dest_parent: Path,
    github: GithubClient | None = None,
    *,
    job_id: str | None = None,
    remote_override: str | None = None,
) -> Workspace:
    """Clone into a fresh unique subdirectory of dest_parent and return the Workspace.

    Whole-repo mode is a depth-1 clone of the default branch. PR mode fetches
    PR metadata, then fetches and checks out the head sha. `remote_override`
    substitutes the git remote actually cloned (local mirrors, test fixtures).
    """
    remote = remote_override or source.original_url or source.canonical_url()
    suffix = job_id or uuid.uuid4().hex[:12]
    root = Path(dest_parent) / f"{source.owner}-{source.name}-{suffix}"
    if root.exists():
        raise CloneError(f"workspace directory already exists: {root}")

    if source.pr_number is None:
        proc = _run_git(["clone", "--depth", "1", remote, str(root)])
        if proc.returncode != 0:
            _remove_quietly(root)
            raise CloneError(f"clone failed for {remote}: {proc.stderr.strip()}")
        return Workspace(root=root, head_commit=_head_commit(root), source=source)

    if github is None:
        raise ValueError("PR mode requires a GithubClient")
    metadata = fetch_pr_metadata(source, github)
    proc = _run_git(["clone", remote, str(root)])
    if proc.returncode != 0:
        _remove_quietly(root)
        raise CloneError(f"clone failed for {remote}: {proc.stderr.strip()}")
    _checkout_pr_head(root, metadata)
    return Workspace(
        root=root,
        head_commit=metadata.head_sha,
        source=source,
        pr_changed_files=metadata.changed_files,
    )


def _checkout_pr_head(root: Path, metadata: PrMetadata) -> None:
    sha = metadata.head_sha
    if _run_git(["checkout", "--detach", sha], cwd=root).returncode == 0:
        return
    # Head sha not in the clone (e.g. fork PR): try a direct sha fetch, then the PR ref.
    for fetch_args in (["fetch", "origin", sha], ["fetch", "origin", f"pull/{metadata.number}/head"]):
        if _run_git(fetch_args, cwd=root).returncode != 0:
            continue
        if _run_git(["checkout", "--detach", sha], cwd=root).returncode == 0:
            return
    raise CheckoutError(f"cannot fetch or check out PR head {sha}")


def _remove_quietly(root: Path) -> None:
    shutil.rmtree(root, ignore_errors=True)


def cleanup_workspace(ws: Workspace, keep: bool = False) -> None:
    """Delete the workspace tree unless asked to keep it; idempotent and never fatal."""
    if keep:
        logger.info("keeping workspace at %s", ws.root)
        return
    if not ws.root.exists():
        return
    try:
        shutil.rmtree(ws.root)
    except OSError as exc:
        logger.warning("workspace cleanup failed for %s: %s", ws.root, exc)
