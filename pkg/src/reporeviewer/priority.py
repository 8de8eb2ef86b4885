"""Deterministic finding deduplication and severity ranking.

No model call happens here: duplicates are detected by normalized-issue
fingerprints with a fuzzy token-overlap fallback, and ranking is a stable
sort on severity with a fixed tie-break.
"""

from __future__ import annotations

from .model import ReviewComment, normalize_issue, severity_rank

__all__ = ["normalize_issue", "deduplicate", "rank", "top_k", "is_duplicate"]

# Fuzzy duplicates: token-set Jaccard >= 0.8 and lines within 3 of each other.
JACCARD_NUM = 4
JACCARD_DEN = 5
LINE_PROXIMITY = 3


def is_duplicate(a: ReviewComment, b: ReviewComment) -> bool:
    """Same file and either identical normalized issues or near-identical wording nearby."""
    if a.file != b.file:
        return False
    na, nb = normalize_issue(a.issue), normalize_issue(b.issue)
    if na == nb:
        return True
    ta, tb = set(na.split()) if na else set(), set(nb.split()) if nb else set()
    union = ta | tb
    if not union:
        return False
    inter = ta & tb
    # len(inter)/len(union) >= 4/5 without float round-off.
    if len(inter) * JACCARD_DEN < len(union) * JACCARD_NUM:
        return False
    return abs(a.line - b.line) <= LINE_PROXIMITY


def _beats(challenger: ReviewComment, incumbent: ReviewComment) -> bool:
    """Duplicate resolution: higher severity wins, then lower line; full tie keeps the incumbent."""
    cr, ir = severity_rank(challenger.severity), severity_rank(incumbent.severity)
    if cr != ir:
        return cr < ir
    return challenger.line < incumbent.line


def deduplicate(comments: list[ReviewComment]) -> tuple[list[ReviewComment], int]:
    """Greedy dedup against already-kept comments in input order.

    Returns (kept, removed_count). The kept list is pairwise non-duplicate,
    which makes the operation idempotent.
    """
    kept: list[ReviewComment] = []
    for c in comments:
        clash = next((i for i, k in enumerate(kept) if is_duplicate(k, c)), None)
        if clash is None:
            kept.append(c)
        elif _beats(c, kept[clash]):
            kept[clash] = c
            # The replacement may now duplicate other survivors; merge those too.
            kept = [k for i, k in enumerate(kept) if i == clash or not is_duplicate(k, c)]
    return kept, len(comments) - len(kept)


def rank(comments: list[ReviewComment]) -> list[ReviewComment]:
    """Sort non-increasing by severity; ties broken by (file, line, id) ascending."""
    return sorted(comments, key=lambda c: (severity_rank(c.severity), c.file, c.line, c.id))


def top_k(ranked: list[ReviewComment], k: int) -> list[ReviewComment]:
    if k < 0:
        raise ValueError("k must be >= 0")
    return list(ranked[:k])
