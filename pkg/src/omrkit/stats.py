"""Class-frequency statistics, cumulative coverage, and rare-class selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

from .errors import EmptyStats, ValidationError
from .model import Dataset


@dataclass(frozen=True)
class ClassStats:
    """Per-class annotation counts with a deterministic ranking.

    ``ranking`` sorts by descending count, ties broken by class name, with
    zero-count registry classes appended under the same rule.
    """

    counts: Mapping[str, int]
    total: int
    ranking: tuple[str, ...]

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]) -> "ClassStats":
        for name, count in counts.items():
            if count < 0:
                raise ValidationError(f"negative count for class {name!r}")
        ranking = tuple(sorted(counts, key=lambda name: (-counts[name], name)))
        return cls(dict(counts), sum(counts.values()), ranking)


def class_histogram(dataset: Dataset) -> ClassStats:
    """Count annotations per class over all pages; registry classes with
    no instances are kept at count zero."""
    counts = {name: 0 for name in dataset.class_registry}
    for ann in dataset.annotations():
        counts[ann.class_name] += 1
    return ClassStats.from_counts(counts)


def coverage_topk(stats: ClassStats, k: int) -> float:
    """Fraction of all annotations held by the ``k`` most frequent classes."""
    if k < 1:
        raise ValidationError("k must be a positive integer")
    if stats.total == 0:
        raise EmptyStats("no annotations to cover")
    if k >= len(stats.ranking):
        return 1.0
    head = sum(stats.counts[name] for name in stats.ranking[:k])
    return head / stats.total


def majority_dominates(stats: ClassStats) -> bool:
    """True when the most frequent class has more instances than all the
    other classes combined."""
    if stats.total == 0:
        raise EmptyStats("no annotations")
    top = stats.counts[stats.ranking[0]]
    return top > stats.total - top


def select_rare(
    stats: ClassStats, head_coverage: float, max_size: Optional[int] = None
) -> tuple[str, ...]:
    """Classes outside the minimal head that reaches ``head_coverage``.

    The head is the shortest ranking prefix whose cumulative share of the
    annotations is at least ``head_coverage``; everything after it,
    including zero-count registry classes, is rare. The result is ordered
    rarest first (ascending count, ties by name). ``max_size`` keeps only
    the rarest that many classes.
    """
    if not 0.0 < head_coverage < 1.0:
        raise ValidationError("head_coverage must be strictly between 0 and 1")
    if max_size is not None and max_size < 1:
        raise ValidationError("max_size must be a positive integer")
    if stats.total == 0:
        raise EmptyStats("no annotations")
    cumulative = 0
    prefix = len(stats.ranking)
    for index, name in enumerate(stats.ranking):
        cumulative += stats.counts[name]
        if cumulative / stats.total >= head_coverage:
            prefix = index + 1
            break
    tail = stats.ranking[prefix:]
    rare = tuple(sorted(tail, key=lambda name: (stats.counts[name], name)))
    if max_size is not None:
        rare = rare[:max_size]
    return rare
