"""Class-frequency statistics and rare-class selection."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from omrkit.errors import EmptyStats, ValidationError
from omrkit.model import Dataset
from omrkit.stats import (
    ClassStats,
    class_histogram,
    coverage_topk,
    majority_dominates,
    select_rare,
)

from conftest import ann, dataset_with, page_with


def stats_from(counts):
    return ClassStats.from_counts(counts)


class TestHistogram:
    def test_empty_dataset(self):
        stats = class_histogram(Dataset((), ("a", "b")))
        assert stats.total == 0
        assert stats.counts == {"a": 0, "b": 0}

    def test_counts_across_pages(self):
        pages = [
            page_with([ann("a", 0, 0, 1, 1), ann("a", 2, 0, 3, 1), ann("b", 4, 0, 5, 1)], "p1"),
            page_with([ann("a", 0, 0, 1, 1)], "p2"),
            page_with([ann("c", 0, 0, 1, 1)], "p3"),
        ]
        stats = class_histogram(dataset_with(pages))
        assert stats.counts == {"a": 3, "b": 1, "c": 1}
        assert stats.total == 5

    def test_majority_class_ranks_first(self):
        stats = stats_from({"big": 51, "x": 25, "y": 24})
        assert stats.ranking[0] == "big"

    def test_order_invariance(self):
        pages = [
            page_with([ann("a", 0, 0, 1, 1), ann("b", 2, 0, 3, 1)], "p1"),
            page_with([ann("c", 0, 0, 1, 1)], "p2"),
        ]
        forward = class_histogram(dataset_with(pages))
        backward = class_histogram(dataset_with(list(reversed(pages))))
        assert forward.counts == backward.counts
        assert forward.ranking == backward.ranking

    def test_zero_count_classes_appended(self):
        stats = class_histogram(
            dataset_with([page_with([ann("b", 0, 0, 1, 1)], "p")], registry=("a", "b", "z"))
        )
        assert stats.ranking == ("b", "a", "z")


class TestCoverage:
    def test_direct(self):
        assert coverage_topk(stats_from({"a": 90, "b": 5, "c": 5}), 1) == pytest.approx(0.9)

    def test_k_at_least_class_count(self):
        assert coverage_topk(stats_from({"a": 1, "b": 2}), 5) == 1.0

    def test_uniform(self):
        stats = stats_from({f"c{i:02d}": 7 for i in range(20)})
        assert coverage_topk(stats, 10) == pytest.approx(0.5)

    def test_monotone_and_reaches_one(self):
        stats = stats_from({"a": 5, "b": 3, "c": 2, "d": 1})
        values = [coverage_topk(stats, k) for k in range(1, 6)]
        assert values == sorted(values)
        assert values[-1] == 1.0

    def test_empty(self):
        with pytest.raises(EmptyStats):
            coverage_topk(stats_from({"a": 0}), 1)


class TestMajority:
    def test_true_case(self):
        assert majority_dominates(stats_from({"a": 51, "b": 30, "c": 19})) is True

    def test_tie_is_not_more_than(self):
        assert majority_dominates(stats_from({"a": 50, "b": 50})) is False

    def test_single_class(self):
        assert majority_dominates(stats_from({"a": 7})) is True

    def test_empty(self):
        with pytest.raises(EmptyStats):
            majority_dominates(stats_from({}))


class TestSelectRare:
    def test_head_prefix(self):
        rare = select_rare(stats_from({"a": 85, "b": 10, "c": 5}), 0.85)
        assert set(rare) == {"b", "c"}
        assert rare == ("c", "b")  # rarest first

    def test_all_equal_needs_all_but_one(self):
        stats = stats_from({f"c{i:02d}": 4 for i in range(20)})
        rare = select_rare(stats, (20 - 1) / 20 - 1e-9)
        assert rare == (stats.ranking[-1],)

    def test_zero_count_registry_class_is_rare(self):
        dataset = dataset_with([page_with([ann("a", 0, 0, 1, 1)], "p")], registry=("a", "b"))
        assert select_rare(class_histogram(dataset), 0.9) == ("b",)

    def test_max_size_keeps_rarest(self):
        stats = stats_from({"a": 80, "b": 10, "c": 6, "d": 4})
        assert select_rare(stats, 0.5, max_size=1) == ("d",)

    def test_bad_threshold(self):
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValidationError):
                select_rare(stats_from({"a": 1}), bad)


@given(
    counts=st.dictionaries(
        st.sampled_from([f"k{i}" for i in range(8)]), st.integers(0, 40), min_size=1
    ),
    h1=st.floats(0.05, 0.95),
    h2=st.floats(0.05, 0.95),
)
def test_select_rare_monotone_in_coverage(counts, h1, h2):
    if sum(counts.values()) == 0:
        return
    stats = ClassStats.from_counts(counts)
    low, high = min(h1, h2), max(h1, h2)
    assert set(select_rare(stats, low)) >= set(select_rare(stats, high))
