"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from omrkit.model import Annotation, BBox, Dataset, Page


def ann(class_name, x0, y0, x1, y1, **kwargs):
    return Annotation(class_name, BBox(float(x0), float(y0), float(x1), float(y1)), **kwargs)


def page_with(annotations, page_id="p0", width=400, height=400, image_path=None):
    return Page(page_id, width, height, image_path, tuple(annotations))


def dataset_with(pages, registry=None):
    if registry is None:
        names = sorted({a.class_name for p in pages for a in p.annotations})
        registry = tuple(names)
    return Dataset(tuple(pages), tuple(registry))


def packed_bias_page(n_each=36, width=900):
    """Dense mixed-size page for the smoothing-bias diagnostic.

    Two zones: measured small (8 px) and mid (14 px) glyphs at 3 px gaps,
    and measured big (20 px) glyphs walled by 2 px bars at 1 px gaps. The
    size bias needs different sizes within the filter's reach, and the
    thin bars are sacrificial: their detections inflate past the 0.3
    matching IoU, so exactly the 3 * n_each measured glyphs match and the
    three equal-population size bins are pure.
    """
    annotations = []

    def add(name, x, y, w, h):
        annotations.append(
            Annotation(name, BBox(float(x), float(y), float(x + w), float(y + h)))
        )

    y = 40
    placed_small = placed_mid = 0
    while placed_small < n_each or placed_mid < n_each:
        x = 20
        while x < width - 40 and (placed_small < n_each or placed_mid < n_each):
            if placed_small <= placed_mid and placed_small < n_each:
                add("small", x, y + 3, 8, 8)
                x += 11
                placed_small += 1
            elif placed_mid < n_each:
                add("mid", x, y, 14, 14)
                x += 17
                placed_mid += 1
        y += 26

    y += 50
    big, bar, gap = 20, 2, 1
    pitch = big + gap + bar + gap
    placed_big = 0
    while placed_big < n_each:
        big_y = y + bar + gap
        x = 20
        while x + big + gap + bar <= width - 20 and placed_big < n_each:
            # each big is walled: hbars above and below, vbar to the right
            add("hbar", x, y, big, bar)
            add("big", x, big_y, big, big)
            add("vbar", x + big + gap, big_y, bar, big)
            add("hbar", x, big_y + big + gap, big, bar)
            x += pitch
            placed_big += 1
        y = big_y + big + gap + bar + 14

    return Page("bias_page", width, y + 40, None, tuple(annotations))


BIAS_REGISTRY = ("big", "hbar", "mid", "small", "vbar")


def flood_fill_components(mask: np.ndarray, connectivity: int) -> set[frozenset]:
    """Brute-force BFS connected components; the independent oracle for
    marker extraction."""
    height, width = mask.shape
    if connectivity == 8:
        steps = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        steps = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    seen = np.zeros_like(mask, dtype=bool)
    components = set()
    for row in range(height):
        for col in range(width):
            if not mask[row, col] or seen[row, col]:
                continue
            queue = [(row, col)]
            seen[row, col] = True
            pixels = []
            while queue:
                r, c = queue.pop()
                pixels.append((r, c))
                for dr, dc in steps:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < height and 0 <= cc < width and mask[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        queue.append((rr, cc))
            components.add(frozenset(pixels))
    return components


@pytest.fixture
def tiny_dataset():
    pages = [
        page_with(
            [ann("noteheadBlack", 10, 10, 24, 20), ann("clefG", 40, 12, 60, 44)],
            page_id="page_a",
        ),
        page_with([ann("noteheadBlack", 5, 5, 19, 15)], page_id="page_b"),
    ]
    return dataset_with(pages, ("clefG", "noteheadBlack", "rest8th"))
