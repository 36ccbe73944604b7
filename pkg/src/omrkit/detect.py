"""Post-processing of per-pixel model outputs into discrete detections.

The module boundary is :class:`MapStack`, the (energy, class score, box
size) triple any producer can emit, so the policy here is testable with
the synthetic oracle in :mod:`omrkit.synth` and needs no network.

Box sizes can come from three policies: ``regressed`` reads the size
maps, ``cached`` looks up a fixed per-class size, and ``hybrid`` falls
back to the cached size whenever the regressed one deviates too far
from it in either dimension.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    MapFormatError,
    MissingCacheEntry,
    NoMatches,
    SchemaError,
    ValidationError,
)
from .evaluate import greedy_match
from .fileio import atomic_write_bytes
from .model import BBox, Dataset

MAPS_MAGIC = b"DWM1"

_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


def _readonly_f32(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float32)
    if not np.isfinite(out).all():
        raise ValidationError(f"{name} contains non-finite values")
    out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MapStack:
    """Per-pixel model outputs sharing one (H, W) grid.

    energy: H x W objectness in [0, 1] (clamped on construction).
    class_scores: K x H x W non-negative per-class evidence.
    box_wh: 2 x H x W predicted (width, height) in pixels.

    Grid point (r, c) is the sample at coordinates (x=c, y=r), so a box
    [x0, x1) x [y0, y1) with even dimensions has its center on the grid.
    """

    energy: np.ndarray
    class_scores: np.ndarray
    box_wh: np.ndarray

    def __post_init__(self):
        energy = np.clip(np.asarray(self.energy, dtype=np.float32), 0.0, 1.0)
        object.__setattr__(self, "energy", _readonly_f32(energy, "energy"))
        object.__setattr__(self, "class_scores", _readonly_f32(self.class_scores, "class_scores"))
        object.__setattr__(self, "box_wh", _readonly_f32(self.box_wh, "box_wh"))
        if self.energy.ndim != 2:
            raise ValidationError("energy must be 2-D")
        h, w = self.energy.shape
        if self.class_scores.ndim != 3 or self.class_scores.shape[1:] != (h, w):
            raise ValidationError("class_scores must be K x H x W on the energy grid")
        if self.box_wh.shape != (2, h, w):
            raise ValidationError("box_wh must be 2 x H x W on the energy grid")
        if self.class_scores.size and self.class_scores.min() < 0.0:
            raise ValidationError("class_scores must be non-negative")
        if self.box_wh.min() < 0.0:
            raise ValidationError("box_wh must be non-negative")

    @property
    def height(self) -> int:
        return int(self.energy.shape[0])

    @property
    def width(self) -> int:
        return int(self.energy.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.class_scores.shape[0])


@dataclass(frozen=True)
class Detection:
    class_name: str
    bbox: BBox
    score: float


@dataclass(frozen=True)
class CachedBoxTable:
    """Canonical (width, height) per class, used as the box prediction."""

    sizes: dict[str, tuple[float, float]]
    missing: tuple[str, ...] = ()

    def __post_init__(self):
        for name, (width, height) in self.sizes.items():
            if width <= 0.0 or height <= 0.0:
                raise ValidationError(f"cached box for {name!r} must be strictly positive")

    def get(self, class_name: str) -> tuple[float, float]:
        try:
            return self.sizes[class_name]
        except KeyError:
            raise MissingCacheEntry(f"no cached box for class {class_name!r}") from None


@dataclass(frozen=True)
class PostConfig:
    """Marker extraction and box-assignment knobs."""

    energy_threshold: float = 0.2
    connectivity: int = 8
    min_area: int = 4
    box_mode: str = "regressed"
    hybrid_tolerance: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.energy_threshold < 1.0:
            raise ValidationError("energy_threshold must be in (0, 1)")
        if self.connectivity not in (4, 8):
            raise ValidationError("connectivity must be 4 or 8")
        if self.min_area < 1:
            raise ValidationError("min_area must be at least 1")
        if self.box_mode not in ("regressed", "cached", "hybrid"):
            raise ValidationError(f"unknown box_mode {self.box_mode!r}")
        if self.hybrid_tolerance <= 0.0:
            raise ValidationError("hybrid_tolerance must be positive")


@dataclass(frozen=True, eq=False)
class MarkerComponent:
    """One connected supra-threshold region of the energy map."""

    rows: np.ndarray
    cols: np.ndarray
    area: int
    centroid: tuple[float, float]  # energy-weighted (x, y) in grid coordinates
    peak: float
    first_pixel: tuple[int, int]  # (row, col) of the first pixel in scan order

    def pixel_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(zip(self.rows.tolist(), self.cols.tolist()))


def build_cached_boxes(dataset: Dataset) -> CachedBoxTable:
    """Per-class element-wise median of ground-truth box dimensions.

    An even count takes the mean of the two middle values. Registry
    classes without any annotation are listed in ``missing``.
    """
    widths: dict[str, list[float]] = {name: [] for name in dataset.class_registry}
    heights: dict[str, list[float]] = {name: [] for name in dataset.class_registry}
    for ann in dataset.annotations():
        widths[ann.class_name].append(ann.bbox.width)
        heights[ann.class_name].append(ann.bbox.height)
    sizes: dict[str, tuple[float, float]] = {}
    missing: list[str] = []
    for name in dataset.class_registry:
        if widths[name]:
            sizes[name] = (float(np.median(widths[name])), float(np.median(heights[name])))
        else:
            missing.append(name)
    return CachedBoxTable(sizes, tuple(missing))


def extract_markers(energy: np.ndarray, cfg: PostConfig) -> tuple[MarkerComponent, ...]:
    """Connected components of {energy >= threshold}, small ones dropped.

    Components are ordered by the (row, col) of their first pixel in
    scan order; centroids are energy weighted, in grid coordinates.
    """
    energy = np.asarray(energy, dtype=np.float32)
    if energy.ndim != 2:
        raise ValidationError("energy must be 2-D")
    mask = energy >= cfg.energy_threshold
    structure = _STRUCTURE_8 if cfg.connectivity == 8 else _STRUCTURE_4
    labels, count = ndimage.label(mask, structure=structure)
    if count == 0:
        return ()
    flat = labels.ravel()
    pixel_index = np.flatnonzero(flat)
    pixel_labels = flat[pixel_index]
    order = np.argsort(pixel_labels, kind="stable")
    pixel_index = pixel_index[order]
    pixel_labels = pixel_labels[order]
    # boundaries[k] is the start of label k+1's block in the sorted pixels
    boundaries = np.searchsorted(pixel_labels, np.arange(1, count + 2))
    width = energy.shape[1]
    components = []
    for label in range(count):
        span = pixel_index[boundaries[label] : boundaries[label + 1]]
        if span.size < cfg.min_area:
            continue
        rows = span // width
        cols = span % width
        weights = energy[rows, cols].astype(np.float64)
        total = weights.sum()
        # grid point (r, c) sits at (x=c, y=r); see MapStack docstring
        cx = float((cols * weights).sum() / total)
        cy = float((rows * weights).sum() / total)
        rows = rows.astype(np.intp)
        cols = cols.astype(np.intp)
        rows.setflags(write=False)
        cols.setflags(write=False)
        components.append(
            MarkerComponent(
                rows=rows,
                cols=cols,
                area=int(span.size),
                centroid=(cx, cy),
                peak=float(weights.max()),
                first_pixel=(int(rows[0]), int(cols[0])),
            )
        )
    components.sort(key=lambda comp: comp.first_pixel)
    return tuple(components)


def _component_box_size(
    comp: MarkerComponent,
    maps: MapStack,
    cfg: PostConfig,
    table: Optional[CachedBoxTable],
    class_name: str,
) -> tuple[float, float]:
    if cfg.box_mode != "regressed" and table is None:
        raise ValidationError(f"box_mode {cfg.box_mode!r} requires a cached box table")
    regressed: Optional[tuple[float, float]] = None
    if cfg.box_mode in ("regressed", "hybrid"):
        weights = maps.energy[comp.rows, comp.cols].astype(np.float64)
        total = weights.sum()
        width = float((maps.box_wh[0, comp.rows, comp.cols] * weights).sum() / total)
        height = float((maps.box_wh[1, comp.rows, comp.cols] * weights).sum() / total)
        regressed = (width, height)
    if cfg.box_mode == "regressed":
        return regressed
    cached = table.get(class_name)
    if cfg.box_mode == "cached":
        return cached
    deviates = any(
        abs(reg - ref) / ref > cfg.hybrid_tolerance for reg, ref in zip(regressed, cached)
    )
    return cached if deviates else regressed


def detect(
    maps: MapStack,
    cfg: PostConfig,
    registry: Sequence[str],
    table: Optional[CachedBoxTable] = None,
) -> list[Detection]:
    """Markers to detections: class by summed score, box by policy.

    The class is the argmax of the per-class score summed over the
    component's pixels (ties take the lower registry index); the score
    is the component's peak energy; the box is centered on the
    energy-weighted centroid and clipped to the map extent.
    """
    if len(registry) != maps.num_classes:
        raise ValidationError(
            f"registry size {len(registry)} does not match map classes {maps.num_classes}"
        )
    detections = []
    for comp in extract_markers(maps.energy, cfg):
        class_sums = maps.class_scores[:, comp.rows, comp.cols].sum(axis=1, dtype=np.float64)
        class_index = int(np.argmax(class_sums))
        class_name = registry[class_index]
        width, height = _component_box_size(comp, maps, cfg, table, class_name)
        cx, cy = comp.centroid
        box = BBox(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)
        detections.append(Detection(class_name, box.clip(maps.width, maps.height), comp.peak))
    return detections


@dataclass(frozen=True)
class SizeBiasReport:
    """Mean signed relative area error per size bin (smallest first)."""

    bin_means: tuple[float, ...]
    bin_counts: tuple[int, ...]
    bin_sqrt_area: tuple[tuple[float, float], ...]  # (min, max) sqrt-area per bin
    num_matched: int
    num_unmatched_dets: int
    num_unmatched_gts: int


def size_bias_report(
    detections: Sequence[Detection],
    ground_truths: Sequence,
    bins: int,
    match_iou: float = 0.3,
) -> SizeBiasReport:
    """Partition matched ground truths into equal-population size bins
    and report the mean of (detected area - true area) / true area.

    Matching is greedy by score at ``match_iou`` and class agnostic, so
    the size diagnostic survives classification mistakes; unmatched
    boxes are counted, not scored.
    """
    if bins < 1:
        raise ValidationError("bins must be a positive integer")
    pairs = greedy_match(detections, ground_truths, match_iou, require_same_class=False)
    if not pairs:
        raise NoMatches("no detection matched any ground truth")
    if bins > len(pairs):
        raise ValidationError(f"{bins} bins requested but only {len(pairs)} matches")
    records = []
    for det_index, gt_index in pairs:
        gt_area = ground_truths[gt_index].bbox.area
        det_area = detections[det_index].bbox.area
        records.append((np.sqrt(gt_area), (det_area - gt_area) / gt_area))
    records.sort(key=lambda rec: rec[0])
    chunks = np.array_split(np.arange(len(records)), bins)
    means, counts, ranges = [], [], []
    for chunk in chunks:
        errors = [records[i][1] for i in chunk]
        sides = [records[i][0] for i in chunk]
        means.append(float(np.mean(errors)))
        counts.append(len(chunk))
        ranges.append((float(min(sides)), float(max(sides))))
    return SizeBiasReport(
        tuple(means),
        tuple(counts),
        tuple(ranges),
        num_matched=len(pairs),
        num_unmatched_dets=len(detections) - len(pairs),
        num_unmatched_gts=len(ground_truths) - len(pairs),
    )


def write_maps(maps: MapStack, path: str | Path) -> None:
    """Write the bit-exact binary map bundle.

    Layout: magic ``DWM1``, little-endian u32 H, W, K, then row-major
    little-endian float32 planes: energy, class_scores, box_wh.
    """
    header = struct.pack("<4sIII", MAPS_MAGIC, maps.height, maps.width, maps.num_classes)
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
        for arr in (maps.energy, maps.class_scores, maps.box_wh)
    )
    atomic_write_bytes(path, header + payload)


def read_maps(path: str | Path) -> MapStack:
    """Read a map bundle written by :func:`write_maps`."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise MapFormatError(f"{path}: truncated header")
    magic, height, width, num_classes = struct.unpack("<4sIII", data[:16])
    if magic != MAPS_MAGIC:
        raise MapFormatError(f"{path}: bad magic {magic!r}")
    if height < 1 or width < 1 or num_classes < 1:
        raise MapFormatError(f"{path}: bad dimensions {height}x{width}x{num_classes}")
    plane = height * width
    expected = 16 + 4 * plane * (1 + num_classes + 2)
    if len(data) != expected:
        raise MapFormatError(f"{path}: payload is {len(data)} bytes, expected {expected}")
    floats = np.frombuffer(data, dtype="<f4", offset=16)
    energy = floats[:plane].reshape(height, width)
    class_scores = floats[plane : plane * (1 + num_classes)].reshape(num_classes, height, width)
    box_wh = floats[plane * (1 + num_classes) :].reshape(2, height, width)
    return MapStack(energy, class_scores, box_wh)


def box_table_to_doc(table: CachedBoxTable) -> dict:
    return {
        "missing": sorted(table.missing),
        "sizes": {name: [_round(w), _round(h)] for name, (w, h) in table.sizes.items()},
    }


def _round(value: float) -> float:
    return float(f"{value:.3f}")


def box_table_from_doc(doc) -> CachedBoxTable:
    if not isinstance(doc, dict) or "sizes" not in doc:
        raise SchemaError("cached box table must be an object with a 'sizes' field")
    sizes_doc = doc["sizes"]
    if not isinstance(sizes_doc, dict):
        raise SchemaError("'sizes' must be an object")
    sizes = {}
    for name, pair in sizes_doc.items():
        if not isinstance(pair, list) or len(pair) != 2:
            raise SchemaError(f"size entry for {name!r} must be [width, height]")
        sizes[name] = (float(pair[0]), float(pair[1]))
    missing = doc.get("missing", [])
    if not isinstance(missing, list):
        raise SchemaError("'missing' must be a list")
    return CachedBoxTable(sizes, tuple(missing))
