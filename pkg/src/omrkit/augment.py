"""Rare-symbol crop bank and top-margin page augmentation.

Rare classes are oversampled by pasting fixed-size crops of their real
instances into a clean band at the top of each page and extending the
ground truth to match. The sampling law (class uniform, then instance
uniform, with replacement) makes the expected wait until a given rare
class shows up analyzable: 1 / (1 - (1 - 1/R)^k) pages for R rare
classes and k crops per page.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DoesNotFit, EmptyBank, MissingImage, ValidationError
from .image import WHITE, GrayImage, read_pgm
from .model import Annotation, BBox, Dataset, Page

# Once more rare classes are configured than this, a class is expected
# to take more than 10 augmented pages to appear with the default 12
# crops per page.
MAX_RARE_FOR_PROMPT_COVERAGE = 114


@dataclass(frozen=True)
class AugmentConfig:
    num_crops: int = 12
    crop_w: int = 130
    crop_h: int = 80
    margin_rows: int = 2
    gap: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("num_crops", "crop_w", "crop_h", "margin_rows"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.gap < 0:
            raise ValidationError("gap must be non-negative")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


@dataclass(frozen=True, eq=False)
class Crop:
    """A crop_h x crop_w patch holding one rare symbol.

    ``inner_bbox`` is the symbol's box in crop coordinates; ``source``
    records (page id, annotation index) for traceability.
    """

    class_name: str
    pixels: np.ndarray
    source: tuple[str, int]
    inner_bbox: BBox

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)
        h, w = arr.shape
        box = self.inner_bbox
        if box.x_min < 0 or box.y_min < 0 or box.x_max > w or box.y_max > h:
            raise ValidationError("inner_bbox must fit inside the crop extent")


@dataclass(frozen=True)
class CropBank:
    by_class: Mapping[str, tuple[Crop, ...]]
    rare_set: tuple[str, ...]
    missing: tuple[str, ...] = ()  # rare classes with zero instances

    def __post_init__(self):
        for name, crops in self.by_class.items():
            if name not in self.rare_set:
                raise ValidationError(f"bank class {name!r} not in the rare set")
            if not crops:
                raise ValidationError(f"bank class {name!r} has no crops")
            for crop in crops:
                if crop.class_name != name:
                    raise ValidationError(f"crop class {crop.class_name!r} under key {name!r}")


def _extract_crop(
    image: GrayImage, page: Page, ann_index: int, cfg: AugmentConfig
) -> Crop:
    """Cut a crop_h x crop_w window centered on the annotation, padding
    with white where the window leaves the page."""
    ann = page.annotations[ann_index]
    cx, cy = ann.bbox.center
    x0 = int(round(cx)) - cfg.crop_w // 2
    y0 = int(round(cy)) - cfg.crop_h // 2
    patch = np.full((cfg.crop_h, cfg.crop_w), WHITE, dtype=np.float64)
    src_x0 = max(x0, 0)
    src_y0 = max(y0, 0)
    src_x1 = min(x0 + cfg.crop_w, page.width)
    src_y1 = min(y0 + cfg.crop_h, page.height)
    if src_x1 > src_x0 and src_y1 > src_y0:
        patch[src_y0 - y0 : src_y1 - y0, src_x0 - x0 : src_x1 - x0] = image.pixels[
            src_y0:src_y1, src_x0:src_x1
        ]
    inner = ann.bbox.translate(-x0, -y0).clip(cfg.crop_w, cfg.crop_h)
    return Crop(ann.class_name, patch, (page.id, ann_index), inner)


def build_crop_bank(
    dataset: Dataset,
    rare: Sequence[str],
    cfg: AugmentConfig,
    images: Optional[Mapping[str, GrayImage]] = None,
    base_dir: Optional[str | Path] = None,
) -> CropBank:
    """Extract every instance of every rare class into the bank.

    Page images come from ``images`` (keyed by page id) when given,
    otherwise from each page's ``image_path`` (relative paths resolved
    against ``base_dir``). Rare classes without instances are reported
    in ``missing``, not fabricated.
    """
    rare = tuple(rare)
    if not rare:
        raise ValidationError("rare set must be non-empty")
    by_class: dict[str, list[Crop]] = {name: [] for name in rare}
    rare_lookup = set(rare)
    loaded: dict[str, GrayImage] = {}
    for page in dataset.pages:
        wanted = [
            index
            for index, ann in enumerate(page.annotations)
            if ann.class_name in rare_lookup
        ]
        if not wanted:
            continue
        image = _page_image(page, images, loaded, base_dir)
        for index in wanted:
            crop = _extract_crop(image, page, index, cfg)
            by_class[crop.class_name].append(crop)
    missing = tuple(name for name in rare if not by_class[name])
    populated = {name: tuple(crops) for name, crops in by_class.items() if crops}
    if not populated:
        raise EmptyBank("no rare class has any extractable instance")
    return CropBank(populated, rare, missing)


def _page_image(page, images, loaded, base_dir) -> GrayImage:
    if images is not None and page.id in images:
        return images[page.id]
    if page.id in loaded:
        return loaded[page.id]
    if page.image_path is None:
        raise MissingImage(f"page {page.id!r} has no image")
    path = Path(page.image_path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    if not path.exists():
        raise MissingImage(f"page {page.id!r} image not found: {path}")
    image = read_pgm(path)
    loaded[page.id] = image
    return image


def sample_crops(bank: CropBank, k: int, seed: int) -> list[Crop]:
    """Draw k crops: class uniform over bank keys (with replacement),
    then instance uniform within the class. Deterministic given seed."""
    if k < 1:
        raise ValidationError("k must be a positive integer")
    if seed < 0:
        raise ValidationError("seed must be a non-negative integer")
    if not bank.by_class:
        raise EmptyBank("crop bank is empty")
    rng = np.random.default_rng(seed)
    classes = sorted(bank.by_class)
    picks = []
    for _ in range(k):
        name = classes[int(rng.integers(len(classes)))]
        crops = bank.by_class[name]
        picks.append(crops[int(rng.integers(len(crops)))])
    return picks


def _layout(page_width: int, count: int, cfg: AugmentConfig) -> list[tuple[int, int]]:
    """Row-major (x, y) paste origins for ``count`` crops; raises when
    the configured margin band cannot hold them."""
    per_row = (page_width + cfg.gap) // (cfg.crop_w + cfg.gap)
    if per_row < 1:
        raise DoesNotFit(f"page width {page_width} cannot hold a single {cfg.crop_w} px crop")
    rows_needed = math.ceil(count / per_row) if count else 0
    if rows_needed > cfg.margin_rows:
        raise DoesNotFit(
            f"{count} crops need {rows_needed} rows but only {cfg.margin_rows} are reserved"
        )
    return [
        ((index % per_row) * (cfg.crop_w + cfg.gap), (index // per_row) * cfg.crop_h)
        for index in range(count)
    ]


def augment_page(
    page: Page, image: GrayImage, crops: Sequence[Crop], cfg: AugmentConfig
) -> tuple[Page, GrayImage]:
    """Paste crops into the top margin band and extend the ground truth.

    The band is the top ``margin_rows * crop_h`` pixel rows; it must be
    free of existing annotations. One annotation per crop is appended
    (the pasted inner box in page coordinates); originals are untouched,
    so dropping the last ``len(crops)`` annotations restores the page.
    """
    if (image.height, image.width) != (page.height, page.width):
        raise ValidationError("image extent does not match the page")
    band_height = cfg.margin_rows * cfg.crop_h
    if band_height > page.height:
        raise DoesNotFit("margin band is taller than the page")
    for index, ann in enumerate(page.annotations):
        if ann.bbox.y_min < band_height:
            raise DoesNotFit(
                f"annotation {index} intrudes into the top margin band "
                f"(y_min={ann.bbox.y_min} < {band_height})"
            )
    origins = _layout(page.width, len(crops), cfg)
    pixels = image.pixels.copy()
    new_annotations = list(page.annotations)
    for crop, (x0, y0) in zip(crops, origins):
        patch = crop.pixels
        if patch.shape != (cfg.crop_h, cfg.crop_w):
            raise ValidationError("crop extent does not match the config")
        pixels[y0 : y0 + cfg.crop_h, x0 : x0 + cfg.crop_w] = patch
        new_annotations.append(Annotation(crop.class_name, crop.inner_bbox.translate(x0, y0)))
    return page.with_annotations(new_annotations), GrayImage(pixels)


def expected_wait(num_rare: int, k: int) -> float:
    """Expected augmented pages until a fixed rare class appears.

    Per page the class is missed with probability (1 - 1/R)^k, so the
    wait is geometric with mean 1 / (1 - (1 - 1/R)^k).
    """
    if num_rare < 1 or k < 1:
        raise ValidationError("num_rare and k must be positive integers")
    if num_rare == 1:
        return 1.0
    miss = (1.0 - 1.0 / num_rare) ** k
    return 1.0 / (1.0 - miss)


@dataclass(frozen=True)
class AugmentOutcome:
    dataset: Dataset
    images: dict[str, GrayImage]
    bank: CropBank
    warnings: tuple[str, ...]


def augment_dataset(
    dataset: Dataset,
    cfg: AugmentConfig,
    rare: Sequence[str],
    images: Optional[Mapping[str, GrayImage]] = None,
    base_dir: Optional[str | Path] = None,
) -> AugmentOutcome:
    """Augment every page of a dataset with seeded, per-page sampling.

    Page sub-seeds are ``cfg.seed ^ page_index`` so pages are
    independent and the whole run is reproducible. Emits a warning when
    the configured rare set is so large that the expected wait for a
    class exceeds 10 pages.
    """
    bank = build_crop_bank(dataset, rare, cfg, images=images, base_dir=base_dir)
    warnings = []
    wait = expected_wait(len(rare), cfg.num_crops)
    if wait > 10.0:
        warnings.append(
            f"rare set has {len(rare)} classes (> {MAX_RARE_FOR_PROMPT_COVERAGE} with "
            f"{cfg.num_crops} crops per page); expected wait per class is "
            f"{wait:.2f} pages (> 10)"
        )
    if bank.missing:
        warnings.append(
            "rare classes without instances: " + ", ".join(sorted(bank.missing))
        )
    new_pages = []
    new_images: dict[str, GrayImage] = {}
    for page_index, page in enumerate(dataset.pages):
        image = _page_image(page, images, {}, base_dir)
        picks = sample_crops(bank, cfg.num_crops, cfg.seed ^ page_index)
        new_page, new_image = augment_page(page, image, picks, cfg)
        new_pages.append(new_page)
        new_images[page.id] = new_image
    return AugmentOutcome(
        Dataset(tuple(new_pages), dataset.class_registry), new_images, bank, tuple(warnings)
    )
