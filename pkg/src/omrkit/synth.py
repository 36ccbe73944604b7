"""Synthetic score pages with exact ground truth, oracle map rendering,
and scan-style degradations.

Pages are staff lines plus primitive glyphs (filled and outlined
ellipses, bars, crosses, blocks), enough geometry to exercise detection
post-processing, imbalance analysis, augmentation, and alignment
without a real engraving stack. Oracle maps place a Gaussian energy
bump at each symbol center with sigma tied to the box size, which keeps
markers of non-overlapping symbols separated and makes the noiseless
round trip exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import ndimage

from .align import RigidTransform, warp_image
from .detect import MapStack
from .errors import DoesNotFit, UnknownClass, ValidationError
from .image import WHITE, GrayImage
from .model import Annotation, BBox, Dataset, Page

INK = 0.0

# name -> (width, height); sizes span small to large on purpose so that
# size-binned diagnostics see a real spread.
GLYPH_SIZES: dict[str, tuple[int, int]] = {
    "dotSmall": (8, 8),
    "noteSolid": (14, 10),
    "ringOpen": (12, 12),
    "stemBar": (4, 34),
    "beamBar": (34, 4),
    "crossPlus": (12, 12),
    "crossTimes": (16, 16),
    "frameRect": (24, 24),
    "blockRect": (36, 36),
}

DEFAULT_GLYPH_MIX: dict[str, float] = {name: 1.0 for name in GLYPH_SIZES}


def _glyph_mask(name: str, width: int, height: int) -> np.ndarray:
    """Ink mask for one glyph on its bounding box, pixel-center geometry."""
    ys, xs = np.mgrid[0:height, 0:width]
    dx = xs + 0.5 - width / 2.0
    dy = ys + 0.5 - height / 2.0
    rx, ry = width / 2.0, height / 2.0
    if name in ("dotSmall", "noteSolid"):
        return (dx / rx) ** 2 + (dy / ry) ** 2 <= 1.0
    if name == "ringOpen":
        outer = (dx / rx) ** 2 + (dy / ry) ** 2 <= 1.0
        inner = (dx / max(rx - 2.5, 1.0)) ** 2 + (dy / max(ry - 2.5, 1.0)) ** 2 <= 1.0
        return outer & ~inner
    if name in ("stemBar", "beamBar", "blockRect"):
        return np.ones((height, width), dtype=bool)
    if name == "frameRect":
        border = (xs < 2) | (xs >= width - 2) | (ys < 2) | (ys >= height - 2)
        return border
    if name == "crossPlus":
        arm_x = np.abs(dx) <= width / 6.0
        arm_y = np.abs(dy) <= height / 6.0
        return arm_x | arm_y
    if name == "crossTimes":
        slope = width / height
        return (np.abs(dx - dy * slope) <= 1.6) | (np.abs(dx + dy * slope) <= 1.6)
    raise UnknownClass(f"no renderer for glyph class {name!r}")


@dataclass(frozen=True)
class PageSpec:
    """Layout recipe for one synthetic page."""

    width: int = 1000
    height: int = 1400
    num_staves: int = 5
    glyph_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_GLYPH_MIX))
    symbols_per_staff: int = 10
    balanced: bool = False
    top_margin: int = 200
    side_margin: int = 24
    bottom_margin: int = 40
    staff_spacing: int = 12
    min_gap: int = 6
    max_gap: int = 16

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValidationError("page extent too small")
        if self.num_staves < 1:
            raise ValidationError("need at least one staff")
        if self.symbols_per_staff < 0:
            raise ValidationError("symbols_per_staff must be non-negative")
        weights = dict(self.glyph_mix)
        if not weights or min(weights.values()) < 0 or max(weights.values()) <= 0:
            raise ValidationError("glyph_mix needs at least one positive weight")
        for name in weights:
            if name not in GLYPH_SIZES:
                raise UnknownClass(f"unknown glyph class {name!r}")
        object.__setattr__(self, "glyph_mix", weights)
        if self.min_gap < 1 or self.max_gap < self.min_gap:
            raise ValidationError("bad gap range")

    def active_classes(self) -> tuple[str, ...]:
        return tuple(sorted(name for name, w in self.glyph_mix.items() if w > 0))


@dataclass(frozen=True)
class NoiseSpec:
    """Oracle-map corruption knobs; all zero means the exact oracle."""

    energy_noise_sigma: float = 0.0
    class_confusion: float = 0.0
    box_smoothing_radius: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.energy_noise_sigma < 0:
            raise ValidationError("energy_noise_sigma must be >= 0")
        if not 0.0 <= self.class_confusion < 1.0:
            raise ValidationError("class_confusion must be in [0, 1)")
        if self.box_smoothing_radius < 0:
            raise ValidationError("box_smoothing_radius must be >= 0")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


def _class_sequence(spec: PageSpec, total: int, rng: np.random.Generator) -> list[str]:
    classes = spec.active_classes()
    if spec.balanced:
        # counts differ by at most one; surplus goes to a seeded shuffle
        base, extra = divmod(total, len(classes))
        favored = list(classes)
        rng.shuffle(favored)
        sequence = []
        for name in classes:
            sequence.extend([name] * base)
        sequence.extend(favored[:extra])
        rng.shuffle(sequence)
        return sequence
    weights = np.array([spec.glyph_mix[name] for name in classes], dtype=np.float64)
    weights /= weights.sum()
    return list(rng.choice(classes, size=total, p=weights))


def generate_page(spec: PageSpec, seed: int, page_id: str = "page_0000") -> tuple[Page, GrayImage]:
    """Render one page and its exact annotations, deterministically.

    Symbols are laid out left to right along each staff with seeded gaps
    and vertical jitter, constrained so that no two boxes overlap and
    the configured top margin stays clean.
    """
    if seed < 0:
        raise ValidationError("seed must be a non-negative integer")
    rng = np.random.default_rng(seed)
    pixels = np.full((spec.height, spec.width), WHITE, dtype=np.float64)

    staff_region_top = spec.top_margin
    staff_region_height = spec.height - spec.top_margin - spec.bottom_margin
    if staff_region_height < spec.num_staves * 4 * spec.staff_spacing:
        raise DoesNotFit("staves do not fit between the margins")
    pitch = staff_region_height / spec.num_staves
    max_glyph_h = max(GLYPH_SIZES[name][1] for name in spec.active_classes())
    if pitch < max_glyph_h + 2:
        raise DoesNotFit("staff pitch too small for the largest glyph")

    total = spec.num_staves * spec.symbols_per_staff
    sequence = _class_sequence(spec, total, rng) if total else []
    annotations: list[Annotation] = []
    index = 0
    for staff in range(spec.num_staves):
        band_top = staff_region_top + staff * pitch
        staff_center = band_top + pitch / 2.0
        # five staff lines centered in the band
        for line in range(5):
            y = int(round(staff_center + (line - 2) * spec.staff_spacing))
            if 0 <= y < spec.height:
                pixels[y, spec.side_margin : spec.width - spec.side_margin] = INK
        cursor = spec.side_margin + int(rng.integers(0, spec.max_gap + 1))
        for _ in range(spec.symbols_per_staff):
            name = sequence[index]
            index += 1
            glyph_w, glyph_h = GLYPH_SIZES[name]
            gap = int(rng.integers(spec.min_gap, spec.max_gap + 1))
            x0 = cursor + gap
            if x0 + glyph_w > spec.width - spec.side_margin:
                raise DoesNotFit(
                    f"staff {staff} cannot hold {spec.symbols_per_staff} symbols "
                    f"within width {spec.width}"
                )
            slack = (pitch - 2 - glyph_h) / 2.0
            jitter = float(rng.uniform(-slack, slack)) if slack > 0 else 0.0
            y0 = int(round(staff_center + jitter - glyph_h / 2.0))
            y0 = max(int(math.ceil(band_top)) + 1, min(y0, int(band_top + pitch) - glyph_h - 1))
            mask = _glyph_mask(name, glyph_w, glyph_h)
            window = pixels[y0 : y0 + glyph_h, x0 : x0 + glyph_w]
            window[mask] = INK
            annotations.append(
                Annotation(name, BBox(float(x0), float(y0), float(x0 + glyph_w), float(y0 + glyph_h)))
            )
            cursor = x0 + glyph_w
    page = Page(page_id, spec.width, spec.height, None, tuple(annotations))
    return page, GrayImage(pixels)


def generate_dataset(
    spec: PageSpec, num_pages: int, seed: int
) -> tuple[Dataset, dict[str, GrayImage]]:
    """Generate pages with deterministically derived per-page sub-seeds."""
    if num_pages < 0:
        raise ValidationError("num_pages must be non-negative")
    pages = []
    images: dict[str, GrayImage] = {}
    for number in range(num_pages):
        page_id = f"page_{number:04d}"
        page, img = generate_page(spec, seed ^ number, page_id)
        pages.append(page)
        images[page_id] = img
    registry = spec.active_classes()
    return Dataset(tuple(pages), registry), images


def render_maps(page: Page, noise: NoiseSpec, registry) -> MapStack:
    """Oracle map stack for a page: what a perfect detector would emit.

    energy: sum of Gaussian bumps, peak 1.0 at each symbol center,
    per-axis sigma of a quarter of the box dimension, clamped to [0, 1],
    plus optional Gaussian noise. class_scores: 1.0 for the true class
    inside each box, optionally confused to another class per symbol.
    box_wh: the true (width, height) inside each box, 0 elsewhere.

    A positive ``box_smoothing_radius`` reproduces the smooth-output
    size bias of convolutional regressors: the size maps are mean
    filtered with support normalization, so every value becomes a local
    average over all boxes the window touches. Near a small symbol the
    window picks up larger neighbors and the read-out grows; near a
    large one it shrinks. Plain zero-padded mean filtering cannot show
    this pattern, it only dilutes every box toward zero.
    """
    registry = list(registry)
    class_index = {name: i for i, name in enumerate(registry)}
    height, width = page.height, page.width
    rng = np.random.default_rng(noise.seed)
    energy = np.zeros((height, width), dtype=np.float64)
    class_scores = np.zeros((len(registry), height, width), dtype=np.float32)
    box_wh = np.zeros((2, height, width), dtype=np.float64)

    for ann in page.annotations:
        if ann.class_name not in class_index:
            raise UnknownClass(f"class {ann.class_name!r} missing from registry")
        box = ann.bbox
        cx, cy = box.center
        sigma_x = max(box.width / 4.0, 0.5)
        sigma_y = max(box.height / 4.0, 0.5)
        # Map grids sample at integer coordinates: grid point (r, c) sits
        # at (x=c, y=r). An even-sized box centers on the lattice, so the
        # sampled peak is exactly 1.0 and the bump is symmetric, making
        # the noiseless energy centroid coincide with the box center.
        # The window is cut symmetrically at +-4 sigma.
        x0 = max(int(math.ceil(cx - 4 * sigma_x)), 0)
        x1 = min(int(math.floor(cx + 4 * sigma_x)) + 1, width)
        y0 = max(int(math.ceil(cy - 4 * sigma_y)), 0)
        y1 = min(int(math.floor(cy + 4 * sigma_y)) + 1, height)
        gx = np.exp(-0.5 * ((np.arange(x0, x1) - cx) / sigma_x) ** 2)
        gy = np.exp(-0.5 * ((np.arange(y0, y1) - cy) / sigma_y) ** 2)
        energy[y0:y1, x0:x1] += gy[:, None] * gx[None, :]

        bx0, by0 = int(round(box.x_min)), int(round(box.y_min))
        bx1, by1 = int(round(box.x_max)), int(round(box.y_max))
        true_class = class_index[ann.class_name]
        if noise.class_confusion > 0.0 and rng.random() < noise.class_confusion:
            others = [i for i in range(len(registry)) if i != true_class]
            if others:
                true_class = int(rng.choice(others))
        class_scores[true_class, by0:by1, bx0:bx1] = 1.0
        box_wh[0, by0:by1, bx0:bx1] = box.width
        box_wh[1, by0:by1, bx0:bx1] = box.height

    if noise.energy_noise_sigma > 0.0:
        energy += rng.normal(0.0, noise.energy_noise_sigma, size=energy.shape)
    energy = np.clip(energy, 0.0, 1.0)

    if noise.box_smoothing_radius > 0:
        size = 2 * noise.box_smoothing_radius + 1
        support = (box_wh[0] > 0.0).astype(np.float64)
        blurred = ndimage.uniform_filter(box_wh, size=(1, size, size), mode="constant", cval=0.0)
        coverage = ndimage.uniform_filter(support, size=size, mode="constant", cval=0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            box_wh = np.where(coverage > 1e-9, blurred / coverage, 0.0)
        np.maximum(box_wh, 0.0, out=box_wh)  # sliding sums leave -1e-13 residue

    return MapStack(energy.astype(np.float32), class_scores, box_wh.astype(np.float32))


@dataclass(frozen=True)
class DegradeSpec:
    """Scan-style degradation parameters, applied in a fixed order:
    contrast scaling, blur, rigid warp, additive noise, clamp."""

    contrast: float = 1.0
    blur_sigma: float = 0.0
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.5 <= self.contrast <= 1.5:
            raise ValidationError("contrast must be in [0.5, 1.5]")
        if not 0.0 <= self.blur_sigma <= 3.0:
            raise ValidationError("blur_sigma must be in [0, 3]")
        if abs(self.theta) > 10.0:
            raise ValidationError("|theta| must be <= 10 degrees")
        if abs(self.tx) > 50.0 or abs(self.ty) > 50.0:
            raise ValidationError("|shift| must be <= 50 px")
        if not 0.0 <= self.noise_sigma <= 25.0:
            raise ValidationError("noise_sigma must be in [0, 25]")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")

    @property
    def transform(self) -> RigidTransform:
        return RigidTransform(self.theta, self.tx, self.ty)


def degrade_image(img: GrayImage, spec: DegradeSpec) -> GrayImage:
    """Deterministic scan simulation; neutral stages are bypassed so an
    all-neutral spec returns the input bit for bit."""
    pixels = img.pixels
    if spec.contrast != 1.0:
        pixels = 127.5 + spec.contrast * (pixels - 127.5)
    if spec.blur_sigma > 0.0:
        pixels = ndimage.gaussian_filter(pixels, spec.blur_sigma, mode="constant", cval=WHITE)
    if spec.theta != 0.0 or spec.tx != 0.0 or spec.ty != 0.0:
        pixels = warp_image(GrayImage(np.clip(pixels, 0.0, 255.0)), spec.transform).pixels
    if spec.noise_sigma > 0.0:
        rng = np.random.default_rng(spec.seed)
        pixels = pixels + rng.normal(0.0, spec.noise_sigma, size=pixels.shape)
    return GrayImage(np.clip(pixels, 0.0, 255.0))
