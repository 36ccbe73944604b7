"""Rigid registration of a rendered reference page against its scan.

The transform model is rotation about the image center plus translation;
positive theta turns the displayed image counter-clockwise (y axis
points down). Estimation is an exhaustive coarse-to-fine grid search
maximizing normalized cross-correlation over the valid overlap region:
deterministic, no initialization sensitivity, fast at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateImage, NoOverlap, ValidationError
from .image import WHITE, GrayImage
from .model import Annotation, BBox, Page

_MIN_OVERLAP_PIXELS = 64


@dataclass(frozen=True)
class RigidTransform:
    """p' = R(theta) (p - c) + c + (tx, ty), with c the image center.

    theta is in degrees, counter-clockwise on screen. Composition and
    inversion are independent of the center, which only enters when a
    transform is applied to points or pixels.
    """

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        for name in ("theta", "tx", "ty"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"transform {name} is not finite")
            object.__setattr__(self, name, value)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(0.0, 0.0, 0.0)

    def _matrix(self) -> np.ndarray:
        # Screen counter-clockwise with y pointing down.
        rad = math.radians(self.theta)
        c, s = math.cos(rad), math.sin(rad)
        return np.array([[c, s], [-s, c]], dtype=np.float64)

    def inverse(self) -> "RigidTransform":
        rot = RigidTransform(-self.theta)._matrix()
        shift = -(rot @ np.array([self.tx, self.ty]))
        return RigidTransform(-self.theta, float(shift[0]), float(shift[1]))

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """The transform applying ``first`` and then ``self``."""
        shift = self._matrix() @ np.array([first.tx, first.ty]) + np.array([self.tx, self.ty])
        return RigidTransform(self.theta + first.theta, float(shift[0]), float(shift[1]))

    def apply(self, points: np.ndarray, center: tuple[float, float]) -> np.ndarray:
        """Map an (N, 2) array of (x, y) points."""
        pts = np.asarray(points, dtype=np.float64)
        cx, cy = center
        offset = pts - np.array([cx, cy])
        moved = offset @ self._matrix().T
        return moved + np.array([cx + self.tx, cy + self.ty])


def _warp_arrays(
    pixels: np.ndarray, transform: RigidTransform, fill: float
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear warp of a pixel grid; returns (warped, validity mask).

    Output pixel (r, c) samples the source at the inverse-mapped position
    of its center (c + 0.5, r + 0.5). Samples outside the source take
    ``fill`` and are marked invalid. The identity transform reproduces
    the input bit for bit: the inverse mapping lands exactly on pixel
    centers, so every bilinear weight collapses to 0 or 1.
    """
    height, width = pixels.shape
    cx, cy = width / 2.0, height / 2.0
    ys, xs = np.mgrid[0:height, 0:width]
    px = xs + 0.5
    py = ys + 0.5
    rad = math.radians(transform.theta)
    cos_t, sin_t = math.cos(rad), math.sin(rad)
    vx = px - cx - transform.tx
    vy = py - cy - transform.ty
    # Inverse rotation of the screen-CCW matrix [[c, s], [-s, c]].
    sx = cos_t * vx - sin_t * vy + cx
    sy = sin_t * vx + cos_t * vy + cy
    gx = sx - 0.5
    gy = sy - 0.5
    valid = (gx >= 0.0) & (gx <= width - 1.0) & (gy >= 0.0) & (gy <= height - 1.0)
    gxc = np.clip(gx, 0.0, width - 1.0)
    gyc = np.clip(gy, 0.0, height - 1.0)
    x0 = np.floor(gxc).astype(np.intp)
    y0 = np.floor(gyc).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = gxc - x0
    fy = gyc - y0
    top = pixels[y0, x0] * (1.0 - fx) + pixels[y0, x1] * fx
    bottom = pixels[y1, x0] * (1.0 - fx) + pixels[y1, x1] * fx
    warped = top * (1.0 - fy) + bottom * fy
    warped = np.where(valid, warped, fill)
    return warped, valid


def warp_image(img: GrayImage, transform: RigidTransform) -> GrayImage:
    """Apply the transform to the image content; out-of-bounds is white."""
    warped, _ = _warp_arrays(img.pixels, transform, WHITE)
    return GrayImage(warped)


def transfer_annotations(page: Page, transform: RigidTransform) -> Page:
    """Make annotations valid on the transformed page.

    Each box's four corners are mapped and re-boxed as their axis-aligned
    envelope, clipped to the page; label fields are untouched. The
    envelope overshoots slightly for rotated boxes, which is acceptable
    for the small angles scans exhibit.
    """
    center = (page.width / 2.0, page.height / 2.0)
    moved = []
    for ann in page.annotations:
        box = ann.bbox
        corners = np.array(
            [
                [box.x_min, box.y_min],
                [box.x_max, box.y_min],
                [box.x_max, box.y_max],
                [box.x_min, box.y_max],
            ]
        )
        mapped = transform.apply(corners, center)
        envelope = BBox(
            float(mapped[:, 0].min()),
            float(mapped[:, 1].min()),
            float(mapped[:, 0].max()),
            float(mapped[:, 1].max()),
        ).clip(page.width, page.height)
        moved.append(
            Annotation(ann.class_name, envelope, ann.onset, ann.rel_position, ann.duration)
        )
    return page.with_annotations(moved)


def _downsample(pixels: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling; trailing rows/cols that do not fill a
    block are dropped."""
    if factor == 1:
        return pixels
    height = (pixels.shape[0] // factor) * factor
    width = (pixels.shape[1] // factor) * factor
    trimmed = pixels[:height, :width]
    return trimmed.reshape(height // factor, factor, width // factor, factor).mean(axis=(1, 3))


def _masked_ncc(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Normalized cross-correlation over the masked overlap, or nan."""
    n = float(mask.sum())
    if n < _MIN_OVERLAP_PIXELS:
        return float("nan")
    am = a * mask
    bm = b * mask
    sum_a = am.sum()
    sum_b = bm.sum()
    var_a = (am * a).sum() - sum_a * sum_a / n
    var_b = (bm * b).sum() - sum_b * sum_b / n
    if var_a <= 1e-9 or var_b <= 1e-9:
        return float("nan")
    cov = (am * b).sum() - sum_a * sum_b / n
    return float(max(-1.0, min(1.0, cov / math.sqrt(var_a * var_b))))


def alignment_score(reference: GrayImage, scanned: GrayImage, transform: RigidTransform) -> float:
    """Full-resolution NCC of warp(reference, transform) against the scan."""
    warped, valid = _warp_arrays(reference.pixels, transform, WHITE)
    score = _masked_ncc(warped, scanned.pixels, valid.astype(np.float64))
    if math.isnan(score):
        raise NoOverlap("transform leaves no usable overlap")
    return score


def _prefix(arr: np.ndarray) -> np.ndarray:
    table = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(arr, axis=0), axis=1, out=table[1:, 1:])
    return table


def _rect(table: np.ndarray, y0: int, y1: int, x0: int, x1: int) -> float:
    return table[y1, x1] - table[y0, x1] - table[y1, x0] + table[y0, x0]


class _ShiftScorer:
    """NCC of one rotated reference against the scan for integer shifts.

    Window sums of the (masked) reference come from prefix tables; only
    the cross term and the masked scan sums need per-shift vector work,
    and the scan sums fall back to prefix tables wherever the rotation
    mask is all ones inside the window.
    """

    def __init__(self, rotated_masked: np.ndarray, mask: np.ndarray, scan: np.ndarray):
        self.a = rotated_masked
        self.mask = mask
        self.b = scan
        self.b2 = scan * scan
        self.pa = _prefix(rotated_masked)
        self.pa2 = _prefix(rotated_masked * rotated_masked)
        self.pm = _prefix(mask)
        self.pb = _prefix(self.b)
        self.pb2 = _prefix(self.b2)
        self.height, self.width = scan.shape

    def ncc(self, dx: int, dy: int) -> float:
        height, width = self.height, self.width
        if abs(dx) >= width or abs(dy) >= height:
            return float("nan")
        ax0, ax1 = max(0, -dx), width - max(0, dx)
        ay0, ay1 = max(0, -dy), height - max(0, dy)
        bx0, by0 = ax0 + dx, ay0 + dy
        bx1, by1 = bx0 + (ax1 - ax0), by0 + (ay1 - ay0)
        n = _rect(self.pm, ay0, ay1, ax0, ax1)
        if n < _MIN_OVERLAP_PIXELS:
            return float("nan")
        sum_a = _rect(self.pa, ay0, ay1, ax0, ax1)
        sum_aa = _rect(self.pa2, ay0, ay1, ax0, ax1)
        if n == (ay1 - ay0) * (ax1 - ax0):  # mask all ones inside the window
            sum_b = _rect(self.pb, by0, by1, bx0, bx1)
            sum_bb = _rect(self.pb2, by0, by1, bx0, bx1)
        else:
            m_win = self.mask[ay0:ay1, ax0:ax1]
            b_win = self.b[by0:by1, bx0:bx1]
            sum_b = float((m_win * b_win).sum())
            sum_bb = float((m_win * b_win * b_win).sum())
        sum_ab = float((self.a[ay0:ay1, ax0:ax1] * self.b[by0:by1, bx0:bx1]).sum())
        var_a = sum_aa - sum_a * sum_a / n
        var_b = sum_bb - sum_b * sum_b / n
        if var_a <= 1e-9 or var_b <= 1e-9:
            return float("nan")
        cov = sum_ab - sum_a * sum_b / n
        return float(max(-1.0, min(1.0, cov / math.sqrt(var_a * var_b))))


def _theta_grid(center_theta: float, half_width: float, step: float, bound: float) -> list[float]:
    count = int(round(half_width / step))
    values = []
    for index in range(-count, count + 1):
        theta = center_theta + index * step
        if -bound - 1e-12 <= theta <= bound + 1e-12:
            values.append(theta)
    return values


def estimate_transform(
    reference: GrayImage,
    scanned: GrayImage,
    max_theta: float = 10.0,
    max_shift: float = 50.0,
    visits: list | None = None,
) -> tuple[RigidTransform, float]:
    """Best rigid transform mapping reference onto scanned, plus its NCC.

    A three-level pyramid (x4, x2, x1 block-mean downsampling) searches
    theta and translation on successively refined grids: 1 degree and
    one coarse pixel (4 px) at the coarsest level, halving down to 0.05
    degrees and 1 px at full resolution. Ties keep the first candidate
    in scan order, so the result is deterministic. ``visits`` (debug
    hook) collects (transform, pyramid factor, ncc) for every candidate.
    """
    if reference.pixels.shape != scanned.pixels.shape:
        raise ValidationError("reference and scan must share the same extent")
    if float(reference.pixels.var()) == 0.0:
        raise DegenerateImage("reference image has zero variance")
    if float(scanned.pixels.var()) == 0.0:
        raise DegenerateImage("scanned image has zero variance")
    if max_theta <= 0 or max_shift <= 0:
        raise ValidationError("search ranges must be positive")

    levels = {
        factor: (_downsample(reference.pixels, factor), _downsample(scanned.pixels, factor))
        for factor in (4, 2, 1)
    }

    best_theta, best_tx, best_ty = 0.0, 0.0, 0.0
    best_score = -math.inf

    # (factor, theta half-window or None for full range, theta step,
    #  shift half-window in level pixels or None for full range)
    stages = [
        (4, None, 1.0, None),
        (2, 1.0, 0.5, 2),
        (1, 0.5, 0.25, 2),
        (1, 0.25, 0.125, 1),
        (1, 0.125, 0.0625, 1),
        (1, 0.0625, 0.05, 1),
    ]

    for factor, theta_window, theta_step, shift_window in stages:
        ref_level, scan_level = levels[factor]
        if theta_window is None:
            thetas = _theta_grid(0.0, max_theta, theta_step, max_theta)
        else:
            thetas = _theta_grid(best_theta, theta_window, theta_step, max_theta)
        shift_bound = int(max_shift) // factor
        if shift_window is None:
            dxs = range(-shift_bound, shift_bound + 1)
            dys = range(-shift_bound, shift_bound + 1)
        else:
            cx = int(round(best_tx / factor))
            cy = int(round(best_ty / factor))
            dxs = [
                d
                for d in range(cx - shift_window, cx + shift_window + 1)
                if abs(d) <= shift_bound
            ]
            dys = [
                d
                for d in range(cy - shift_window, cy + shift_window + 1)
                if abs(d) <= shift_bound
            ]
        stage_best = (-math.inf, best_theta, best_tx, best_ty)
        for theta in thetas:
            rotated, valid = _warp_arrays(ref_level, RigidTransform(theta), WHITE)
            mask = valid.astype(np.float64)
            scorer = _ShiftScorer(rotated * mask, mask, scan_level)
            for dy in dys:
                for dx in dxs:
                    score = scorer.ncc(dx, dy)
                    if math.isnan(score):
                        continue
                    if visits is not None:
                        visits.append(
                            (RigidTransform(theta, dx * factor, dy * factor), factor, score)
                        )
                    if score > stage_best[0]:
                        stage_best = (score, theta, float(dx * factor), float(dy * factor))
        if math.isinf(stage_best[0]):
            raise NoOverlap("no candidate transform produced a usable overlap")
        best_score, best_theta, best_tx, best_ty = stage_best

    return RigidTransform(best_theta, best_tx, best_ty), best_score
