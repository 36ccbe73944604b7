"""Dataset object model, extended label grammar, and dataset file I/O.

Labels are dot-separated with one, two, or four fields::

    classname
    classname.onset
    classname.onset.relposition.duration

Onset and duration are exact rationals written ``n`` or ``n/d`` (never
with a decimal point, which would collide with the field separator), and
the staff position is a signed integer. Three-field labels are invalid.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .errors import MalformedLabel, SchemaError, ValidationError
from .fileio import atomic_write_bytes, canonical_json_bytes

# Exact rational carrier for onsets and durations (beats).
Rational = Fraction

_CLASS_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
_INT_RE = re.compile(r"[+-]?[0-9]+\Z")
_RATIONAL_RE = re.compile(r"[+-]?[0-9]+(?:/[0-9]+)?\Z")


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box with corner coordinates, origin top-left, y down.

    Half-open semantics: a box covers [x_min, x_max) x [y_min, y_max),
    so touching boxes have zero intersection area.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"bbox coordinate {name} is not finite")
            object.__setattr__(self, name, value)
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValidationError(
                f"bbox corners out of order: ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def clip(self, width: float, height: float) -> "BBox":
        """Clip to the extent [0, width] x [0, height]."""
        x_min = min(max(self.x_min, 0.0), float(width))
        x_max = min(max(self.x_max, 0.0), float(width))
        y_min = min(max(self.y_min, 0.0), float(height))
        y_max = min(max(self.y_max, 0.0), float(height))
        return BBox(x_min, y_min, x_max, y_max)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def _parse_rational(token: str, label: str) -> Fraction:
    if not _RATIONAL_RE.match(token):
        raise MalformedLabel(f"bad rational {token!r} in label {label!r}")
    if "/" in token:
        num_text, den_text = token.split("/")
        denominator = int(den_text)
        if denominator == 0:
            raise MalformedLabel(f"zero denominator in label {label!r}")
        return Fraction(int(num_text), denominator)
    return Fraction(int(token))


def parse_label(
    label: str,
) -> tuple[str, Optional[Fraction], Optional[int], Optional[Fraction]]:
    """Parse a label string into (class_name, onset, rel_position, duration).

    Arity 1 gives a bare class, arity 2 adds the onset, arity 4 adds the
    staff position and duration. Any other arity is malformed.
    """
    fields = label.split(".")
    if len(fields) not in (1, 2, 4):
        raise MalformedLabel(f"label {label!r} has {len(fields)} fields; expected 1, 2, or 4")
    class_name = fields[0]
    if not _CLASS_NAME_RE.match(class_name):
        raise MalformedLabel(f"bad class name {class_name!r} in label {label!r}")
    onset: Optional[Fraction] = None
    rel_position: Optional[int] = None
    duration: Optional[Fraction] = None
    if len(fields) >= 2:
        onset = _parse_rational(fields[1], label)
    if len(fields) == 4:
        if not _INT_RE.match(fields[2]):
            raise MalformedLabel(f"bad staff position {fields[2]!r} in label {label!r}")
        rel_position = int(fields[2])
        duration = _parse_rational(fields[3], label)
    return class_name, onset, rel_position, duration


def format_label(
    class_name: str,
    onset: Optional[Fraction] = None,
    rel_position: Optional[int] = None,
    duration: Optional[Fraction] = None,
) -> str:
    """Canonical label text: rationals in lowest terms, no ``/1`` suffix."""
    if rel_position is not None or duration is not None:
        return f"{class_name}.{onset}.{rel_position}.{duration}"
    if onset is not None:
        return f"{class_name}.{onset}"
    return class_name


@dataclass(frozen=True)
class Annotation:
    """One labeled symbol: class, box, and optional musical fields."""

    class_name: str
    bbox: BBox
    onset: Optional[Fraction] = None
    rel_position: Optional[int] = None
    duration: Optional[Fraction] = None

    def __post_init__(self):
        if not _CLASS_NAME_RE.match(self.class_name):
            raise ValidationError(f"bad class name {self.class_name!r}")
        if not isinstance(self.bbox, BBox):
            object.__setattr__(self, "bbox", BBox(*self.bbox))
        for name in ("onset", "duration"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, Fraction):
                object.__setattr__(self, name, Fraction(value))
        if (self.rel_position is None) != (self.duration is None):
            raise ValidationError(
                "rel_position and duration must both be present or both absent"
            )
        if self.rel_position is not None:
            object.__setattr__(self, "rel_position", int(self.rel_position))
            if self.onset is None:
                raise ValidationError("staff position and duration require an onset")

    @property
    def label(self) -> str:
        return format_label(self.class_name, self.onset, self.rel_position, self.duration)


def serialize_label(annotation: Annotation) -> str:
    """Inverse of :func:`parse_label`; emits the canonical form."""
    return annotation.label


@dataclass(frozen=True)
class Page:
    """One score page: extent in pixels, optional image, annotations."""

    id: str
    width: int
    height: int
    image_path: Optional[str] = None
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValidationError("page id must be non-empty")
        for name in ("width", "height"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValidationError(f"page {name} must be a positive integer")
        object.__setattr__(self, "annotations", tuple(self.annotations))
        for index, ann in enumerate(self.annotations):
            box = ann.bbox
            if box.x_min < 0 or box.y_min < 0 or box.x_max > self.width or box.y_max > self.height:
                raise ValidationError(
                    f"page {self.id!r} annotation {index} bbox {box.as_list()} "
                    f"outside extent {self.width}x{self.height}"
                )

    def with_annotations(self, annotations) -> "Page":
        return Page(self.id, self.width, self.height, self.image_path, tuple(annotations))


@dataclass(frozen=True)
class Dataset:
    """Ordered pages plus the class registry covering every annotation."""

    pages: tuple[Page, ...] = ()
    class_registry: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "pages", tuple(self.pages))
        object.__setattr__(self, "class_registry", tuple(self.class_registry))
        seen: set[str] = set()
        for name in self.class_registry:
            if not _CLASS_NAME_RE.match(name):
                raise ValidationError(f"bad registry class name {name!r}")
            if name in seen:
                raise ValidationError(f"duplicate registry class {name!r}")
            seen.add(name)
        page_ids: set[str] = set()
        for page in self.pages:
            if page.id in page_ids:
                raise ValidationError(f"duplicate page id {page.id!r}")
            page_ids.add(page.id)
            for ann in page.annotations:
                if ann.class_name not in seen:
                    raise ValidationError(
                        f"class {ann.class_name!r} on page {page.id!r} missing from registry"
                    )

    @property
    def num_annotations(self) -> int:
        return sum(len(page.annotations) for page in self.pages)

    def annotations(self):
        for page in self.pages:
            yield from page.annotations


def _round3(value: float) -> float:
    return float(f"{float(value):.3f}")


def dataset_to_doc(dataset: Dataset) -> dict:
    """Plain-JSON document for a dataset; box coordinates at 3 decimals."""
    pages = []
    for page in dataset.pages:
        entry: dict = {
            "id": page.id,
            "width": page.width,
            "height": page.height,
            "annotations": [
                {"label": ann.label, "bbox": [_round3(v) for v in ann.bbox.as_list()]}
                for ann in page.annotations
            ],
        }
        if page.image_path is not None:
            entry["image"] = page.image_path
        pages.append(entry)
    return {"class_registry": list(dataset.class_registry), "pages": pages}


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise SchemaError(f"missing {key!r} in {where}")
    value = obj[key]
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaError(f"{where}: {key!r} must be an integer")
    elif not isinstance(value, kind):
        raise SchemaError(f"{where}: {key!r} must be {kind.__name__}")
    return value


def dataset_from_doc(doc) -> Dataset:
    """Validated dataset from a plain-JSON document."""
    if not isinstance(doc, dict):
        raise SchemaError("dataset document must be an object")
    registry = _require(doc, "class_registry", list, "dataset")
    raw_pages = _require(doc, "pages", list, "dataset")
    for name in registry:
        if not isinstance(name, str):
            raise SchemaError("class_registry entries must be strings")
    pages = []
    for page_index, raw in enumerate(raw_pages):
        where = f"pages[{page_index}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where} must be an object")
        page_id = _require(raw, "id", str, where)
        width = _require(raw, "width", int, where)
        height = _require(raw, "height", int, where)
        image = raw.get("image")
        if image is not None and not isinstance(image, str):
            raise SchemaError(f"{where}: 'image' must be a string")
        raw_anns = _require(raw, "annotations", list, where)
        annotations = []
        for ann_index, raw_ann in enumerate(raw_anns):
            ann_where = f"{where}.annotations[{ann_index}]"
            if not isinstance(raw_ann, dict):
                raise SchemaError(f"{ann_where} must be an object")
            label = _require(raw_ann, "label", str, ann_where)
            bbox = _require(raw_ann, "bbox", list, ann_where)
            if len(bbox) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox):
                raise SchemaError(f"{ann_where}: 'bbox' must be four numbers")
            class_name, onset, rel_position, duration = parse_label(label)
            annotations.append(
                Annotation(class_name, BBox(*map(float, bbox)), onset, rel_position, duration)
            )
        pages.append(Page(page_id, width, height, image, tuple(annotations)))
    return Dataset(tuple(pages), tuple(registry))


def load_dataset(path: str | Path) -> Dataset:
    """Load and validate a dataset document from ``path``."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return dataset_from_doc(doc)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the canonical dataset document; validates before any write.

    Output bytes are deterministic, so equal datasets produce identical
    files and save/load/save is byte-stable.
    """
    if not isinstance(dataset, Dataset):
        raise ValidationError("save_dataset expects a Dataset")
    atomic_write_bytes(path, canonical_json_bytes(dataset_to_doc(dataset)))
