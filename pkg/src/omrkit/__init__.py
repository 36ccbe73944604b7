"""omrkit: desk-scale tooling for music-score symbol detection datasets."""

from .align import RigidTransform, estimate_transform, transfer_annotations, warp_image
from .augment import (
    AugmentConfig,
    Crop,
    CropBank,
    augment_dataset,
    augment_page,
    build_crop_bank,
    expected_wait,
    sample_crops,
)
from .detect import (
    CachedBoxTable,
    Detection,
    MapStack,
    PostConfig,
    build_cached_boxes,
    detect,
    extract_markers,
    read_maps,
    size_bias_report,
    write_maps,
)
from .evaluate import EvalResult, evaluate, evaluate_grouped, iou, match_detections
from .image import GrayImage, read_pgm, write_pgm
from .model import (
    Annotation,
    BBox,
    Dataset,
    Page,
    Rational,
    load_dataset,
    parse_label,
    save_dataset,
    serialize_label,
)
from .stats import ClassStats, class_histogram, coverage_topk, majority_dominates, select_rare
from .synth import (
    DegradeSpec,
    NoiseSpec,
    PageSpec,
    degrade_image,
    generate_dataset,
    generate_page,
    render_maps,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AugmentConfig",
    "BBox",
    "CachedBoxTable",
    "ClassStats",
    "Crop",
    "CropBank",
    "Dataset",
    "DegradeSpec",
    "Detection",
    "EvalResult",
    "GrayImage",
    "MapStack",
    "NoiseSpec",
    "Page",
    "PageSpec",
    "PostConfig",
    "Rational",
    "RigidTransform",
    "augment_dataset",
    "augment_page",
    "build_cached_boxes",
    "build_crop_bank",
    "class_histogram",
    "coverage_topk",
    "degrade_image",
    "detect",
    "estimate_transform",
    "evaluate",
    "evaluate_grouped",
    "expected_wait",
    "extract_markers",
    "generate_dataset",
    "generate_page",
    "iou",
    "load_dataset",
    "majority_dominates",
    "match_detections",
    "parse_label",
    "read_maps",
    "read_pgm",
    "render_maps",
    "sample_crops",
    "save_dataset",
    "select_rare",
    "serialize_label",
    "size_bias_report",
    "transfer_annotations",
    "warp_image",
    "write_maps",
    "write_pgm",
]
