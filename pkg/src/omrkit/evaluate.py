"""Detection scoring: IoU, greedy matching, per-class AP, macro mAP.

Macro averaging is the headline number on purpose: with extreme class
imbalance a detector can ignore rare classes entirely and still post a
near-perfect micro score, while the macro mean drops in proportion to
the failed classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import BBox


@dataclass(frozen=True)
class ClassEval:
    """Per-class outcome at a fixed IoU threshold."""

    ap: float
    num_gt: int
    num_det: int
    tp: int
    fp: int


@dataclass(frozen=True)
class EvalResult:
    per_class: Mapping[str, ClassEval]
    map_macro: float
    iou_threshold: float
    total_gt: int = 0
    total_det: int = 0
    total_tp: int = 0
    total_fp: int = 0


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; zero when the union has zero area."""
    inter_w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    inter_h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if inter_w <= 0.0 or inter_h <= 0.0:
        return 0.0
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def greedy_match(
    detections: Sequence,
    ground_truths: Sequence,
    iou_threshold: float,
    require_same_class: bool = True,
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching, detections in descending score order.

    Ties in score keep input order; each detection takes the unmatched
    ground truth of highest IoU at or above the threshold (IoU ties go to
    the earlier ground truth). Returns (detection index, gt index) pairs.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    taken = [False] * len(ground_truths)
    pairs: list[tuple[int, int]] = []
    for det_index in order:
        det = detections[det_index]
        best_iou = 0.0
        best_gt = -1
        for gt_index, gt in enumerate(ground_truths):
            if taken[gt_index]:
                continue
            if require_same_class and gt.class_name != det.class_name:
                continue
            overlap = iou(det.bbox, gt.bbox)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_gt = gt_index
        if best_gt >= 0:
            taken[best_gt] = True
            pairs.append((det_index, best_gt))
    return pairs


def match_detections(
    detections: Sequence, ground_truths: Sequence, iou_threshold: float
) -> list[bool]:
    """Per-detection TP flags, aligned with the input detection order."""
    matched = {d for d, _ in greedy_match(detections, ground_truths, iou_threshold)}
    return [index in matched for index in range(len(detections))]


def average_precision(tp_flags_by_score: Sequence[bool], num_gt: int) -> float:
    """Area under the precision-recall curve with the precision envelope.

    ``tp_flags_by_score`` must already be in descending score order.
    All-point interpolation: precision at each recall level is the
    maximum precision at any equal-or-higher recall.
    """
    if num_gt == 0:
        return 0.0
    if not tp_flags_by_score:
        return 0.0
    flags = np.asarray(tp_flags_by_score, dtype=np.float64)
    tp_cum = np.cumsum(flags)
    fp_cum = np.cumsum(1.0 - flags)
    recall = tp_cum / num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _accumulate(groups, iou_threshold):
    """Pool per-class scored flags and gt counts over (dets, gts) groups."""
    scored: dict[str, list[tuple[float, int, bool]]] = {}
    gt_counts: dict[str, int] = {}
    for group_index, (dets, gts) in enumerate(groups):
        for gt in gts:
            gt_counts[gt.class_name] = gt_counts.get(gt.class_name, 0) + 1
        flags = match_detections(dets, gts, iou_threshold)
        for det_index, det in enumerate(dets):
            scored.setdefault(det.class_name, []).append(
                (-det.score, group_index * 10**9 + det_index, flags[det_index])
            )
    return scored, gt_counts


def evaluate(detections, ground_truths, iou_threshold: float = 0.5) -> EvalResult:
    """Score one detection set against one ground-truth set."""
    return evaluate_grouped([(detections, ground_truths)], iou_threshold)


def evaluate_grouped(groups, iou_threshold: float = 0.5) -> EvalResult:
    """Score several (detections, ground_truths) groups jointly.

    Matching never crosses groups; the precision-recall curve pools all
    scores. Classes without any ground truth are reported but excluded
    from the macro mean.
    """
    groups = list(groups)
    scored, gt_counts = _accumulate(groups, iou_threshold)
    class_names = sorted(set(scored) | set(gt_counts))
    per_class: dict[str, ClassEval] = {}
    ap_values = []
    totals = {"gt": 0, "det": 0, "tp": 0, "fp": 0}
    for name in class_names:
        entries = sorted(scored.get(name, []))
        flags = [hit for _, _, hit in entries]
        num_gt = gt_counts.get(name, 0)
        tp = sum(flags)
        fp = len(flags) - tp
        ap = average_precision(flags, num_gt)
        per_class[name] = ClassEval(ap, num_gt, len(flags), tp, fp)
        if num_gt > 0:
            ap_values.append(ap)
        totals["gt"] += num_gt
        totals["det"] += len(flags)
        totals["tp"] += tp
        totals["fp"] += fp
    map_macro = float(np.mean(ap_values)) if ap_values else 0.0
    return EvalResult(
        per_class,
        map_macro,
        iou_threshold,
        total_gt=totals["gt"],
        total_det=totals["det"],
        total_tp=totals["tp"],
        total_fp=totals["fp"],
    )
