"""Instance-segmentation evaluation: mask IoU, per-class average precision
with greedy score-ordered matching, and mAP tables over IoU thresholds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import InstanceSet
from .raster import BinaryMask, ValidationError

PAPER_THRESHOLDS = (0.25, 0.5, 0.7, 0.75)
COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class Prediction:
    image_id: str
    label: int  # within-image instance label, used only for tie-breaking
    class_id: int
    score: float
    mask: BinaryMask


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    label: int
    class_id: int
    mask: BinaryMask


@dataclass
class MatchResult:
    true_positives: np.ndarray  # bool per prediction, ranked by score
    scores: np.ndarray
    num_gt: int


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two masks; 0 when the union is empty."""
    if a.data.shape != b.data.shape:
        raise ValidationError(
            f"mask dimension mismatch: {a.data.shape} vs {b.data.shape}"
        )
    inter = int(np.count_nonzero(a.data & b.data))
    union = int(np.count_nonzero(a.data | b.data))
    return inter / union if union else 0.0


def _rank_predictions(preds: list[Prediction]) -> list[Prediction]:
    # descending score; ties by image id then label for determinism
    return sorted(preds, key=lambda p: (-p.score, p.image_id, p.label))


def match_predictions(preds: list[Prediction], gts: list[GroundTruth],
                      iou_threshold: float) -> MatchResult:
    """Greedy matching in descending score order.  A prediction is a TP iff
    its best-IoU unmatched same-image ground truth reaches the threshold;
    each ground truth matches at most once.  IoU ties pick the lowest ground
    truth index."""
    by_image: dict[str, list[int]] = {}
    for i, g in enumerate(gts):
        by_image.setdefault(g.image_id, []).append(i)
    matched = np.zeros(len(gts), dtype=bool)
    ranked = _rank_predictions(preds)
    tp = np.zeros(len(ranked), dtype=bool)
    scores = np.array([p.score for p in ranked], dtype=np.float64)
    for k, p in enumerate(ranked):
        best_iou = 0.0
        best_gt = -1
        for gi in by_image.get(p.image_id, ()):
            if matched[gi]:
                continue
            v = iou(p.mask, gts[gi].mask)
            if v > best_iou:
                best_iou = v
                best_gt = gi
        if best_gt >= 0 and best_iou >= iou_threshold:
            tp[k] = True
            matched[best_gt] = True
    return MatchResult(true_positives=tp, scores=scores, num_gt=len(gts))


def ap_from_matches(result: MatchResult, eleven_point: bool = False) -> float:
    """Area under the precision-recall curve.

    Default is all-points interpolation (precision envelope, VOC-2010+);
    eleven_point=True gives the legacy 11-point average.
    """
    if result.num_gt == 0:
        raise ValidationError("AP undefined with zero ground truths")
    if len(result.true_positives) == 0:
        return 0.0
    tp_cum = np.cumsum(result.true_positives)
    fp_cum = np.cumsum(~result.true_positives)
    recall = tp_cum / result.num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    if eleven_point:
        ap = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            mask = recall >= r
            ap += precision[mask].max() if mask.any() else 0.0
        return ap / 11.0
    # precision envelope, then sum rectangle areas between recall steps
    env = np.maximum.accumulate(precision[::-1])[::-1]
    r_prev = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        if r > r_prev:
            ap += (r - r_prev) * p
            r_prev = r
    return float(ap)


def average_precision(preds: list[Prediction], gts: list[GroundTruth],
                      iou_threshold: float, eleven_point: bool = False) -> float:
    """AP for one class at one IoU threshold; inputs must already be filtered
    to a single class."""
    if not gts:
        raise ValidationError("AP undefined with zero ground truths")
    return ap_from_matches(match_predictions(preds, gts, iou_threshold), eleven_point)


def map_at(thresholds, preds: list[Prediction], gts: list[GroundTruth],
           eleven_point: bool = False) -> dict[float, float]:
    """Mean over classes (with >= 1 ground truth) of AP at each threshold.

    Classes with no ground truths are skipped; with no ground truths at all,
    every entry is 0."""
    classes = sorted({g.class_id for g in gts})
    out: dict[float, float] = {}
    for t in thresholds:
        if not classes:
            out[t] = 0.0
            continue
        aps = []
        for c in classes:
            aps.append(
                average_precision(
                    [p for p in preds if p.class_id == c],
                    [g for g in gts if g.class_id == c],
                    t,
                    eleven_point,
                )
            )
        out[t] = float(np.mean(aps))
    return out


def coco_ap(preds: list[Prediction], gts: list[GroundTruth]) -> float:
    """AP averaged over IoU thresholds 0.50:0.05:0.95."""
    table = map_at(COCO_THRESHOLDS, preds, gts)
    return float(np.mean(list(table.values())))


def dataset_from_instance_sets(sets: list[InstanceSet]):
    """Flatten per-image instance sets into prediction/ground-truth records."""
    preds = []
    for s in sets:
        for i, inst in enumerate(s.instances, start=1):
            preds.append(
                Prediction(
                    image_id=s.image_id,
                    label=i,
                    class_id=inst.class_id,
                    score=inst.score,
                    mask=inst.mask,
                )
            )
    return preds


def ground_truth_from_instance_sets(sets: list[InstanceSet]):
    gts = []
    for s in sets:
        for i, inst in enumerate(s.instances, start=1):
            gts.append(
                GroundTruth(
                    image_id=s.image_id, label=i, class_id=inst.class_id, mask=inst.mask
                )
            )
    return gts
