"""Detection metrics (IoU, precision/recall, AP, mAP) and loop metrics.

Box format is ``(x_min, y_min, x_max, y_max)``.  AP uses all-point
interpolation: the precision envelope is taken at every recall step, not at
11 fixed recall levels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

TP, FP = True, False


@dataclass(frozen=True)
class Box:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise InvalidInputError(f"malformed box {self}")

    @property
    def area(self):
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    confidence: float
    image_id: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    box: Box
    class_id: int
    image_id: int


def iou(a: Box, b: Box) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


@dataclass(frozen=True)
class MatchResult:
    detections: List[Detection]  # confidence-descending
    labels: List[bool]  # TP / FP per detection, aligned with ``detections``
    num_gt: int

    @property
    def tp(self):
        return sum(self.labels)

    @property
    def fp(self):
        return len(self.labels) - self.tp

    @property
    def fn(self):
        return self.num_gt - self.tp


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    class_id: int,
    iou_threshold: float = 0.5,
) -> MatchResult:
    """Greedy one-to-one matching of one class's detections to ground truth.

    Detections are visited by descending confidence (stable on input order).
    Each takes the still-unmatched ground truth on the same image with the
    highest IoU, provided that IoU reaches the threshold; otherwise it is a
    false positive.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise InvalidInputError(f"iou_threshold {iou_threshold} outside (0, 1]")
    cls_dets = sorted((d for d in dets if d.class_id == class_id), key=lambda d: -d.confidence)
    cls_gts = [g for g in gts if g.class_id == class_id]
    by_image = {}
    for i, g in enumerate(cls_gts):
        by_image.setdefault(g.image_id, []).append(i)
    used = [False] * len(cls_gts)
    labels = []
    for d in cls_dets:
        best, best_iou = None, iou_threshold
        for gi in by_image.get(d.image_id, ()):
            if used[gi]:
                continue
            o = iou(d.box, cls_gts[gi].box)
            if o >= best_iou and (best is None or o > best_iou):
                best, best_iou = gi, o
        if best is None:
            labels.append(FP)
        else:
            used[best] = True
            labels.append(TP)
    return MatchResult(cls_dets, labels, len(cls_gts))


def precision_recall(tp: int, fp: int, fn: int) -> Tuple[float, float]:
    if min(tp, fp, fn) < 0:
        raise InvalidInputError("counts must be non-negative")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r


def pr_curve(labels: Sequence[bool], num_gt: int) -> List[Tuple[float, float]]:
    """Cumulative ``(recall, precision)`` after each confidence-ordered detection."""
    points = []
    tp = 0
    for k, is_tp in enumerate(labels, start=1):
        tp += bool(is_tp)
        points.append((tp / num_gt if num_gt else 0.0, tp / k))
    return points


def average_precision(labels: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP from confidence-ordered TP/FP labels.

    Sums ``(R_{k+1} - R_k) * max_{R' >= R_{k+1}} P(R')`` over the recall steps,
    starting from recall 0.
    """
    if num_gt < 0:
        raise InvalidInputError("num_gt must be non-negative")
    if num_gt == 0 or not labels:
        return 0.0
    pts = pr_curve(labels, num_gt)
    recall = np.array([0.0] + [r for r, _ in pts])
    precision = np.array([0.0] + [p for _, p in pts])
    # envelope: running max from the right
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.flatnonzero(recall[1:] != recall[:-1])
    return float(np.sum((recall[steps + 1] - recall[steps]) * envelope[steps + 1]))


def mean_average_precision(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    num_classes: int,
    iou_threshold: float = 0.5,
    per_class: bool = False,
):
    """Unweighted mean of per-class AP over classes that have ground truth."""
    if num_classes < 1:
        raise InvalidInputError("num_classes must be >= 1")
    present = sorted({g.class_id for g in gts if 0 <= g.class_id < num_classes})
    if not present:
        raise DegenerateInputError("no ground truth boxes")
    aps = {}
    for c in present:
        m = match_detections(dets, gts, c, iou_threshold)
        aps[c] = average_precision(m.labels, m.num_gt)
    value = float(np.mean(list(aps.values())))
    return (value, aps) if per_class else value


def classification_metrics(probs: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """Argmax accuracy and macro-F1.  Ties resolve to the lowest class index."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidInputError("empty evaluation set")
    n_cls = probs.shape[1]
    pred = np.argmax(probs, axis=1)  # first maximum wins
    accuracy = float(np.mean(pred == labels))
    f1s = []
    for c in range(n_cls):
        tp = int(np.sum((pred == c) & (labels == c)))
        fp = int(np.sum((pred == c) & (labels != c)))
        fn = int(np.sum((pred != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return accuracy, float(np.mean(f1s))


def rounds_to_target(curve: Sequence[Tuple[int, float]], target: float) -> Optional[int]:
    """First round whose metric reaches ``target``; ``None`` if never reached."""
    if not curve:
        raise InvalidInputError("empty curve")
    for rnd, value in curve:
        if value >= target:
            return rnd
    return None


def _parse_box_lines(lines: Iterable[str], with_confidence: bool):
    ncols = 7 if with_confidence else 6
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != ncols:
            raise InvalidInputError(f"line {lineno}: expected {ncols} columns, got {len(parts)}")
        image_id, class_id = int(parts[0]), int(parts[1])
        rest = [float(v) for v in parts[2:]]
        if with_confidence:
            yield Detection(Box(*rest[1:]), class_id, rest[0], image_id)
        else:
            yield GroundTruth(Box(*rest), class_id, image_id)


def read_detections(lines: Iterable[str]) -> List[Detection]:
    """Parse ``image_id class_id confidence x_min y_min x_max y_max`` lines."""
    return list(_parse_box_lines(lines, True))


def read_ground_truth(lines: Iterable[str]) -> List[GroundTruth]:
    """Parse ``image_id class_id x_min y_min x_max y_max`` lines."""
    return list(_parse_box_lines(lines, False))
