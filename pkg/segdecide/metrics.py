"""Pixel-level confusion statistics and segment-level matching scores."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
import logging
from typing import Any

import numpy as np

from .components import ComponentSet, Segment
from .exceptions import EmptyInputError, ShapeMismatchError
from .tensor_io import LabelMap

_LOGGER = logging.getLogger(__name__)


class MiouPolicy(str, Enum):
    """How classes with undefined IoU enter the mean."""

    SKIP_UNDEFINED = "skip_undefined"
    COUNT_UNDEFINED_AS_ZERO = "count_undefined_as_zero"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts[k][k̂] of pixels of true class k predicted as k̂."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.uint64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeMismatchError(f"Confusion matrix must be N×N, got {counts.shape}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zeros(cls, num_classes: int) -> ConfusionMatrix:
        return cls(np.zeros((num_classes, num_classes), dtype=np.uint64))

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.counts.shape != self.counts.shape:
            raise ShapeMismatchError(
                f"Cannot add {other.counts.shape} matrix to {self.counts.shape} matrix"
            )
        return ConfusionMatrix(self.counts + other.counts)

    def to_json(self) -> list[list[int]]:
        return [[int(v) for v in row] for row in self.counts]


@dataclass(frozen=True)
class ClassScore:
    """Precision, recall and IoU of one class; None when undefined."""

    precision: float | None
    recall: float | None
    iou: float | None

    def to_json(self) -> dict[str, float | None]:
        return {"precision": self.precision, "recall": self.recall, "iou": self.iou}


@dataclass(frozen=True)
class ClassScores:
    """Per-class scores indexed by class id."""

    scores: tuple[ClassScore, ...]

    def __getitem__(self, class_id: int) -> ClassScore:
        return self.scores[class_id]

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def ious(self) -> list[float | None]:
        return [score.iou for score in self.scores]

    def to_json(self) -> list[dict[str, float | None]]:
        return [score.to_json() for score in self.scores]


@dataclass(frozen=True)
class SegmentScore:
    """Scores of one segment against its same-class counterparts.

    For a predicted segment ``matched`` means it overlaps some ground-truth
    segment; for a ground-truth segment it means it was detected.
    """

    segment: Segment
    matched: bool
    precision: float
    recall: float
    iou: float

    def to_json(self) -> dict[str, Any]:
        return {
            "class": self.segment.class_id,
            "size": self.segment.size,
            "bbox": list(self.segment.bbox),
            "matched": self.matched,
            "precision": self.precision,
            "recall": self.recall,
            "iou": self.iou,
        }


@dataclass(frozen=True)
class SegmentMatch:
    """Segment scores of one image for predicted and ground-truth segments."""

    image_id: str
    pred_scores: tuple[SegmentScore, ...]
    gt_scores: tuple[SegmentScore, ...]

    def false_detections(self, class_id: int) -> list[SegmentScore]:
        return [
            s for s in self.pred_scores if s.segment.class_id == class_id and not s.matched
        ]

    def non_detections(self, class_id: int) -> list[SegmentScore]:
        return [
            s for s in self.gt_scores if s.segment.class_id == class_id and not s.matched
        ]


@dataclass(frozen=True)
class SegmentSummary:
    """Averages of per-segment scores of one class."""

    num_pred: int
    num_gt: int
    mean_precision: float | None
    mean_recall: float | None
    mean_iou: float | None
    false_detections: int
    non_detections: int

    def to_json(self) -> dict[str, Any]:
        return {
            "num_pred": self.num_pred,
            "num_gt": self.num_gt,
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "mean_iou": self.mean_iou,
            "false_detections": self.false_detections,
            "non_detections": self.non_detections,
        }


def confusion_matrix(pred: LabelMap, gt: LabelMap) -> ConfusionMatrix:
    """Count true-class/predicted-class pairs over all pixels.

    Raises:
        ShapeMismatchError: If shapes or class counts differ.
    """
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"Prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.num_classes != gt.num_classes:
        raise ShapeMismatchError(
            f"Prediction has {pred.num_classes} classes, ground truth {gt.num_classes}"
        )
    n = gt.num_classes
    pairs = gt.data.astype(np.int64).reshape(-1) * n + pred.data.reshape(-1)
    counts = np.bincount(pairs, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(counts.astype(np.uint64))


def _ratio(numerator: float, denominator: float) -> float | None:
    return float(numerator / denominator) if denominator > 0 else None


def class_scores(cm: ConfusionMatrix) -> ClassScores:
    """Compute precision, recall and IoU per class.

    A score whose denominator is zero is reported as None, never NaN.
    """
    counts = cm.counts.astype(np.float64)
    hits = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    scores = tuple(
        ClassScore(
            precision=_ratio(hits[j], predicted[j]),
            recall=_ratio(hits[j], actual[j]),
            iou=_ratio(hits[j], actual[j] + predicted[j] - hits[j]),
        )
        for j in range(cm.num_classes)
    )
    return ClassScores(scores)


def mean_iou(
    scores: ClassScores, policy: MiouPolicy = MiouPolicy.SKIP_UNDEFINED
) -> float:
    """Average the per-class IoU.

    Raises:
        EmptyInputError: If every IoU is undefined under the skip policy.
    """
    policy = MiouPolicy(policy)
    ious = scores.ious
    if policy is MiouPolicy.COUNT_UNDEFINED_AS_ZERO:
        return float(sum(v or 0.0 for v in ious) / len(ious)) if ious else 0.0
    defined = [v for v in ious if v is not None]
    if not defined:
        raise EmptyInputError("No class has a defined IoU")
    return float(sum(defined) / len(defined))


def _values_under(segment: Segment, array: np.ndarray) -> np.ndarray:
    """Gather ``array`` values at the segment's pixels."""
    return np.concatenate([array[row, start:stop] for row, start, stop in segment.runs])


def _owner_map(segments: Sequence[Segment], shape: tuple[int, int]) -> np.ndarray:
    owner = np.full(shape, -1, dtype=np.int64)
    for index, seg in enumerate(segments):
        for row, start, stop in seg.runs:
            owner[row, start:stop] = index
    return owner


def _score_side(
    segments: Sequence[Segment],
    counterparts: Sequence[Segment],
    shape: tuple[int, int],
) -> list[tuple[Segment, bool, float, float, float]]:
    """Return (segment, overlaps, own share, counterpart share, IoU) per segment.

    The counterpart region of a segment is the union of the opposite-side
    segments it intersects.
    """
    owner = _owner_map(counterparts, shape)
    results = []
    for seg in segments:
        under = _values_under(seg, owner)
        hit = under[under >= 0]
        overlap = int(hit.size)
        if overlap == 0:
            results.append((seg, False, 0.0, 0.0, 0.0))
            continue
        region = sum(counterparts[i].size for i in np.unique(hit))
        union = seg.size + region - overlap
        results.append((seg, True, overlap / seg.size, overlap / region, overlap / union))
    return results


def match_segments(pred_set: ComponentSet, gt_set: ComponentSet) -> SegmentMatch:
    """Score every predicted and ground-truth segment against the other side.

    A predicted segment is a correct object prediction when it intersects a
    same-class ground-truth segment; its precision is the share of its pixels
    inside ground-truth segments of its class. A ground-truth segment's recall
    is the share of its pixels covered by predicted segments of its class; a
    recall of 0 is a non-detection.

    Raises:
        ShapeMismatchError: If the two sets describe differently sized images.
    """
    if pred_set.shape != gt_set.shape:
        raise ShapeMismatchError(
            f"Predicted segments on {pred_set.shape} vs ground truth on {gt_set.shape}"
        )
    classes = sorted({s.class_id for s in pred_set.segments + gt_set.segments})
    pred_scores: list[SegmentScore] = []
    gt_scores: list[SegmentScore] = []
    for class_id in classes:
        preds, truths = pred_set.of_class(class_id), gt_set.of_class(class_id)
        for seg, hit, own, other, iou in _score_side(preds, truths, pred_set.shape):
            pred_scores.append(SegmentScore(seg, hit, own, other, iou))
        for seg, hit, own, other, iou in _score_side(truths, preds, gt_set.shape):
            gt_scores.append(SegmentScore(seg, hit, other, own, iou))
    return SegmentMatch(
        image_id=pred_set.image_id or gt_set.image_id,
        pred_scores=tuple(pred_scores),
        gt_scores=tuple(gt_scores),
    )


def _mean(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if len(values) else None


def segment_score_summary(matches: Sequence[SegmentMatch]) -> dict[int, SegmentSummary]:
    """Average per-segment scores per class over one or more images.

    Precision and IoU are averaged over predicted segments, recall over
    ground-truth segments.

    Raises:
        EmptyInputError: If there is not a single segment to average.
    """
    pred = [s for m in matches for s in m.pred_scores]
    truth = [s for m in matches for s in m.gt_scores]
    if not pred and not truth:
        raise EmptyInputError("No segments to summarise")
    summary: dict[int, SegmentSummary] = {}
    for class_id in sorted({s.segment.class_id for s in pred + truth}):
        class_pred = [s for s in pred if s.segment.class_id == class_id]
        class_truth = [s for s in truth if s.segment.class_id == class_id]
        summary[class_id] = SegmentSummary(
            num_pred=len(class_pred),
            num_gt=len(class_truth),
            mean_precision=_mean([s.precision for s in class_pred]),
            mean_recall=_mean([s.recall for s in class_truth]),
            mean_iou=_mean([s.iou for s in class_pred]),
            false_detections=sum(1 for s in class_pred if not s.matched),
            non_detections=sum(1 for s in class_truth if not s.matched),
        )
    return summary


@dataclass
class ImageResult:
    """Metrics of one image under one decision rule."""

    image_id: str
    confusion: ConfusionMatrix
    scores: ClassScores
    miou_skip: float
    miou_zero: float
    match: SegmentMatch

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "confusion": self.confusion.to_json(),
            "class_scores": self.scores.to_json(),
            "miou": {
                MiouPolicy.SKIP_UNDEFINED.value: self.miou_skip,
                MiouPolicy.COUNT_UNDEFINED_AS_ZERO.value: self.miou_zero,
            },
        }


@dataclass
class MetricsAccumulator:
    """Collects per-image results of one rule and merges them into corpus totals."""

    num_classes: int
    images: list[ImageResult] = field(default_factory=list)

    def add(
        self,
        image_id: str,
        pred: LabelMap,
        gt: LabelMap,
        pred_set: ComponentSet,
        gt_set: ComponentSet,
    ) -> ImageResult:
        """Evaluate one image and keep its result."""
        confusion = confusion_matrix(pred, gt)
        scores = class_scores(confusion)
        result = ImageResult(
            image_id=image_id,
            confusion=confusion,
            scores=scores,
            miou_skip=mean_iou(scores, MiouPolicy.SKIP_UNDEFINED),
            miou_zero=mean_iou(scores, MiouPolicy.COUNT_UNDEFINED_AS_ZERO),
            match=match_segments(pred_set, gt_set),
        )
        self.images.append(result)
        _LOGGER.debug(
            "SegDecide Metrics: %s mIoU %.4f (skip) / %.4f (zero)",
            image_id,
            result.miou_skip,
            result.miou_zero,
        )
        return result

    @property
    def pooled(self) -> ConfusionMatrix:
        total = ConfusionMatrix.zeros(self.num_classes)
        for image in self.images:
            total = total + image.confusion
        return total

    @property
    def matches(self) -> list[SegmentMatch]:
        return [image.match for image in self.images]

    def per_image_miou(self, policy: MiouPolicy = MiouPolicy.SKIP_UNDEFINED) -> list[float]:
        if MiouPolicy(policy) is MiouPolicy.SKIP_UNDEFINED:
            return [image.miou_skip for image in self.images]
        return [image.miou_zero for image in self.images]

    def per_image_class_iou(self, class_id: int) -> float | None:
        """Mean over images of one class's IoU, skipping images where undefined."""
        values = [
            image.scores[class_id].iou
            for image in self.images
            if image.scores[class_id].iou is not None
        ]
        return _mean(values)  # type: ignore[arg-type]

    def report_dict(self, include_images: bool = True) -> dict[str, Any]:
        """Return the JSON-ready metrics report of the accumulated corpus."""
        if not self.images:
            raise EmptyInputError("No images were evaluated")
        pooled = self.pooled
        pooled_scores = class_scores(pooled)
        summary = segment_score_summary(self.matches) if self._has_segments() else {}
        report: dict[str, Any] = {
            "num_images": len(self.images),
            "miou": {
                "per_image_mean": {
                    policy.value: float(np.mean(self.per_image_miou(policy)))
                    for policy in MiouPolicy
                },
                "pooled": {
                    policy.value: mean_iou(pooled_scores, policy) for policy in MiouPolicy
                },
            },
            "per_image_class_iou": [
                self.per_image_class_iou(k) for k in range(self.num_classes)
            ],
            "pooled_confusion": pooled.to_json(),
            "pooled_class_scores": pooled_scores.to_json(),
            "segments": {str(k): v.to_json() for k, v in summary.items()},
            "segment_scores": {
                "pred": [s.to_json() for m in self.matches for s in m.pred_scores],
                "gt": [s.to_json() for m in self.matches for s in m.gt_scores],
            },
        }
        if include_images:
            report["images"] = [image.to_json() for image in self.images]
        return report

    def _has_segments(self) -> bool:
        return any(m.pred_scores or m.gt_scores for m in self.matches)
