"""Corpus-level comparison of decision rules.

Covers empirical CDFs of per-segment scores and their first-order stochastic
dominance, size-conditioned false-/non-detection histograms, non-detection
heatmaps, and a few diagnostics of where the two rules disagree. Writers emit
raw counts as CSV or PGM so any presentation can be rebuilt from them.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
import csv
from dataclasses import dataclass
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
from scipy import ndimage

from .components import ComponentSet
from .const import (
    DEFAULT_BIN_EDGES,
    DEFAULT_MIOU_BINS,
    HEATMAP_OBJECT_LEVEL,
    HEATMAP_PIXEL_LEVEL,
    PGM_MAX_16BIT,
    RULE_BAYES,
    RULE_ML,
    SIDECAR_SUFFIX,
)
from .exceptions import EmptyInputError, InvariantError, ShapeMismatchError
from .metrics import SegmentMatch
from .tensor_io import LabelMap, write_pgm

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous step CDF of a sample in [0, 1]."""

    values: np.ndarray

    @property
    def count(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def __call__(self, x: float | np.ndarray) -> float | np.ndarray:
        """Evaluate F(x) = #(samples ≤ x) / count."""
        hits = np.searchsorted(self.values, x, side="right")
        if np.ndim(hits) == 0:
            return float(hits) / self.count
        return hits.astype(np.float64) / self.count


@dataclass(frozen=True)
class DominanceResult:
    """Outcome of a first-order dominance check."""

    dominated: bool
    violation: float

    def holds_within(self, tolerance: float) -> bool:
        return self.violation <= tolerance

    def to_json(self) -> dict[str, Any]:
        return {"dominated": self.dominated, "violation": self.violation}


@dataclass(frozen=True)
class SizeHistogram:
    """Per-rule segment counts over size bins ``[e_i, e_{i+1})``.

    Sizes below the first edge are counted in ``underflow``, sizes at or above
    the last edge in ``overflow``.
    """

    edges: tuple[float, ...]
    counts: dict[str, np.ndarray]
    underflow: dict[str, int]
    overflow: dict[str, int]

    @property
    def num_bins(self) -> int:
        return len(self.edges) - 1

    def total(self, rule: str) -> int:
        return int(self.counts[rule].sum()) + self.underflow[rule] + self.overflow[rule]

    @property
    def ratio(self) -> list[float | None]:
        """Bayes count / ML count per bin; None where the ML count is 0."""
        bayes, ml = self.counts[RULE_BAYES], self.counts[RULE_ML]
        return [
            float(b) / float(m) if m > 0 else None for b, m in zip(bayes, ml)
        ]

    def to_json(self) -> dict[str, Any]:
        return {
            "edges": [_json_edge(e) for e in self.edges],
            "counts": {rule: [int(v) for v in c] for rule, c in self.counts.items()},
            "underflow": dict(self.underflow),
            "overflow": dict(self.overflow),
            "ratio": self.ratio,
        }


@dataclass(frozen=True)
class Heatmap:
    """H×W accumulation counts of non-detected ground-truth pixels."""

    counts: np.ndarray
    kind: str

    def __add__(self, other: Heatmap) -> Heatmap:
        if other.kind != self.kind or other.counts.shape != self.counts.shape:
            raise ShapeMismatchError("Only heatmaps of equal kind and shape can be merged")
        return Heatmap(self.counts + other.counts, self.kind)

    @property
    def max_count(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0


@dataclass(frozen=True)
class DisagreementStats:
    """Where the ML prediction differs from the Bayes prediction."""

    mask: np.ndarray
    rate: float
    boundary_share: float | None
    switched_to: np.ndarray
    switched_from: np.ndarray

    def to_json(self) -> dict[str, Any]:
        return {
            "rate": self.rate,
            "boundary_share": self.boundary_share,
            "switched_to": [int(v) for v in self.switched_to],
            "switched_from": [int(v) for v in self.switched_from],
        }


@dataclass(frozen=True)
class MiouHistogram:
    """Histogram of per-image mIoU values per rule."""

    edges: np.ndarray
    counts: dict[str, np.ndarray]
    bayes_better_share: float

    def to_json(self) -> dict[str, Any]:
        return {
            "edges": [float(e) for e in self.edges],
            "counts": {rule: [int(v) for v in c] for rule, c in self.counts.items()},
            "bayes_better_share": self.bayes_better_share,
        }


def _json_edge(edge: float) -> float | str:
    return "inf" if np.isinf(edge) else float(edge)


def empirical_cdf(values: Sequence[float] | np.ndarray) -> EmpiricalCdf:
    """Build the empirical CDF of scores in [0, 1].

    Raises:
        EmptyInputError: If ``values`` is empty.
        InvariantError: If a value lies outside [0, 1] or is NaN.
    """
    data = np.asarray(values, dtype=np.float64).reshape(-1)
    if data.size == 0:
        raise EmptyInputError("An empirical CDF needs at least one value")
    if not np.all((data >= 0.0) & (data <= 1.0)):
        bad = data[~((data >= 0.0) & (data <= 1.0))][0]
        raise InvariantError(f"CDF sample {bad} is outside [0, 1]")
    ordered = np.sort(data)
    ordered.setflags(write=False)
    return EmpiricalCdf(ordered)


def dominates_first_order(f1: EmpiricalCdf, f2: EmpiricalCdf) -> DominanceResult:
    """Check F1 ≺ F2, that is F1(x) ≥ F2(x) for all x.

    Both functions are steps that only change at sample points, so evaluating
    on the merged sample grid is exact. The violation is the largest amount by
    which F2 exceeds F1.
    """
    grid = np.union1d(f1.values, f2.values)
    gap = np.asarray(f2(grid)) - np.asarray(f1(grid))
    violation = max(0.0, float(gap.max()))
    return DominanceResult(dominated=violation == 0.0, violation=violation)


def mean_cdf_gap(f1: EmpiricalCdf, f2: EmpiricalCdf) -> float:
    """Return the integral of F1 − F2 over [0, 1].

    For a sample in [0, 1] the integral of its CDF is 1 − mean, so the gap is
    mean(F2 sample) − mean(F1 sample).
    """
    return f2.mean - f1.mean


def _check_edges(edges: Sequence[float]) -> tuple[float, ...]:
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2:
        raise InvariantError("A size histogram needs at least two bin edges")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise InvariantError(f"Bin edges must be strictly increasing, got {edges}")
    return edges


def _bin_sizes(
    sizes: Sequence[int], edges: tuple[float, ...]
) -> tuple[np.ndarray, int, int]:
    """Count sizes per regular bin plus below-first and at-or-above-last edge."""
    values = np.asarray(sizes, dtype=np.float64)
    positions = np.searchsorted(np.asarray(edges), values, side="right") - 1
    num_bins = len(edges) - 1
    underflow = int(np.count_nonzero(positions < 0))
    overflow = int(np.count_nonzero(positions >= num_bins))
    regular = positions[(positions >= 0) & (positions < num_bins)]
    counts = np.bincount(regular, minlength=num_bins).astype(np.int64)
    return counts, underflow, overflow


def _size_histogram(
    sizes_per_rule: Mapping[str, Sequence[int]], edges: tuple[float, ...]
) -> SizeHistogram:
    counts, underflow, overflow = {}, {}, {}
    for rule in (RULE_BAYES, RULE_ML):
        counts[rule], underflow[rule], overflow[rule] = _bin_sizes(
            sizes_per_rule[rule], edges
        )
    return SizeHistogram(edges=edges, counts=counts, underflow=underflow, overflow=overflow)


def detection_histograms(
    matches: Mapping[str, Sequence[SegmentMatch]],
    class_id: int,
    bin_edges: Sequence[float] = DEFAULT_BIN_EDGES,
) -> tuple[SizeHistogram, SizeHistogram]:
    """Histogram false- and non-detections of a class by segment size.

    Args:
        matches: Segment matches of every test image, keyed by rule
            (``bayes`` and ``ml``).
        class_id: Class to histogram.
        bin_edges: Strictly increasing size edges shared by both rules.

    Returns:
        The false-detection histogram (unmatched predicted segments by
        predicted size) and the non-detection histogram (recall-0 ground-truth
        segments by ground-truth size).
    """
    edges = _check_edges(bin_edges)
    missing = {RULE_BAYES, RULE_ML} - set(matches)
    if missing:
        raise InvariantError(f"Missing segment matches for rules {sorted(missing)}")
    false_sizes = {
        rule: [s.segment.size for m in matches[rule] for s in m.false_detections(class_id)]
        for rule in (RULE_BAYES, RULE_ML)
    }
    missed_sizes = {
        rule: [s.segment.size for m in matches[rule] for s in m.non_detections(class_id)]
        for rule in (RULE_BAYES, RULE_ML)
    }
    return _size_histogram(false_sizes, edges), _size_histogram(missed_sizes, edges)


def nondetection_heatmaps(
    gt_sets: Sequence[ComponentSet],
    pred_labels: Mapping[str, Sequence[LabelMap]],
    class_id: int,
) -> dict[str, tuple[Heatmap, Heatmap]]:
    """Accumulate pixel- and object-level non-detection heatmaps per rule.

    The pixel-level map counts ground-truth pixels of the class predicted as
    another class. The object-level map counts every pixel of a ground-truth
    segment none of whose pixels is predicted as its class.

    Both maps read the ground truth from ``gt_sets``, so only the pixels of
    segments that survived post-processing are counted. Pass sets built with
    ``min_size=1`` to count every ground-truth pixel of the class.

    Returns:
        ``{rule: (pixel_level, object_level)}``.

    Raises:
        EmptyInputError: If there are no ground-truth sets.
        ShapeMismatchError: If a prediction list or map does not line up with
            the ground truth.
    """
    if not gt_sets:
        raise EmptyInputError("No ground-truth component sets to accumulate")
    shape = gt_sets[0].shape
    heatmaps: dict[str, tuple[Heatmap, Heatmap]] = {}
    for rule, labels in pred_labels.items():
        if len(labels) != len(gt_sets):
            raise ShapeMismatchError(
                f"{len(labels)} {rule} predictions for {len(gt_sets)} ground-truth sets"
            )
        pixel = np.zeros(shape, dtype=np.int64)
        objects = np.zeros(shape, dtype=np.int64)
        for index, (gt_set, pred) in enumerate(zip(gt_sets, labels)):
            if gt_set.shape != shape or pred.shape != shape:
                raise ShapeMismatchError(
                    f"Image {index} does not match heatmap shape {shape}", index=index
                )
            predicted = pred.data == class_id
            pixel += gt_set.class_mask(class_id) & ~predicted
            for seg in gt_set.of_class(class_id):
                seg_mask = seg.mask(shape)
                if not (seg_mask & predicted).any():
                    objects += seg_mask
        heatmaps[rule] = (
            Heatmap(pixel, HEATMAP_PIXEL_LEVEL),
            Heatmap(objects, HEATMAP_OBJECT_LEVEL),
        )
    return heatmaps


def _boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels with a differently labelled pixel in their 3×3 neighbourhood."""
    return ndimage.maximum_filter(labels, size=3, mode="nearest") != ndimage.minimum_filter(
        labels, size=3, mode="nearest"
    )


def rule_disagreement(bayes: LabelMap, ml: LabelMap, gt: LabelMap) -> DisagreementStats:
    """Locate pixels where the two rules decide differently.

    ``boundary_share`` is the fraction of disagreeing pixels that lie on a
    ground-truth class boundary; it is None when the rules agree everywhere.
    """
    if not bayes.shape == ml.shape == gt.shape:
        raise ShapeMismatchError(
            f"Bayes {bayes.shape}, ML {ml.shape} and ground truth {gt.shape} differ"
        )
    mask = bayes.data != ml.data
    disagreeing = int(mask.sum())
    boundary = _boundary_mask(gt.data)
    n = gt.num_classes
    return DisagreementStats(
        mask=mask,
        rate=disagreeing / mask.size,
        boundary_share=(
            float((mask & boundary).sum()) / disagreeing if disagreeing else None
        ),
        switched_to=np.bincount(ml.data[mask], minlength=n),
        switched_from=np.bincount(bayes.data[mask], minlength=n),
    )


def nesting_fraction(
    bayes_set: ComponentSet, ml_labels: LabelMap, class_id: int
) -> float | None:
    """Share of Bayes segments of a class lying entirely in ML pixels of it."""
    if bayes_set.shape != ml_labels.shape:
        raise ShapeMismatchError(
            f"Bayes segments on {bayes_set.shape} vs ML labels {ml_labels.shape}"
        )
    segments = bayes_set.of_class(class_id)
    if not segments:
        return None
    inside = ml_labels.data == class_id
    nested = sum(
        1
        for seg in segments
        if all(inside[row, start:stop].all() for row, start, stop in seg.runs)
    )
    return nested / len(segments)


def miou_histogram(
    per_image: Mapping[str, Sequence[float]], bins: int = DEFAULT_MIOU_BINS
) -> MiouHistogram:
    """Bin per-image mIoU values of both rules over [0, 1].

    Raises:
        EmptyInputError: If no images are given.
        ShapeMismatchError: If the rules were evaluated on different numbers
            of images.
    """
    bayes = np.asarray(per_image[RULE_BAYES], dtype=np.float64)
    ml = np.asarray(per_image[RULE_ML], dtype=np.float64)
    if bayes.size == 0:
        raise EmptyInputError("No per-image mIoU values")
    if bayes.size != ml.size:
        raise ShapeMismatchError(f"{bayes.size} Bayes vs {ml.size} ML mIoU values")
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = {
        RULE_BAYES: np.histogram(bayes, bins=edges)[0],
        RULE_ML: np.histogram(ml, bins=edges)[0],
    }
    return MiouHistogram(
        edges=edges,
        counts=counts,
        bayes_better_share=float(np.count_nonzero(bayes > ml)) / bayes.size,
    )


def write_cdf_csv(path: str | Path, cdfs: Mapping[str, EmpiricalCdf]) -> None:
    """Write ``x, F_bayes, F_ml`` evaluated on the merged sample grid plus 0 and 1."""
    bayes, ml = cdfs[RULE_BAYES], cdfs[RULE_ML]
    grid = np.union1d(np.union1d(bayes.values, ml.values), [0.0, 1.0])
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["x", "F_bayes", "F_ml"])
        for x, fb, fm in zip(grid, bayes(grid), ml(grid)):
            writer.writerow([repr(float(x)), repr(float(fb)), repr(float(fm))])
    _LOGGER.debug("SegDecide Analysis: Wrote %d CDF rows to %s", grid.size, path)


def write_histogram_csv(path: str | Path, histogram: SizeHistogram) -> None:
    """Write ``bin_lo, bin_hi, bayes, ml, ratio`` including both overflow rows."""
    edges = histogram.edges
    rows: list[list[Any]] = [
        [
            "-inf",
            repr(edges[0]),
            histogram.underflow[RULE_BAYES],
            histogram.underflow[RULE_ML],
            _ratio_cell(histogram.underflow[RULE_BAYES], histogram.underflow[RULE_ML]),
        ]
    ]
    for index, ratio in enumerate(histogram.ratio):
        rows.append(
            [
                repr(edges[index]),
                repr(edges[index + 1]),
                int(histogram.counts[RULE_BAYES][index]),
                int(histogram.counts[RULE_ML][index]),
                "" if ratio is None else repr(ratio),
            ]
        )
    rows.append(
        [
            repr(edges[-1]),
            "inf",
            histogram.overflow[RULE_BAYES],
            histogram.overflow[RULE_ML],
            _ratio_cell(histogram.overflow[RULE_BAYES], histogram.overflow[RULE_ML]),
        ]
    )
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "bayes", "ml", "ratio"])
        writer.writerows(rows)


def _ratio_cell(bayes: int, ml: int) -> str:
    return repr(bayes / ml) if ml else ""


def write_heatmap(path: str | Path, heatmap: Heatmap) -> None:
    """Write a heatmap as PGM scaled by its maximum, plus a JSON sidecar.

    Counts up to 65535 are written unscaled; larger maxima are scaled down so
    the sidecar's ``max_count`` is needed to recover the counts.
    """
    path = Path(path)
    peak = heatmap.max_count
    if peak == 0:
        image, max_val = np.zeros(heatmap.counts.shape, dtype=np.uint16), 1
    elif peak <= PGM_MAX_16BIT:
        image, max_val = heatmap.counts, peak
    else:
        image = np.rint(heatmap.counts / peak * PGM_MAX_16BIT).astype(np.uint16)
        max_val = PGM_MAX_16BIT
    write_pgm(path, image, max_val)
    sidecar = path.with_name(path.name + SIDECAR_SUFFIX)
    with open(sidecar, "w", encoding="utf-8") as handle:
        json.dump(
            {"kind": heatmap.kind, "max_count": peak, "pgm_max_val": max_val},
            handle,
            sort_keys=True,
        )
