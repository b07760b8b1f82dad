"""Connected components and the two segment post-processing steps.

Segments store their pixels as sorted horizontal runs
``[row, col_start, col_end)``. Post-processing first drops small components
and then merges same-class components separated by fewer than ``max_gap``
pixels, where the number of pixels in-between two segments is their minimum
Chebyshev distance minus one.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
import logging
from typing import Any

import numpy as np
from scipy import ndimage

from .const import (
    DEFAULT_CONNECTIVITY,
    DEFAULT_MAX_GAP,
    DEFAULT_MIN_SIZE,
    PROVENANCE_FILTERED,
    PROVENANCE_MERGED,
    PROVENANCE_RAW,
)
from .exceptions import InvariantError
from .tensor_io import LabelMap

_LOGGER = logging.getLogger(__name__)


def _runs_from_mask(mask: np.ndarray, row_offset: int = 0, col_offset: int = 0) -> np.ndarray:
    """Encode a boolean mask as row-major sorted runs (row, start, stop)."""
    padded = np.zeros((mask.shape[0], mask.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    steps = np.diff(padded, axis=1)
    start_rows, start_cols = np.nonzero(steps == 1)
    _, stop_cols = np.nonzero(steps == -1)
    runs = np.stack(
        [start_rows + row_offset, start_cols + col_offset, stop_cols + col_offset], axis=1
    ).astype(np.int32)
    runs.setflags(write=False)
    return runs


@dataclass(frozen=True)
class Segment:
    """A connected set of same-class pixels.

    Attributes:
        class_id: Class of every pixel in the segment.
        runs: K×3 int32 array of runs ``[row, col_start, col_end)``.
        size: Pixel count.
        bbox: Inclusive (min_row, min_col, max_row, max_col).
    """

    class_id: int
    runs: np.ndarray
    size: int
    bbox: tuple[int, int, int, int]

    @classmethod
    def from_mask(
        cls, class_id: int, mask: np.ndarray, row_offset: int = 0, col_offset: int = 0
    ) -> Segment:
        """Build a segment from a boolean mask placed at the given offset."""
        runs = _runs_from_mask(mask, row_offset, col_offset)
        if runs.shape[0] == 0:
            raise InvariantError("A segment needs at least one pixel")
        size = int((runs[:, 2] - runs[:, 1]).sum())
        bbox = (
            int(runs[:, 0].min()),
            int(runs[:, 1].min()),
            int(runs[:, 0].max()),
            int(runs[:, 2].max()) - 1,
        )
        return cls(class_id=int(class_id), runs=runs, size=size, bbox=bbox)

    @property
    def anchor(self) -> tuple[int, int]:
        """First pixel in raster order."""
        return int(self.runs[0, 0]), int(self.runs[0, 1])

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        """Return the full-image boolean mask of the segment."""
        full = np.zeros(shape, dtype=bool)
        for row, start, stop in self.runs:
            full[row, start:stop] = True
        return full

    def pixels(self) -> set[tuple[int, int]]:
        """Return the pixel set; meant for tests and small images."""
        return {
            (int(row), int(col))
            for row, start, stop in self.runs
            for col in range(start, stop)
        }

    def to_json(self) -> dict[str, Any]:
        return {
            "class": self.class_id,
            "size": self.size,
            "bbox": list(self.bbox),
            "runs": [[int(v) for v in run] for run in self.runs],
        }


@dataclass(frozen=True)
class ComponentSet:
    """The segments of one image after a given post-processing stage."""

    image_id: str
    shape: tuple[int, int]
    segments: tuple[Segment, ...]
    connectivity: int = DEFAULT_CONNECTIVITY
    provenance: str = PROVENANCE_RAW

    def of_class(self, class_id: int) -> list[Segment]:
        return [seg for seg in self.segments if seg.class_id == class_id]

    def count(self, class_id: int) -> int:
        return sum(1 for seg in self.segments if seg.class_id == class_id)

    def class_mask(self, class_id: int) -> np.ndarray:
        """Union of all pixels of the class's segments."""
        mask = np.zeros(self.shape, dtype=bool)
        for seg in self.of_class(class_id):
            for row, start, stop in seg.runs:
                mask[row, start:stop] = True
        return mask

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "connectivity": self.connectivity,
            "provenance": self.provenance,
            "shape": list(self.shape),
            "segments": [seg.to_json() for seg in self.segments],
        }


@dataclass(frozen=True)
class PostprocessConfig:
    """Parameters of :func:`postprocess`."""

    connectivity: int = DEFAULT_CONNECTIVITY
    min_size: int = DEFAULT_MIN_SIZE
    max_gap: int = DEFAULT_MAX_GAP

    def __post_init__(self) -> None:
        if self.connectivity not in (4, 8):
            raise InvariantError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.min_size < 1:
            raise InvariantError(f"min_size must be ≥ 1, got {self.min_size}")
        if self.max_gap < 0:
            raise InvariantError(f"max_gap must be ≥ 0, got {self.max_gap}")

    def to_json(self) -> dict[str, int]:
        return {
            "connectivity": self.connectivity,
            "min_size": self.min_size,
            "max_gap": self.max_gap,
        }


def _sorted(segments: Iterable[Segment]) -> tuple[Segment, ...]:
    return tuple(sorted(segments, key=lambda seg: (seg.class_id, seg.anchor)))


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    if connectivity == 8:
        return ndimage.generate_binary_structure(2, 2)
    raise InvariantError(f"connectivity must be 4 or 8, got {connectivity}")


def label_components(
    labels: LabelMap, connectivity: int = DEFAULT_CONNECTIVITY, image_id: str = ""
) -> ComponentSet:
    """Extract maximal same-class connected pixel sets.

    Args:
        labels: The label map to segment.
        connectivity: 4 or 8.
        image_id: Identifier carried into the ComponentSet.

    Returns:
        A raw ComponentSet in which every pixel belongs to exactly one segment.
    """
    structure = _structure(connectivity)
    segments: list[Segment] = []
    for class_id in np.unique(labels.data):
        labelled, count = ndimage.label(labels.data == class_id, structure=structure)
        for index, window in enumerate(ndimage.find_objects(labelled), start=1):
            if window is None:
                continue
            segments.append(
                Segment.from_mask(
                    int(class_id),
                    labelled[window] == index,
                    window[0].start,
                    window[1].start,
                )
            )
        _LOGGER.debug(
            "SegDecide Components: %s class %d has %d components",
            image_id or "<image>",
            int(class_id),
            count,
        )
    return ComponentSet(
        image_id=image_id,
        shape=labels.shape,
        segments=_sorted(segments),
        connectivity=connectivity,
        provenance=PROVENANCE_RAW,
    )


def filter_small_components(
    component_set: ComponentSet, min_size: int = DEFAULT_MIN_SIZE
) -> ComponentSet:
    """Drop segments with fewer than ``min_size`` pixels."""
    kept = tuple(seg for seg in component_set.segments if seg.size >= min_size)
    return ComponentSet(
        image_id=component_set.image_id,
        shape=component_set.shape,
        segments=kept,
        connectivity=component_set.connectivity,
        provenance=PROVENANCE_FILTERED,
    )


class _UnionFind:
    """Disjoint sets over segment indices."""

    def __init__(self, size: int) -> None:
        self.parent = list(range(size))

    def find(self, item: int) -> int:
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, first: int, second: int) -> None:
        root_a, root_b = self.find(first), self.find(second)
        if root_a != root_b:
            # Smaller index wins so groups are labelled deterministically.
            self.parent[max(root_a, root_b)] = min(root_a, root_b)


def _merge_class(
    segments: Sequence[Segment], shape: tuple[int, int], max_gap: int
) -> list[Segment]:
    """Union same-class segments lying within ``max_gap`` in-between pixels."""
    if len(segments) < 2 or max_gap <= 0:
        return list(segments)
    height, width = shape
    owner = np.full(shape, -1, dtype=np.int64)
    for index, seg in enumerate(segments):
        for row, start, stop in seg.runs:
            owner[row, start:stop] = index

    groups = _UnionFind(len(segments))
    footprint = 2 * max_gap + 1
    for index, seg in enumerate(segments):
        min_row, min_col, max_row, max_col = seg.bbox
        top, left = max(min_row - max_gap, 0), max(min_col - max_gap, 0)
        bottom, right = min(max_row + max_gap + 1, height), min(max_col + max_gap + 1, width)
        window_owner = owner[top:bottom, left:right]
        near = ndimage.maximum_filter(
            (window_owner == index).astype(np.uint8),
            size=footprint,
            mode="constant",
            cval=0,
        ).astype(bool)
        for other in np.unique(window_owner[near & (window_owner > index)]):
            groups.union(index, int(other))

    members: dict[int, list[int]] = {}
    for index in range(len(segments)):
        members.setdefault(groups.find(index), []).append(index)

    merged: list[Segment] = []
    for indices in members.values():
        if len(indices) == 1:
            merged.append(segments[indices[0]])
            continue
        min_row = min(segments[i].bbox[0] for i in indices)
        min_col = min(segments[i].bbox[1] for i in indices)
        max_row = max(segments[i].bbox[2] for i in indices)
        max_col = max(segments[i].bbox[3] for i in indices)
        union = np.zeros((max_row - min_row + 1, max_col - min_col + 1), dtype=bool)
        for i in indices:
            for row, start, stop in segments[i].runs:
                union[row - min_row, start - min_col : stop - min_col] = True
        merged.append(
            Segment.from_mask(segments[indices[0]].class_id, union, min_row, min_col)
        )
    return merged


def merge_nearby_components(
    component_set: ComponentSet, max_gap: int = DEFAULT_MAX_GAP
) -> ComponentSet:
    """Merge same-class segments with fewer than ``max_gap`` pixels in-between.

    Two segments are joined when their minimum Chebyshev distance is at most
    ``max_gap``; joins are transitive. Neighbours are found by dilating each
    segment with a (2·max_gap+1)² square, which is equivalent to comparing all
    pixel pairs under the Chebyshev metric.
    """
    merged: list[Segment] = []
    for class_id in sorted({seg.class_id for seg in component_set.segments}):
        merged.extend(
            _merge_class(component_set.of_class(class_id), component_set.shape, max_gap)
        )
    return ComponentSet(
        image_id=component_set.image_id,
        shape=component_set.shape,
        segments=_sorted(merged),
        connectivity=component_set.connectivity,
        provenance=PROVENANCE_MERGED,
    )


def postprocess(
    labels: LabelMap,
    connectivity: int = DEFAULT_CONNECTIVITY,
    min_size: int = DEFAULT_MIN_SIZE,
    max_gap: int = DEFAULT_MAX_GAP,
    image_id: str = "",
) -> ComponentSet:
    """Label components, drop small ones, then merge nearby ones, in that order."""
    raw = label_components(labels, connectivity, image_id=image_id)
    filtered = filter_small_components(raw, min_size)
    merged = merge_nearby_components(filtered, max_gap)
    _LOGGER.debug(
        "SegDecide Components: %s: %d raw, %d after filtering, %d after merging",
        image_id or "<image>",
        len(raw.segments),
        len(filtered.segments),
        len(merged.segments),
    )
    return merged
