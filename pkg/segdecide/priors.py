"""Pixel-wise and global class priors estimated from training labels."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import logging
import math
from typing import Any

import numpy as np
from scipy import ndimage

from .const import (
    DEFAULT_CUTOFF,
    DEFAULT_KERNEL_RADIUS_SIGMAS,
    DEFAULT_SIGMA,
    PGM_MAX_16BIT,
)
from .exceptions import EmptyInputError, InvariantError, ShapeMismatchError
from .tensor_io import GlobalPriors, LabelMap, PriorStack

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorConfig:
    """Smoothing parameters for pixel-wise priors.

    Attributes:
        sigma: Standard deviation of the Gaussian filter in pixels.
        cutoff: Lower limit applied to every smoothed prior.
        kernel_radius_sigmas: Kernel truncation radius in units of sigma.
    """

    sigma: float = DEFAULT_SIGMA
    cutoff: float = DEFAULT_CUTOFF
    kernel_radius_sigmas: float = DEFAULT_KERNEL_RADIUS_SIGMAS

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise InvariantError(f"sigma must be ≥ 0, got {self.sigma}")
        if not 0.0 < self.cutoff < 1.0:
            raise InvariantError(f"cutoff must be within (0, 1), got {self.cutoff}")
        if self.kernel_radius_sigmas < 1:
            raise InvariantError(
                f"kernel_radius_sigmas must be ≥ 1, got {self.kernel_radius_sigmas}"
            )

    @property
    def kernel_radius(self) -> int:
        return math.ceil(self.kernel_radius_sigmas * self.sigma)

    def to_json(self) -> dict[str, float]:
        return {
            "sigma": self.sigma,
            "cutoff": self.cutoff,
            "kernel_radius_sigmas": self.kernel_radius_sigmas,
        }


@dataclass(frozen=True)
class PriorComparisonSets:
    """Pixel regions where the global prior is ≤ (B_k) or > (B_k′) the local one."""

    class_id: int
    mask_leq: np.ndarray
    mask_gt: np.ndarray


@dataclass(frozen=True)
class ClassStatistics:
    """Class-imbalance statistics of a label corpus."""

    pixel_counts: np.ndarray
    image_counts: np.ndarray
    num_images: int
    total_pixels: int

    def to_json(self) -> dict[str, Any]:
        return {
            "num_images": self.num_images,
            "total_pixels": self.total_pixels,
            "pixel_counts": [int(v) for v in self.pixel_counts],
            "image_counts": [int(v) for v in self.image_counts],
            "pixel_share": [
                float(v) / self.total_pixels if self.total_pixels else 0.0
                for v in self.pixel_counts
            ],
        }


def _check_corpus(labels: Sequence[LabelMap], num_classes: int) -> tuple[int, int]:
    """Validate a label corpus and return its common (H, W)."""
    if len(labels) == 0:
        raise EmptyInputError("Prior estimation needs at least one label map")
    shape = labels[0].shape
    for index, label_map in enumerate(labels):
        if label_map.shape != shape:
            raise ShapeMismatchError(
                f"Label map {index} has shape {label_map.shape}, expected {shape}",
                index=index,
            )
        if label_map.data.size and int(label_map.data.max()) >= num_classes:
            raise InvariantError(
                f"Label map {index} contains class {int(label_map.data.max())} "
                f"≥ num_classes {num_classes}"
            )
    return shape


def compute_pixel_priors(labels: Sequence[LabelMap], num_classes: int) -> PriorStack:
    """Count how often each class appears at each pixel across the corpus.

    Args:
        labels: Training label maps, all of the same shape.
        num_classes: Number of classes N.

    Returns:
        A raw PriorStack with prior[i, j, k] = #maps labelled k at (i, j) / #maps.

    Raises:
        EmptyInputError: If ``labels`` is empty.
        ShapeMismatchError: If a map differs in shape from the first one.
    """
    height, width = _check_corpus(labels, num_classes)
    counts = np.zeros((height * width, num_classes), dtype=np.int64)
    pixel_index = np.arange(height * width)
    for label_map in labels:
        counts[pixel_index, label_map.data.reshape(-1)] += 1
    priors = counts.astype(np.float64) / len(labels)
    _LOGGER.debug(
        "SegDecide Priors: Counted %d label maps of %dx%d into %d channels",
        len(labels),
        height,
        width,
        num_classes,
    )
    return PriorStack(priors.reshape(height, width, num_classes), smoothed=False)


def gaussian_kernel(sigma: float, kernel_radius_sigmas: float) -> np.ndarray:
    """Return the normalised, truncated 1-D Gaussian kernel.

    A zero sigma yields the identity kernel ``[1.0]``.
    """
    if sigma == 0:
        return np.ones(1, dtype=np.float64)
    radius = math.ceil(kernel_radius_sigmas * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-0.5 * (offsets / sigma) ** 2)
    return weights / weights.sum()


def smooth_priors(raw: PriorStack, config: PriorConfig) -> PriorStack:
    """Smooth every channel with a separable Gaussian and apply the cutoff.

    Boundaries are handled by reflection, so kernels wider than the image
    are valid. Channels are not renormalised afterwards.

    Args:
        raw: An unsmoothed PriorStack.
        config: Smoothing parameters.

    Returns:
        The smoothed PriorStack, floored at ``config.cutoff``.

    Raises:
        InvariantError: If ``raw`` is already smoothed or the cutoff is not
            below 1/N.
    """
    if raw.smoothed:
        raise InvariantError("Prior stack is already smoothed")
    if config.cutoff >= 1.0 / raw.num_classes:
        raise InvariantError(
            f"cutoff {config.cutoff:g} must be below 1/N = {1.0 / raw.num_classes:g}"
        )
    kernel = gaussian_kernel(config.sigma, config.kernel_radius_sigmas)
    smoothed = raw.data.astype(np.float64)
    if kernel.size > 1:
        # Axis 2 (classes) is never filtered.
        smoothed = ndimage.correlate1d(smoothed, kernel, axis=0, mode="reflect")
        smoothed = ndimage.correlate1d(smoothed, kernel, axis=1, mode="reflect")
    smoothed = np.minimum(np.maximum(smoothed, config.cutoff), 1.0)
    _LOGGER.debug(
        "SegDecide Priors: Smoothed %dx%dx%d stack with sigma=%g (radius %d), cutoff=%g",
        raw.height,
        raw.width,
        raw.num_classes,
        config.sigma,
        kernel.size // 2,
        config.cutoff,
    )
    return PriorStack(smoothed, smoothed=True, cutoff=config.cutoff)


def compute_global_priors(
    labels: Sequence[LabelMap], num_classes: int, floor: float | None = None
) -> GlobalPriors:
    """Return the share of all corpus pixels belonging to each class.

    Args:
        labels: Training label maps, all of the same shape.
        num_classes: Number of classes N.
        floor: Optional lower limit for classes absent from the corpus; the
            floored values are renormalised to sum 1.

    Raises:
        EmptyInputError: If ``labels`` is empty.
        InvariantError: If a class is absent and no ``floor`` is given.
    """
    _check_corpus(labels, num_classes)
    counts = np.zeros(num_classes, dtype=np.int64)
    for label_map in labels:
        counts += np.bincount(label_map.data.reshape(-1), minlength=num_classes)
    values = counts.astype(np.float64) / counts.sum()
    if floor is not None:
        values = np.maximum(values, floor)
        values = values / values.sum()
    elif (counts == 0).any():
        missing = [int(k) for k in np.flatnonzero(counts == 0)]
        raise InvariantError(
            f"Classes {missing} never occur in the corpus; pass a floor to "
            "estimate global priors"
        )
    return GlobalPriors(values)


def prior_comparison_sets(
    local: PriorStack, global_priors: GlobalPriors, class_id: int
) -> PriorComparisonSets:
    """Split the image into B_k (global ≤ local) and its complement B_k′.

    The comparison is made at the stack's float32 storage precision so that a
    local prior equal to the global one always lands in B_k.

    Raises:
        InvariantError: If ``class_id`` is out of range or the class counts
            of the two prior sets differ.
    """
    if local.num_classes != global_priors.num_classes:
        raise InvariantError(
            f"Local priors have {local.num_classes} classes, global priors "
            f"{global_priors.num_classes}"
        )
    if not 0 <= class_id < local.num_classes:
        raise InvariantError(
            f"class_id {class_id} outside [0, {local.num_classes})"
        )
    threshold = np.float32(global_priors.values[class_id])
    mask_leq = threshold <= local.channel(class_id)
    mask_leq.setflags(write=False)
    mask_gt = ~mask_leq
    mask_gt.setflags(write=False)
    return PriorComparisonSets(class_id=class_id, mask_leq=mask_leq, mask_gt=mask_gt)


def class_statistics(labels: Sequence[LabelMap], num_classes: int) -> ClassStatistics:
    """Count pixels per class and images containing each class."""
    _check_corpus(labels, num_classes)
    pixel_counts = np.zeros(num_classes, dtype=np.int64)
    image_counts = np.zeros(num_classes, dtype=np.int64)
    for label_map in labels:
        per_map = np.bincount(label_map.data.reshape(-1), minlength=num_classes)
        pixel_counts += per_map
        image_counts += per_map > 0
    absent = np.flatnonzero(pixel_counts == 0)
    if absent.size:
        _LOGGER.warning(
            "SegDecide Priors: Classes %s never occur in the %d-image corpus",
            absent.tolist(),
            len(labels),
        )
    return ClassStatistics(
        pixel_counts=pixel_counts,
        image_counts=image_counts,
        num_images=len(labels),
        total_pixels=int(pixel_counts.sum()),
    )


def prior_heatmap(stack: PriorStack, class_id: int) -> np.ndarray:
    """Scale one prior channel to 16-bit samples by its maximum."""
    channel = stack.channel(class_id).astype(np.float64)
    peak = channel.max()
    if peak <= 0:
        return np.zeros(channel.shape, dtype=np.uint16)
    return np.rint(channel / peak * PGM_MAX_16BIT).astype(np.uint16)


def estimate_priors(
    labels: Sequence[LabelMap], num_classes: int, config: PriorConfig
) -> tuple[PriorStack, GlobalPriors]:
    """Estimate smoothed pixel-wise priors and cutoff-floored global priors."""
    local = smooth_priors(compute_pixel_priors(labels, num_classes), config)
    global_priors = compute_global_priors(labels, num_classes, floor=config.cutoff)
    _LOGGER.info(
        "SegDecide Priors: Estimated priors from %d label maps, global %s",
        len(labels),
        np.array2string(global_priors.values, precision=5),
    )
    return local, global_priors
