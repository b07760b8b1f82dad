"""Synthetic scenes with location-dependent classes and their exact posteriors.

Stream order of one scene (seeded by the scene seed):

1. For every non-background class in id order: a Poisson object count.
2. For every object of that class, in order: one uniform for the shape
   (rectangle below 0.5, ellipse otherwise), one uniform integer for the
   nominal area in ``[size_min, size_max]``, one uniform for the aspect ratio
   (log-uniform in [0.5, 2], height / width), then up to
   ``MAX_PLACEMENT_ATTEMPTS`` center draws of two normals each (row, col)
   until the rounded center falls inside the image.

Each class's objects are drawn right after its count. Later objects overwrite
earlier ones. Per-pixel features come from a separate stream seeded by
``derive_seed(scene_seed ^ FEATURE_STREAM_SALT, 0)``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import logging
import math
from pathlib import Path
from typing import Any, Union

import numpy as np
from scipy import special

from ..const import (
    DROPOUT_STREAM_SALT,
    FEATURE_STREAM_SALT,
    MAX_ASPECT_RATIO,
    MAX_PLACEMENT_ATTEMPTS,
    MIN_ASPECT_RATIO,
    SHAPE_ELLIPSE,
    SHAPE_RECTANGLE,
)
from ..exceptions import (
    ConfigError,
    EmptyInputError,
    InvariantError,
    ShapeMismatchError,
    UnsatisfiableConfigError,
)
from ..tensor_io import (
    GlobalPriors,
    LabelMap,
    PriorStack,
    ProbabilityMap,
    write_tensor,
)
from .rng import Xoshiro256StarStar, derive_seed, hash_normals

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassSpec:
    """Generative model of one class.

    Attributes:
        class_id: Class id, equal to the position in ``SynthConfig.classes``.
        name: Human-readable name.
        feature_mean: Mean μ_k of the scalar feature.
        feature_std: Standard deviation s_k of the scalar feature.
        count_mean: Poisson mean of the number of objects per scene.
        size_min: Smallest nominal object area in pixels.
        size_max: Largest nominal object area in pixels.
        mean_row: Placement mean of the object center row.
        mean_col: Placement mean of the object center column.
        std_row: Placement standard deviation along rows.
        std_col: Placement standard deviation along columns.
    """

    class_id: int
    name: str
    feature_mean: float
    feature_std: float = 1.0
    count_mean: float = 0.0
    size_min: int = 1
    size_max: int = 1
    mean_row: float = 0.0
    mean_col: float = 0.0
    std_row: float = 0.0
    std_col: float = 0.0

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.class_id,
            "name": self.name,
            "feature_mean": self.feature_mean,
            "feature_std": self.feature_std,
            "count_mean": self.count_mean,
            "size_min": self.size_min,
            "size_max": self.size_max,
            "placement": {
                "mean_row": self.mean_row,
                "mean_col": self.mean_col,
                "std_row": self.std_row,
                "std_col": self.std_col,
            },
        }


@dataclass(frozen=True)
class SynthConfig:
    """Image size, class models and the default seed of the generator."""

    height: int
    width: int
    classes: tuple[ClassSpec, ...]
    background_class: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"Image size must be positive, got {self.height}x{self.width}")
        if len(self.classes) < 2:
            raise ConfigError("A synthetic config needs at least two classes")
        if len(self.classes) > 256:
            raise ConfigError("At most 256 classes fit into 8-bit labels")
        for index, spec in enumerate(self.classes):
            if spec.class_id != index:
                raise ConfigError(
                    f"Class ids must be 0..N-1 in order, found {spec.class_id} at {index}"
                )
            if spec.feature_std <= 0:
                raise ConfigError(f"Class {index} feature_std must be > 0")
        if not 0 <= self.background_class < len(self.classes):
            raise ConfigError(f"Background class {self.background_class} is not a class id")
        means = [spec.feature_mean for spec in self.classes]
        if len(set(means)) != len(means):
            raise ConfigError(f"Feature means must be pairwise distinct, got {means}")
        for spec in self.object_classes:
            if spec.size_min < 1 or spec.size_min > spec.size_max:
                raise UnsatisfiableConfigError(
                    f"Class {spec.class_id} size range [{spec.size_min}, "
                    f"{spec.size_max}] is empty"
                )
            if spec.size_min > self.height * self.width:
                raise UnsatisfiableConfigError(
                    f"Class {spec.class_id} needs at least {spec.size_min} pixels, "
                    f"the image has {self.height * self.width}"
                )
            if spec.count_mean > 0 and not (
                0 <= spec.mean_row < self.height and 0 <= spec.mean_col < self.width
            ):
                raise ConfigError(
                    f"Class {spec.class_id} placement mean "
                    f"({spec.mean_row}, {spec.mean_col}) lies outside the image"
                )

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def object_classes(self) -> list[ClassSpec]:
        return [spec for spec in self.classes if spec.class_id != self.background_class]

    def to_json(self) -> dict[str, Any]:
        return {
            "height": self.height,
            "width": self.width,
            "background_class": self.background_class,
            "seed": self.seed,
            "classes": [spec.to_json() for spec in self.classes],
        }


@dataclass(frozen=True)
class Scene:
    """Ground truth and per-pixel features of one synthetic image."""

    gt: LabelMap
    features: np.ndarray
    seed: int


def object_mask(
    shape: tuple[int, int],
    kind: str,
    center: tuple[int, int],
    area: int,
    aspect: float,
) -> np.ndarray:
    """Rasterise a rectangle or ellipse of nominal ``area`` around ``center``.

    ``aspect`` is height / width. Parts outside the image are clipped.
    """
    height, width = shape
    row, col = center
    mask = np.zeros(shape, dtype=bool)
    if kind == SHAPE_RECTANGLE:
        rows = max(1, round(math.sqrt(area * aspect)))
        cols = max(1, round(area / rows))
        top, left = row - rows // 2, col - cols // 2
        mask[max(top, 0) : max(top + rows, 0), max(left, 0) : max(left + cols, 0)] = True
        return mask
    if kind != SHAPE_ELLIPSE:
        raise InvariantError(f"Unknown object shape {kind!r}")
    radius_row = math.sqrt(area * aspect / math.pi)
    radius_col = area / (math.pi * radius_row)
    reach_row, reach_col = math.ceil(radius_row), math.ceil(radius_col)
    top, bottom = max(row - reach_row, 0), min(row + reach_row + 1, height)
    left, right = max(col - reach_col, 0), min(col + reach_col + 1, width)
    grid_row, grid_col = np.ogrid[top:bottom, left:right]
    inside = (
        ((grid_row - row) / radius_row) ** 2 + ((grid_col - col) / radius_col) ** 2
    ) <= 1.0
    mask[top:bottom, left:right] = inside
    return mask


def _draw_center(
    rng: Xoshiro256StarStar, spec: ClassSpec, shape: tuple[int, int]
) -> tuple[int, int] | None:
    height, width = shape
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        row = math.floor(spec.mean_row + spec.std_row * rng.normal() + 0.5)
        col = math.floor(spec.mean_col + spec.std_col * rng.normal() + 0.5)
        if 0 <= row < height and 0 <= col < width:
            return row, col
    return None


def sample_features(gt: LabelMap, config: SynthConfig, seed: int) -> np.ndarray:
    """Draw every pixel's feature from the Gaussian of its ground-truth class."""
    if gt.shape != config.shape:
        raise ShapeMismatchError(f"Label map {gt.shape} vs config {config.shape}")
    means = np.array([spec.feature_mean for spec in config.classes], dtype=np.float64)
    stds = np.array([spec.feature_std for spec in config.classes], dtype=np.float64)
    noise = hash_normals(derive_seed(seed ^ FEATURE_STREAM_SALT, 0), gt.shape)
    features = (means[gt.data] + stds[gt.data] * noise).astype(np.float32)
    features.setflags(write=False)
    return features


def generate_scene(config: SynthConfig, seed: int) -> Scene:
    """Generate one scene; identical (config, seed) pairs give identical scenes.

    Args:
        config: A validated SynthConfig.
        seed: 64-bit scene seed.

    Returns:
        The scene's ground truth and features.
    """
    rng = Xoshiro256StarStar(seed)
    labels = np.full(config.shape, config.background_class, dtype=np.uint8)
    dropped = 0
    for spec in config.object_classes:
        for _ in range(rng.poisson(spec.count_mean)):
            kind = SHAPE_RECTANGLE if rng.uniform() < 0.5 else SHAPE_ELLIPSE
            area = rng.integer(spec.size_min, spec.size_max)
            aspect = math.exp(
                math.log(MIN_ASPECT_RATIO)
                + rng.uniform() * (math.log(MAX_ASPECT_RATIO) - math.log(MIN_ASPECT_RATIO))
            )
            center = _draw_center(rng, spec, config.shape)
            if center is None:
                dropped += 1
                continue
            labels[object_mask(config.shape, kind, center, area, aspect)] = spec.class_id
    if dropped:
        _LOGGER.debug(
            "SegDecide Synth: Scene %d dropped %d objects without a valid center",
            seed,
            dropped,
        )
    gt = LabelMap(labels, config.num_classes)
    return Scene(gt=gt, features=sample_features(gt, config, seed), seed=seed)


def oracle_posteriors(
    features: np.ndarray,
    config: SynthConfig,
    priors_used: Union[PriorStack, GlobalPriors],
) -> ProbabilityMap:
    """Exact posteriors p(k|x) ∝ N(x; μ_k, s_k) · prior(i, j, k).

    Raises:
        InvariantError: If a prior is not strictly positive.
        ShapeMismatchError: If the priors do not fit the features or config.
    """
    features = np.asarray(features, dtype=np.float64)
    n = config.num_classes
    if isinstance(priors_used, PriorStack):
        if priors_used.shape != features.shape or priors_used.num_classes != n:
            raise ShapeMismatchError(
                f"Prior stack {priors_used.data.shape} does not fit features "
                f"{features.shape} with {n} classes"
            )
        prior = priors_used.data.astype(np.float64)
    else:
        if priors_used.num_classes != n:
            raise ShapeMismatchError(f"{priors_used.num_classes} priors for {n} classes")
        prior = priors_used.values.reshape(1, 1, n)
    if (prior <= 0).any():
        raise InvariantError("Oracle posteriors need strictly positive priors")
    means = np.array([spec.feature_mean for spec in config.classes])
    stds = np.array([spec.feature_std for spec in config.classes])
    z = (features[..., np.newaxis] - means) / stds
    log_joint = -0.5 * z**2 - np.log(stds) + np.log(prior)
    return ProbabilityMap(special.softmax(log_joint, axis=2).astype(np.float32))


def dropout_samples(
    probs: ProbabilityMap, count: int, noise_std: float, seed: int
) -> list[ProbabilityMap]:
    """Emulate stochastic forward passes by jittering log-posteriors.

    Sample ``i`` adds Gaussian noise of ``noise_std`` drawn from stream
    ``derive_seed(seed ^ DROPOUT_STREAM_SALT, i)`` and renormalises.

    Raises:
        EmptyInputError: If ``count`` is below 1.
    """
    if count < 1:
        raise EmptyInputError("At least one dropout sample is needed")
    log_probs = np.log(
        np.maximum(probs.data.astype(np.float64), np.finfo(np.float32).tiny)
    )
    samples = []
    for index in range(count):
        noise = hash_normals(derive_seed(seed ^ DROPOUT_STREAM_SALT, index), log_probs.shape)
        jittered = special.softmax(log_probs + noise_std * noise, axis=2)
        samples.append(ProbabilityMap(jittered.astype(np.float32)))
    return samples


def write_scene(scene: Scene, directory: str | Path, stem: str) -> tuple[Path, Path]:
    """Write ``<stem>_gt.sgt`` and ``<stem>_features.sgt`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    gt_path = directory / f"{stem}_gt.sgt"
    features_path = directory / f"{stem}_features.sgt"
    write_tensor(gt_path, scene.gt)
    write_tensor(features_path, scene.features)
    return gt_path, features_path


def generate_corpus(config: SynthConfig, seeds: Sequence[int]) -> list[Scene]:
    """Generate one scene per seed, in order."""
    return [generate_scene(config, seed) for seed in seeds]
