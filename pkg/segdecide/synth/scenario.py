"""A rare object where local and global priors disagree.

The scenario trains priors on a synthetic corpus in which the rare class lives
in one part of the image and a confusable class in another. A rare-class
object is then planted where the rare class's local prior is below its global
prior while the confusable class's local prior is at or above its global one.
ML with the global prior divides the posterior by the wrong prior there and
misses the object; ML with local priors undoes the local prior and detects it.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..const import (
    SCENARIO_AGREEMENT,
    SCENARIO_CONFLICT,
    SCENARIO_MIN_LOCAL_RECALL,
    TEST_SPLIT,
    TRAIN_SPLIT,
)
from ..decision import DecisionRule, decide_ml
from ..exceptions import ConfigError, ScenarioError
from ..priors import (
    PriorComparisonSets,
    PriorConfig,
    estimate_priors,
    prior_comparison_sets,
)
from ..tensor_io import GlobalPriors, LabelMap, PriorStack, ProbabilityMap, write_pgm
from .rng import corpus_seeds
from .scene import SynthConfig, generate_scene, oracle_posteriors, sample_features

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of :func:`global_vs_local_scenario`."""

    synth: SynthConfig
    rare_class: int
    confusable_class: int
    object_height: int = 6
    object_width: int = 10
    train_images: int = 100
    priors: PriorConfig = PriorConfig(sigma=4.0)
    seed: int = 0
    placement: str = SCENARIO_CONFLICT

    def __post_init__(self) -> None:
        n = self.synth.num_classes
        for name in ("rare_class", "confusable_class"):
            class_id = getattr(self, name)
            if not 0 <= class_id < n or class_id == self.synth.background_class:
                raise ConfigError(f"{name} {class_id} must be a non-background class id")
        if self.rare_class == self.confusable_class:
            raise ConfigError("rare_class and confusable_class must differ")
        if self.placement not in (SCENARIO_CONFLICT, SCENARIO_AGREEMENT):
            raise ConfigError(f"Unknown scenario placement {self.placement!r}")
        if not (
            1 <= self.object_height <= self.synth.height
            and 1 <= self.object_width <= self.synth.width
        ):
            raise ConfigError("The planted object does not fit into the image")
        if self.train_images < 1:
            raise ConfigError("The scenario needs at least one training image")


@dataclass(frozen=True)
class ScenarioResult:
    """Outcome of the scenario for ML with global and with local priors."""

    placement: str
    location: tuple[int, int]
    object_mask: np.ndarray
    rare_sets: PriorComparisonSets
    confusable_sets: PriorComparisonSets
    region: np.ndarray
    ml_global: LabelMap
    ml_local: LabelMap
    recall_global: float
    recall_local: float

    @property
    def passed(self) -> bool:
        """Global ML misses the object completely while local ML finds most of it."""
        if self.placement == SCENARIO_AGREEMENT:
            return self.recall_global > 0 and self.recall_local > 0
        return self.recall_global == 0.0 and self.recall_local > SCENARIO_MIN_LOCAL_RECALL

    def to_json(self) -> dict[str, Any]:
        return {
            "placement": self.placement,
            "location": list(self.location),
            "object_size": int(self.object_mask.sum()),
            "region_size": int(self.region.sum()),
            "recall": {"global": self.recall_global, "local": self.recall_local},
            "detected": {
                "global": self.recall_global > 0,
                "local": self.recall_local > 0,
            },
            "passed": self.passed,
        }


def choose_location(
    region: np.ndarray, score: np.ndarray, height: int, width: int
) -> tuple[int, int]:
    """Return the top-left corner of the best window lying entirely in ``region``.

    Windows are ranked by their mean ``score``; ties go to the first window in
    raster order.

    Raises:
        ScenarioError: If no window fits into the region.
    """
    if height > region.shape[0] or width > region.shape[1]:
        raise ScenarioError("The object is larger than the image")
    fits = sliding_window_view(region, (height, width)).all(axis=(2, 3))
    if not fits.any():
        raise ScenarioError(
            f"No {height}x{width} window fits into the {int(region.sum())}-pixel region"
        )
    means = sliding_window_view(score.astype(np.float64), (height, width)).mean(axis=(2, 3))
    ranked = np.where(fits, means, -np.inf)
    top, left = np.unravel_index(int(np.argmax(ranked)), ranked.shape)
    return int(top), int(left)


def object_recall(pred: LabelMap, mask: np.ndarray, class_id: int) -> float:
    """Share of the object's pixels predicted as ``class_id``."""
    size = int(mask.sum())
    if size == 0:
        raise ScenarioError("The planted object is empty")
    return float(np.count_nonzero(pred.data[mask] == class_id)) / size


def compare_prior_modes(
    probs: ProbabilityMap, local: PriorStack, global_priors: GlobalPriors
) -> tuple[LabelMap, LabelMap]:
    """Apply ML once with global and once with local priors."""
    return (
        decide_ml(probs, DecisionRule.maximum_likelihood(global_priors)),
        decide_ml(probs, DecisionRule.maximum_likelihood(local)),
    )


def global_vs_local_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Plant a rare object where the prior modes disagree and compare ML twice.

    Raises:
        ScenarioError: If the target region is empty or too small for the
            object.
    """
    synth = config.synth
    train = [
        generate_scene(synth, seed).gt
        for seed in corpus_seeds(config.seed, config.train_images, TRAIN_SPLIT)
    ]
    local, global_priors = estimate_priors(train, synth.num_classes, config.priors)
    rare_sets = prior_comparison_sets(local, global_priors, config.rare_class)
    confusable_sets = prior_comparison_sets(local, global_priors, config.confusable_class)
    if config.placement == SCENARIO_CONFLICT:
        region = rare_sets.mask_gt & confusable_sets.mask_leq
        score = local.channel(config.confusable_class)
    else:
        region = rare_sets.mask_leq & confusable_sets.mask_gt
        score = local.channel(config.rare_class)
    top, left = choose_location(region, score, config.object_height, config.object_width)

    scene_seed = corpus_seeds(config.seed, 1, TEST_SPLIT)[0]
    labels = generate_scene(synth, scene_seed).gt.data.copy()
    mask = np.zeros(synth.shape, dtype=bool)
    mask[top : top + config.object_height, left : left + config.object_width] = True
    labels[mask] = config.rare_class
    gt = LabelMap(labels, synth.num_classes)
    features = sample_features(gt, synth, scene_seed)
    probs = oracle_posteriors(features, synth, local)

    ml_global, ml_local = compare_prior_modes(probs, local, global_priors)
    result = ScenarioResult(
        placement=config.placement,
        location=(top, left),
        object_mask=mask,
        rare_sets=rare_sets,
        confusable_sets=confusable_sets,
        region=region,
        ml_global=ml_global,
        ml_local=ml_local,
        recall_global=object_recall(ml_global, mask, config.rare_class),
        recall_local=object_recall(ml_local, mask, config.rare_class),
    )
    _LOGGER.info(
        "SegDecide Scenario: %s object at %s, recall global %.3f, local %.3f",
        config.placement,
        result.location,
        result.recall_global,
        result.recall_local,
    )
    return result


def write_scenario_masks(result: ScenarioResult, directory: str | Path) -> list[Path]:
    """Write the prior comparison regions and the target region as PGM masks."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    masks = {
        f"B_{result.rare_sets.class_id}": result.rare_sets.mask_leq,
        f"B_prime_{result.rare_sets.class_id}": result.rare_sets.mask_gt,
        f"B_{result.confusable_sets.class_id}": result.confusable_sets.mask_leq,
        f"B_prime_{result.confusable_sets.class_id}": result.confusable_sets.mask_gt,
        "region": result.region,
        "object": result.object_mask,
    }
    paths = []
    for name, mask in masks.items():
        path = directory / f"scenario_{name}.pgm"
        write_pgm(path, mask.astype(np.uint8) * 255, 255)
        paths.append(path)
    return paths
