"""Shared fixtures and builders for SegDecide tests."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pytest

from segdecide.const import DOMAIN
from segdecide.priors import PriorConfig
from segdecide.synth import ClassSpec, SynthConfig
from segdecide.tensor_io import LabelMap, ProbabilityMap

MOCK_NUM_CLASSES = 3

# 4×6 ground truth with one class-1 blob and one class-2 blob.
MOCK_GT = np.array(
    [
        [0, 0, 0, 0, 2, 2],
        [0, 1, 1, 0, 2, 2],
        [0, 1, 1, 0, 0, 0],
        [0, 0, 0, 0, 0, 0],
    ],
    dtype=np.uint8,
)

# Same as MOCK_GT except that the class-1 blob grew by one pixel and the
# class-2 blob lost one.
MOCK_PRED = np.array(
    [
        [0, 0, 0, 0, 2, 2],
        [0, 1, 1, 1, 2, 0],
        [0, 1, 1, 0, 0, 0],
        [0, 0, 0, 0, 0, 0],
    ],
    dtype=np.uint8,
)

MOCK_SYNTH_CONFIG_DATA = {
    "height": 24,
    "width": 32,
    "seed": 5,
    "classes": [
        {"id": 0, "name": "background", "feature_mean": 0.0},
        {
            "id": 1,
            "name": "person",
            "feature_mean": 2.5,
            "count_mean": 1.0,
            "size_min": 12,
            "size_max": 30,
            "placement": {"mean_row": 16, "std_row": 3, "mean_col": 16, "std_col": 8},
        },
        {
            "id": 2,
            "name": "sign",
            "feature_mean": 4.0,
            "count_mean": 1.0,
            "size_min": 10,
            "size_max": 25,
            "placement": {"mean_row": 6, "std_row": 2, "mean_col": 16, "std_col": 8},
        },
    ],
}

MOCK_EXPERIMENT_CONFIG_DATA = {
    "synth": MOCK_SYNTH_CONFIG_DATA,
    "experiment": {
        "train_images": 6,
        "test_images": 4,
        "focus_class": 1,
        "priors": {"sigma": 2.0, "cutoff": 1e-4},
        "postprocess": {"connectivity": 8, "min_size": 3, "max_gap": 2},
        "seed": 3,
    },
}

MOCK_SCENARIO_CONFIG_DATA = {
    "synth": {
        "height": 32,
        "width": 48,
        "classes": [
            {"id": 0, "name": "background", "feature_mean": 0.0},
            {
                "id": 1,
                "name": "person",
                "feature_mean": 4.0,
                "count_mean": 1.0,
                "size_min": 30,
                "size_max": 60,
                "placement": {"mean_row": 26, "std_row": 2, "mean_col": 24, "std_col": 8},
            },
            {
                "id": 2,
                "name": "sign",
                "feature_mean": 6.0,
                "count_mean": 1.0,
                "size_min": 30,
                "size_max": 60,
                "placement": {"mean_row": 5, "std_row": 2, "mean_col": 24, "std_col": 8},
            },
        ],
    },
    "rare_class": 1,
    "confusable_class": 2,
    "object_height": 3,
    "object_width": 5,
    "train_images": 30,
    "priors": {"sigma": 2.0},
    "seed": 11,
}


def one_hot(labels: np.ndarray, num_classes: int, confidence: float = 1.0) -> ProbabilityMap:
    """Build a ProbabilityMap putting ``confidence`` on the given labels."""
    rest = (1.0 - confidence) / max(num_classes - 1, 1)
    data = np.full(labels.shape + (num_classes,), rest, dtype=np.float64)
    rows, cols = np.indices(labels.shape)
    data[rows, cols, labels] = confidence
    return ProbabilityMap(data.astype(np.float32))


def label_map(rows: list[list[int]] | np.ndarray, num_classes: int = MOCK_NUM_CLASSES) -> LabelMap:
    return LabelMap(np.asarray(rows, dtype=np.uint8), num_classes)


def make_synth_config(**overrides) -> SynthConfig:
    """A three-class SynthConfig equivalent to MOCK_SYNTH_CONFIG_DATA."""
    values = {
        "height": 24,
        "width": 32,
        "classes": (
            ClassSpec(0, "background", 0.0),
            ClassSpec(1, "person", 2.5, 1.0, 1.0, 12, 30, 16.0, 16.0, 3.0, 8.0),
            ClassSpec(2, "sign", 4.0, 1.0, 1.0, 10, 25, 6.0, 16.0, 2.0, 8.0),
        ),
        "seed": 5,
    }
    values.update(overrides)
    return SynthConfig(**values)


@pytest.fixture
def gt_map() -> LabelMap:
    return LabelMap(MOCK_GT, MOCK_NUM_CLASSES)


@pytest.fixture
def pred_map() -> LabelMap:
    return LabelMap(MOCK_PRED, MOCK_NUM_CLASSES)


@pytest.fixture
def synth_config() -> SynthConfig:
    return make_synth_config()


@pytest.fixture
def prior_config() -> PriorConfig:
    return PriorConfig(sigma=1.0, cutoff=1e-4)


@pytest.fixture
def out_dir(tmp_path: Path) -> Path:
    """A scratch directory for files written by a test."""
    directory = tmp_path / "out"
    directory.mkdir()
    return directory


@pytest.fixture(autouse=True)
def reset_package_logger():
    """Undo the handler the CLI attaches to the package logger."""
    logger = logging.getLogger(DOMAIN)
    handlers = list(logger.handlers)
    level = logger.level
    yield
    for handler in logger.handlers[:]:
        if handler not in handlers:
            logger.removeHandler(handler)
    logger.setLevel(level)
