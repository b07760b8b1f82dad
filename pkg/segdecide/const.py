"""Constants for the SegDecide toolkit."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Final

_LOGGER = logging.getLogger(__name__)

# --- Package Metadata ---
_MANIFEST_PATH = Path(__file__).parent / "manifest.json"
try:
    with open(_MANIFEST_PATH, encoding="utf-8") as manifest_file:
        manifest_data = json.load(manifest_file)
    PACKAGE_VERSION: Final[str] = manifest_data.get("version", "0.0.0")
except (FileNotFoundError, json.JSONDecodeError, KeyError) as e:
    PACKAGE_VERSION = "0.0.0"  # Fallback version
    _LOGGER.debug(
        "Failed to read version from manifest.json: %s. Using fallback version: %s",
        e,
        PACKAGE_VERSION,
    )

DOMAIN: Final[str] = "segdecide"

# --- SGT1 Tensor Format ---
SGT_MAGIC: Final[bytes] = b"SGT1"
SGT_VERSION: Final[int] = 0x01
SGT_DTYPE_U8: Final[int] = 0x00
SGT_DTYPE_F32: Final[int] = 0x01
SGT_FIXED_HEADER_SIZE: Final[int] = 8  # magic + version + dtype + ndim + reserved
SIDECAR_SUFFIX: Final[str] = ".meta.json"

# Tensor kinds accepted by read_tensor
KIND_LABELS: Final[str] = "labels"
KIND_PROBS: Final[str] = "probs"
KIND_PRIORS: Final[str] = "priors"
KIND_FEATURES: Final[str] = "features"

# --- Numerical Tolerances ---
PROB_SUM_TOLERANCE: Final[float] = 1e-4
RAW_PRIOR_SUM_TOLERANCE: Final[float] = 1e-6
GLOBAL_PRIOR_SUM_TOLERANCE: Final[float] = 1e-6

# --- Prior Defaults ---
DEFAULT_SIGMA: Final[float] = 80.0
DEFAULT_CUTOFF: Final[float] = 1e-5
DEFAULT_KERNEL_RADIUS_SIGMAS: Final[float] = 3.0

# --- Decision Rules ---
RULE_BAYES: Final[str] = "bayes"
RULE_ML: Final[str] = "ml"
RULES: Final[tuple[str, ...]] = (RULE_BAYES, RULE_ML)
PRIOR_MODE_LOCAL: Final[str] = "local"
PRIOR_MODE_GLOBAL: Final[str] = "global"
DEFAULT_COST_CONSTANT: Final[float] = 1.0

# --- Post-processing Defaults ---
DEFAULT_CONNECTIVITY: Final[int] = 8
DEFAULT_MIN_SIZE: Final[int] = 10
DEFAULT_MAX_GAP: Final[int] = 10
PROVENANCE_RAW: Final[str] = "raw"
PROVENANCE_FILTERED: Final[str] = "filtered"
PROVENANCE_MERGED: Final[str] = "merged"

# --- Analysis Defaults ---
# Left edge is the post-processing minimum, then powers of two up to 4096.
DEFAULT_BIN_EDGES: Final[tuple[float, ...]] = (
    10.0,
    16.0,
    32.0,
    64.0,
    128.0,
    256.0,
    512.0,
    1024.0,
    2048.0,
    4096.0,
    float("inf"),
)
DEFAULT_MIOU_BINS: Final[int] = 10
HEATMAP_PIXEL_LEVEL: Final[str] = "pixel_level"
HEATMAP_OBJECT_LEVEL: Final[str] = "object_level"
PGM_MAX_16BIT: Final[int] = 65535

# --- Synthetic Generator ---
SHAPE_RECTANGLE: Final[str] = "rectangle"
SHAPE_ELLIPSE: Final[str] = "ellipse"
MAX_PLACEMENT_ATTEMPTS: Final[int] = 64
MIN_ASPECT_RATIO: Final[float] = 0.5
MAX_ASPECT_RATIO: Final[float] = 2.0
FEATURE_STREAM_SALT: Final[int] = 0x5EA7_F00D_CAFE_D00D
DROPOUT_STREAM_SALT: Final[int] = 0xD0_0D_5EED_0BAD_F00D
TRAIN_SPLIT: Final[int] = 0
TEST_SPLIT: Final[int] = 1

# --- Acceptance Thresholds (reference corpus) ---
DOMINANCE_TOLERANCE: Final[float] = 0.02
NON_DETECTION_RATIO_LIMIT: Final[float] = 0.8
COST_MARGIN_STANDARD_ERRORS: Final[float] = 2.0
SCENARIO_MIN_LOCAL_RECALL: Final[float] = 0.5
SCENARIO_CONFLICT: Final[str] = "conflict"
SCENARIO_AGREEMENT: Final[str] = "agreement"

# --- CLI Exit Codes ---
EXIT_OK: Final[int] = 0
EXIT_USAGE: Final[int] = 1
EXIT_DATA_ERROR: Final[int] = 2
EXIT_CHECK_FAILED: Final[int] = 3

# --- Report Keys ---
REPORT_SCHEMA_VERSION: Final[int] = 1
ATTR_VERDICTS: Final[str] = "verdicts"
ATTR_CREATED_AT: Final[str] = "created_at"
ATTR_VERSION: Final[str] = "version"
GOLDEN_SUFFIX: Final[str] = ".report.json"
