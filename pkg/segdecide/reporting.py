"""Deterministic JSON output and run metadata sidecars."""

from __future__ import annotations

from collections.abc import Sequence
from datetime import datetime
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
import pytz

from .const import ATTR_CREATED_AT, ATTR_VERSION, PACKAGE_VERSION

_LOGGER = logging.getLogger(__name__)

RUN_SUFFIX = ".run.json"


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps(data: Any) -> str:
    """Serialize with sorted keys; NaN and infinities are rejected.

    Numpy scalars and arrays are converted to their Python equivalents.
    """
    return (
        json.dumps(data, sort_keys=True, indent=2, allow_nan=False, default=_to_builtin) + "\n"
    )


def write_json(path: str | Path, data: Any) -> Path:
    """Write ``data`` as deterministic JSON; identical data gives identical bytes."""
    path = Path(path)
    path.write_text(dumps(data), encoding="utf-8")
    _LOGGER.info("SegDecide Reporting: Wrote %s", path)
    return path


def write_run_metadata(
    target: str | Path, command: str, argv: Sequence[str] | None = None
) -> Path:
    """Write ``<target>.run.json`` with the wall-clock time of the run.

    Timestamps never enter the numeric outputs themselves, so those stay
    byte-identical between runs.
    """
    target = Path(target)
    sidecar = target.with_name(target.name + RUN_SUFFIX)
    metadata = {
        ATTR_CREATED_AT: datetime.now(pytz.utc).isoformat(),
        ATTR_VERSION: PACKAGE_VERSION,
        "command": command,
        "argv": list(argv or []),
        "output": target.name,
    }
    sidecar.write_text(dumps(metadata), encoding="utf-8")
    return sidecar
