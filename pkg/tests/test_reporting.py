"""Tests for deterministic JSON output and run sidecars."""

from datetime import datetime
import json
from pathlib import Path

import numpy as np
import pytest

from segdecide.const import ATTR_CREATED_AT, ATTR_VERSION, PACKAGE_VERSION
from segdecide.reporting import RUN_SUFFIX, dumps, write_json, write_run_metadata


def test_dumps_converts_numpy_values():
    data = {
        "passed": np.float64(0.6) > np.float64(0.5),
        "count": np.int64(3),
        "share": np.float32(0.25),
        "edges": np.array([1, 2]),
    }
    assert json.loads(dumps(data)) == {"count": 3, "edges": [1, 2], "passed": True, "share": 0.25}


def test_dumps_sorts_keys_and_rejects_nan():
    assert dumps({"b": 1, "a": 2}).index('"a"') < dumps({"b": 1, "a": 2}).index('"b"')
    with pytest.raises(ValueError):
        dumps({"value": float("nan")})
    with pytest.raises(ValueError):
        dumps({"value": np.float64("nan")})
    with pytest.raises(TypeError):
        dumps({"value": object()})


def test_write_json_is_byte_stable(out_dir: Path):
    first = write_json(out_dir / "a.json", {"x": np.int64(1), "y": [0.5]})
    second = write_json(out_dir / "b.json", {"y": [0.5], "x": 1})
    assert first.read_bytes() == second.read_bytes()


def test_run_metadata_sidecar(out_dir: Path):
    target = out_dir / "report.json"
    sidecar = write_run_metadata(target, "experiment", ["experiment", "--check"])
    assert sidecar.name == "report.json" + RUN_SUFFIX
    metadata = json.loads(sidecar.read_text(encoding="utf-8"))
    assert metadata[ATTR_VERSION] == PACKAGE_VERSION
    assert metadata["argv"] == ["experiment", "--check"]
    assert metadata["output"] == "report.json"
    created = datetime.fromisoformat(metadata[ATTR_CREATED_AT])
    assert created.utcoffset().total_seconds() == 0
