"""Tests for the tensor containers and the SGT1 / PGM formats."""

from pathlib import Path
import struct

import numpy as np
from PIL import Image
import pytest

from segdecide.const import KIND_FEATURES, KIND_LABELS, KIND_PRIORS, KIND_PROBS, SGT_MAGIC
from segdecide.exceptions import InvariantError, TensorFormatError
from segdecide.tensor_io import (
    GlobalPriors,
    LabelMap,
    PriorStack,
    ProbabilityMap,
    read_tensor,
    write_pgm,
    write_tensor,
)

from tests.conftest import MOCK_GT, MOCK_NUM_CLASSES, one_hot


def test_label_map_rejects_out_of_range_class():
    """A label equal to num_classes names the offending pixel."""
    data = MOCK_GT.copy()
    data[3, 4] = MOCK_NUM_CLASSES
    with pytest.raises(InvariantError) as excinfo:
        LabelMap(data, MOCK_NUM_CLASSES)
    assert excinfo.value.pixel == (3, 4)


def test_containers_are_read_only(gt_map: LabelMap):
    with pytest.raises(ValueError):
        gt_map.data[0, 0] = 1


def test_probability_map_sum_tolerance():
    probs = one_hot(MOCK_GT, MOCK_NUM_CLASSES, confidence=0.8).data.copy()
    probs[0, 0, 0] += 5e-5
    ProbabilityMap(probs)
    probs[2, 3, 0] += 1e-3
    with pytest.raises(InvariantError) as excinfo:
        ProbabilityMap(probs)
    assert excinfo.value.pixel == (2, 3)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -0.1])
def test_probability_map_rejects_bad_values(bad: float):
    probs = one_hot(MOCK_GT, MOCK_NUM_CLASSES).data.copy()
    probs[1, 1, 2] = bad
    with pytest.raises(InvariantError):
        ProbabilityMap(probs)


def test_smoothed_prior_stack_respects_cutoff():
    data = np.full((2, 2, 2), 0.5, dtype=np.float32)
    data[0, 1, 0] = 1e-6
    with pytest.raises(InvariantError):
        PriorStack(data, smoothed=True, cutoff=1e-5)
    PriorStack(data, smoothed=True, cutoff=1e-6)


def test_global_priors_must_be_positive_and_normalised():
    with pytest.raises(InvariantError):
        GlobalPriors(np.array([0.5, 0.5, 0.0]))
    with pytest.raises(InvariantError):
        GlobalPriors(np.array([0.5, 0.6]))
    priors = GlobalPriors(np.array([0.25, 0.75]))
    assert priors.num_classes == 2
    assert priors.to_json() == [0.25, 0.75]


def test_label_map_file_layout(out_dir: Path, gt_map: LabelMap):
    """Header is magic, version, dtype, ndim, reserved, then little-endian dims."""
    path = out_dir / "gt.sgt"
    write_tensor(path, gt_map)
    blob = path.read_bytes()
    assert blob[:4] == SGT_MAGIC
    assert blob[4:8] == bytes([1, 0, 2, 0])
    assert struct.unpack("<2I", blob[8:16]) == (4, 6)
    assert blob[16:] == MOCK_GT.tobytes()

    restored = read_tensor(path, kind=KIND_LABELS, num_classes=MOCK_NUM_CLASSES)
    assert np.array_equal(restored.data, MOCK_GT)
    assert restored.num_classes == MOCK_NUM_CLASSES


def test_probability_map_is_stored_bit_exact(out_dir: Path):
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(3, 5, 4))
    data = (np.exp(logits) / np.exp(logits).sum(axis=2, keepdims=True)).astype(np.float32)
    path = out_dir / "probs.sgt"
    write_tensor(path, ProbabilityMap(data))
    restored = read_tensor(path, kind=KIND_PROBS)
    assert restored.data.tobytes() == data.tobytes()


def test_prior_stack_sidecar(out_dir: Path):
    data = np.full((2, 3, 2), 0.5, dtype=np.float32)
    path = out_dir / "priors.sgt"
    write_tensor(path, PriorStack(data, smoothed=True, cutoff=1e-3))
    assert (out_dir / "priors.sgt.meta.json").exists()
    restored = read_tensor(path, kind=KIND_PRIORS)
    assert restored.smoothed is True
    assert restored.cutoff == pytest.approx(1e-3)


def test_prior_stack_without_sidecar_is_inferred(out_dir: Path):
    """A stack not summing to 1 reads as smoothed with cutoff = minimum."""
    data = np.array([[[0.9, 0.05]]], dtype=np.float32)
    path = out_dir / "priors.sgt"
    write_tensor(path, PriorStack(data, smoothed=True, cutoff=0.01))
    (out_dir / "priors.sgt.meta.json").unlink()
    restored = read_tensor(path, kind=KIND_PRIORS)
    assert restored.smoothed is True
    assert restored.cutoff == pytest.approx(0.05)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda blob: b"XXXX" + blob[4:],
        lambda blob: blob[:4] + b"\x02" + blob[5:],
        lambda blob: blob[:5] + b"\x07" + blob[6:],
        lambda blob: blob[:-1],
        lambda blob: blob + b"\x00",
        lambda blob: blob[:6],
    ],
    ids=["magic", "version", "dtype", "truncated", "trailing", "short-header"],
)
def test_read_rejects_malformed_files(out_dir: Path, gt_map: LabelMap, mutate):
    path = out_dir / "gt.sgt"
    write_tensor(path, gt_map)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(TensorFormatError):
        read_tensor(path)


def test_read_rejects_wrong_kind(out_dir: Path, gt_map: LabelMap):
    path = out_dir / "gt.sgt"
    write_tensor(path, gt_map)
    with pytest.raises(TensorFormatError):
        read_tensor(path, kind=KIND_PROBS)


def test_features_round_trip_as_plain_array(out_dir: Path):
    features = np.linspace(-1.0, 1.0, 12, dtype=np.float32).reshape(3, 4)
    path = out_dir / "features.sgt"
    write_tensor(path, features)
    restored = read_tensor(path)
    assert restored.dtype == np.float32
    assert np.array_equal(restored, features)


def test_write_pgm_8_and_16_bit(out_dir: Path):
    small = out_dir / "small.pgm"
    write_pgm(small, np.array([[0, 1], [2, 255]]), 255)
    assert small.read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 1, 2, 255])

    wide = out_dir / "wide.pgm"
    write_pgm(wide, np.array([[0, 300]]), 1000)
    assert wide.read_bytes() == b"P5\n2 1\n1000\n" + struct.pack(">2H", 0, 300)


def _random_tensor(seed: int) -> tuple[object, str]:
    rng = np.random.default_rng(seed)
    height, width = (int(n) for n in rng.integers(1, 20, size=2))
    num_classes = int(rng.integers(1, 9))
    kind = seed % 4
    if kind == 0:
        labels = rng.integers(0, num_classes, size=(height, width))
        return LabelMap(labels, num_classes), KIND_LABELS
    if kind == 1:
        raw = rng.random((height, width, num_classes)) + 1e-3
        probs = ProbabilityMap((raw / raw.sum(axis=2, keepdims=True)).astype(np.float32))
        return probs, KIND_PROBS
    if kind == 2:
        data = rng.uniform(1e-3, 1.0, size=(height, width, num_classes)).astype(np.float32)
        return PriorStack(data, smoothed=True, cutoff=1e-3), KIND_PRIORS
    return rng.normal(size=(height, width)).astype(np.float32), KIND_FEATURES


@pytest.mark.parametrize("seed", range(40))
def test_random_tensors_round_trip_bit_exact(out_dir: Path, seed: int):
    tensor, kind = _random_tensor(seed)
    first, second = out_dir / "first.sgt", out_dir / "second.sgt"
    write_tensor(first, tensor)
    restored = read_tensor(first, kind=kind)
    write_tensor(second, restored)
    assert first.read_bytes() == second.read_bytes()
    data = tensor if isinstance(tensor, np.ndarray) else tensor.data
    restored_data = restored if isinstance(restored, np.ndarray) else restored.data
    assert restored_data.dtype == data.dtype
    assert restored_data.tobytes() == data.tobytes()


@pytest.mark.parametrize("max_val", [255, 65535])
@pytest.mark.parametrize("seed", range(5))
def test_pgm_is_readable_by_pillow(out_dir: Path, max_val: int, seed: int):
    rng = np.random.default_rng(seed)
    shape = tuple(int(n) for n in rng.integers(1, 30, size=2))
    image = rng.integers(0, max_val + 1, size=shape)
    path = out_dir / "image.pgm"
    write_pgm(path, image, max_val)
    with Image.open(path) as decoded:
        assert decoded.size == (image.shape[1], image.shape[0])
        assert np.array_equal(np.asarray(decoded).astype(np.int64), image)


def test_write_pgm_rejects_values_above_max(out_dir: Path):
    with pytest.raises(InvariantError):
        write_pgm(out_dir / "bad.pgm", np.array([[0, 256]]), 255)
