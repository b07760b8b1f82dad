"""Dense array containers and the SGT1 / PGM on-disk formats.

Every tensor type is a frozen dataclass around a read-only numpy array. The
constructors validate the type invariants, so any instance that exists is
valid and safe to share between worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
import struct
from typing import Union

import numpy as np

from .const import (
    GLOBAL_PRIOR_SUM_TOLERANCE,
    KIND_FEATURES,
    KIND_LABELS,
    KIND_PRIORS,
    KIND_PROBS,
    PGM_MAX_16BIT,
    PROB_SUM_TOLERANCE,
    RAW_PRIOR_SUM_TOLERANCE,
    SGT_DTYPE_F32,
    SGT_DTYPE_U8,
    SGT_FIXED_HEADER_SIZE,
    SGT_MAGIC,
    SGT_VERSION,
    SIDECAR_SUFFIX,
)
from .exceptions import InvariantError, TensorFormatError

_LOGGER = logging.getLogger(__name__)


def _frozen(array: np.ndarray, dtype: np.dtype | type) -> np.ndarray:
    """Return a C-contiguous, read-only copy of ``array`` with ``dtype``."""
    out = np.array(array, dtype=dtype, order="C", copy=True)
    out.setflags(write=False)
    return out


def _first_pixel(mask: np.ndarray) -> tuple[int, int]:
    """Return the (row, col) of the first True entry of a 2-D mask."""
    row, col = np.argwhere(mask)[0]
    return int(row), int(col)


@dataclass(frozen=True)
class LabelMap:
    """H×W image of 0-based class ids.

    Attributes:
        data: uint8 array of shape (H, W).
        num_classes: Number of classes N; every value is < N.
    """

    data: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InvariantError(f"LabelMap must be 2-D, got shape {data.shape}")
        if not 1 <= self.num_classes <= 256:
            raise InvariantError(
                f"LabelMap num_classes must be within [1, 256], got {self.num_classes}"
            )
        if data.size and (data.min() < 0 or data.max() >= self.num_classes):
            bad = (data < 0) | (data >= self.num_classes)
            pixel = _first_pixel(bad)
            raise InvariantError(
                f"LabelMap value {data[pixel]} at pixel {pixel} is not a class id "
                f"below {self.num_classes}",
                pixel=pixel,
            )
        object.__setattr__(self, "data", _frozen(data, np.uint8))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True)
class ProbabilityMap:
    """H×W×N per-pixel posterior tensor, channel-last float32."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] < 1:
            raise InvariantError(
                f"ProbabilityMap must be H×W×N with N ≥ 1, got shape {data.shape}"
            )
        data = data.astype(np.float32, copy=False)
        finite = np.isfinite(data).all(axis=2)
        if not finite.all():
            pixel = _first_pixel(~finite)
            raise InvariantError(
                f"ProbabilityMap has a non-finite value at pixel {pixel}", pixel=pixel
            )
        negative = (data < 0).any(axis=2)
        if negative.any():
            pixel = _first_pixel(negative)
            raise InvariantError(
                f"ProbabilityMap has a negative value at pixel {pixel}", pixel=pixel
            )
        sums = data.sum(axis=2, dtype=np.float64)
        off = np.abs(sums - 1.0) > PROB_SUM_TOLERANCE
        if off.any():
            pixel = _first_pixel(off)
            raise InvariantError(
                f"ProbabilityMap channels at pixel {pixel} sum to {sums[pixel]:.6g}, "
                f"expected 1 ± {PROB_SUM_TOLERANCE:g}",
                pixel=pixel,
            )
        object.__setattr__(self, "data", _frozen(data, np.float32))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True)
class PriorStack:
    """Pixel-wise class priors p_ij(k), channel-last float32.

    Raw stacks are normalised per pixel. Smoothed stacks are floored at
    ``cutoff`` and are not renormalised.
    """

    data: np.ndarray
    smoothed: bool = False
    cutoff: float = 0.0

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] < 1:
            raise InvariantError(
                f"PriorStack must be H×W×N with N ≥ 1, got shape {data.shape}"
            )
        data = data.astype(np.float32, copy=False)
        if not np.isfinite(data).all():
            pixel = _first_pixel(~np.isfinite(data).all(axis=2))
            raise InvariantError(
                f"PriorStack has a non-finite value at pixel {pixel}", pixel=pixel
            )
        if self.smoothed:
            floor = np.float32(self.cutoff)
            if not 0.0 < self.cutoff < 1.0:
                raise InvariantError(
                    f"Smoothed PriorStack needs a cutoff in (0, 1), got {self.cutoff}"
                )
            bad = ((data < floor) | (data > 1.0)).any(axis=2)
            if bad.any():
                pixel = _first_pixel(bad)
                raise InvariantError(
                    f"Smoothed PriorStack value at pixel {pixel} outside "
                    f"[{self.cutoff:g}, 1]",
                    pixel=pixel,
                )
        else:
            bad = ((data < 0.0) | (data > 1.0)).any(axis=2)
            if bad.any():
                pixel = _first_pixel(bad)
                raise InvariantError(
                    f"Raw PriorStack value at pixel {pixel} outside [0, 1]",
                    pixel=pixel,
                )
            sums = data.sum(axis=2, dtype=np.float64)
            off = np.abs(sums - 1.0) > RAW_PRIOR_SUM_TOLERANCE
            if off.any():
                pixel = _first_pixel(off)
                raise InvariantError(
                    f"Raw PriorStack channels at pixel {pixel} sum to "
                    f"{sums[pixel]:.9g}, expected 1 ± {RAW_PRIOR_SUM_TOLERANCE:g}",
                    pixel=pixel,
                )
        object.__setattr__(self, "data", _frozen(data, np.float32))
        object.__setattr__(self, "cutoff", float(self.cutoff))

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def channel(self, class_id: int) -> np.ndarray:
        """Return the H×W prior map of one class."""
        return self.data[:, :, class_id]


@dataclass(frozen=True)
class GlobalPriors:
    """Scalar per-class priors p^g(k), strictly positive and summing to 1."""

    values: np.ndarray = field()

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise InvariantError(
                f"GlobalPriors must be a non-empty vector, got shape {values.shape}"
            )
        if not np.isfinite(values).all() or (values <= 0).any():
            raise InvariantError(
                f"GlobalPriors must be strictly positive, got {values.tolist()}"
            )
        total = float(values.sum())
        if abs(total - 1.0) > GLOBAL_PRIOR_SUM_TOLERANCE:
            raise InvariantError(
                f"GlobalPriors sum to {total:.9g}, expected 1 ± "
                f"{GLOBAL_PRIOR_SUM_TOLERANCE:g}"
            )
        object.__setattr__(self, "values", _frozen(values, np.float64))

    @property
    def num_classes(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_stack(cls, stack: PriorStack) -> GlobalPriors:
        """Average a (possibly smoothed) stack per class and renormalise to 1."""
        means = stack.data.astype(np.float64).mean(axis=(0, 1))
        return cls(means / means.sum())

    def to_json(self) -> list[float]:
        return [float(v) for v in self.values]


Tensor = Union[LabelMap, ProbabilityMap, PriorStack, np.ndarray]


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + SIDECAR_SUFFIX)


def _encode(tensor: Tensor) -> tuple[int, tuple[int, ...], bytes]:
    """Return (dtype byte, dims, payload) for a tensor."""
    if isinstance(tensor, LabelMap):
        return SGT_DTYPE_U8, tensor.data.shape, tensor.data.tobytes(order="C")
    if isinstance(tensor, (ProbabilityMap, PriorStack)):
        return (
            SGT_DTYPE_F32,
            tensor.data.shape,
            tensor.data.astype("<f4").tobytes(order="C"),
        )
    array = np.asarray(tensor)
    if array.ndim not in (2, 3):
        raise InvariantError(f"Only 2-D or 3-D arrays can be stored, got {array.shape}")
    if array.dtype == np.uint8:
        return SGT_DTYPE_U8, array.shape, np.ascontiguousarray(array).tobytes()
    if array.dtype == np.float32:
        if not np.isfinite(array).all():
            raise InvariantError("Refusing to store non-finite float32 array")
        return SGT_DTYPE_F32, array.shape, array.astype("<f4").tobytes(order="C")
    raise InvariantError(f"Unsupported array dtype {array.dtype}")


def write_tensor(path: str | Path, tensor: Tensor) -> None:
    """Serialize a tensor to an SGT1 file.

    PriorStacks additionally get a ``<file>.meta.json`` sidecar recording the
    ``smoothed`` flag and ``cutoff``.

    Args:
        path: Destination file; its parent directory must exist.
        tensor: A LabelMap, ProbabilityMap, PriorStack, or a plain 2-D/3-D
            uint8 or float32 array (e.g. synthetic features).

    Raises:
        InvariantError: If the tensor cannot be stored.
        OSError: If the path is not writable.
    """
    path = Path(path)
    dtype_code, dims, payload = _encode(tensor)
    header = struct.pack(
        "<4sBBBB", SGT_MAGIC, SGT_VERSION, dtype_code, len(dims), 0
    ) + struct.pack(f"<{len(dims)}I", *dims)
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(payload)
    if isinstance(tensor, PriorStack):
        meta = {"kind": KIND_PRIORS, "smoothed": tensor.smoothed, "cutoff": tensor.cutoff}
        _sidecar_path(path).write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    _LOGGER.debug(
        "SegDecide TensorIO: Wrote %s tensor %s to %s", type(tensor).__name__, dims, path
    )


def _read_raw(path: Path) -> tuple[int, tuple[int, ...], np.ndarray]:
    """Parse an SGT1 file into (dtype byte, dims, flat array)."""
    blob = path.read_bytes()
    if len(blob) < SGT_FIXED_HEADER_SIZE:
        raise TensorFormatError(f"{path}: file too short for an SGT1 header")
    magic, version, dtype_code, ndim, reserved = struct.unpack_from("<4sBBBB", blob)
    if magic != SGT_MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}, expected {SGT_MAGIC!r}")
    if version != SGT_VERSION:
        raise TensorFormatError(f"{path}: unsupported SGT1 version {version}")
    if dtype_code not in (SGT_DTYPE_U8, SGT_DTYPE_F32):
        raise TensorFormatError(f"{path}: unknown dtype byte 0x{dtype_code:02x}")
    if ndim not in (2, 3):
        raise TensorFormatError(f"{path}: ndim must be 2 or 3, got {ndim}")
    if reserved != 0:
        raise TensorFormatError(f"{path}: reserved header byte is {reserved}, not 0")
    dims_end = SGT_FIXED_HEADER_SIZE + 4 * ndim
    if len(blob) < dims_end:
        raise TensorFormatError(f"{path}: truncated dimension block")
    dims = struct.unpack_from(f"<{ndim}I", blob, SGT_FIXED_HEADER_SIZE)
    itemsize = 1 if dtype_code == SGT_DTYPE_U8 else 4
    expected = int(np.prod(dims, dtype=np.int64)) * itemsize
    actual = len(blob) - dims_end
    if actual < expected:
        raise TensorFormatError(
            f"{path}: truncated payload, {actual} of {expected} bytes present"
        )
    if actual > expected:
        raise TensorFormatError(f"{path}: {actual - expected} trailing bytes after payload")
    dtype = np.uint8 if dtype_code == SGT_DTYPE_U8 else np.dtype("<f4")
    flat = np.frombuffer(blob, dtype=dtype, count=expected // itemsize, offset=dims_end)
    return dtype_code, tuple(int(d) for d in dims), flat


def _read_prior_meta(path: Path, data: np.ndarray) -> tuple[bool, float]:
    """Return (smoothed, cutoff) from the sidecar, or infer them from the data."""
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
            return bool(meta["smoothed"]), float(meta["cutoff"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise TensorFormatError(f"{sidecar}: invalid prior metadata: {err}") from err
    sums = data.sum(axis=2, dtype=np.float64)
    if np.all(np.abs(sums - 1.0) <= RAW_PRIOR_SUM_TOLERANCE):
        return False, 0.0
    _LOGGER.warning(
        "SegDecide TensorIO: No sidecar for %s, reading as smoothed stack with "
        "cutoff = minimum value",
        path,
    )
    return True, float(data.min())


def read_tensor(
    path: str | Path, kind: str | None = None, num_classes: int | None = None
) -> Tensor:
    """Read an SGT1 file written by :func:`write_tensor`.

    Args:
        path: Source file.
        kind: Expected tensor kind (``labels``, ``probs``, ``priors`` or
            ``features``). Defaults to ``labels`` for 2-D uint8 data,
            ``features`` for 2-D float32 data and ``probs`` for 3-D data.
        num_classes: Class count of a LabelMap; defaults to ``max + 1``.

    Returns:
        The decoded tensor. Features come back as a read-only float32 array.

    Raises:
        TensorFormatError: On bad magic, version, dtype or truncation.
        InvariantError: If the decoded data violates the type invariants.
    """
    path = Path(path)
    dtype_code, dims, flat = _read_raw(path)
    data = flat.reshape(dims)
    if kind is None:
        if len(dims) == 2:
            kind = KIND_LABELS if dtype_code == SGT_DTYPE_U8 else KIND_FEATURES
        else:
            kind = KIND_PROBS

    if kind == KIND_LABELS:
        if dtype_code != SGT_DTYPE_U8 or len(dims) != 2:
            raise TensorFormatError(f"{path}: a LabelMap must be 2-D uint8")
        if num_classes is None:
            num_classes = int(data.max()) + 1 if data.size else 1
        return LabelMap(data, num_classes)
    if kind == KIND_FEATURES:
        if dtype_code != SGT_DTYPE_F32 or len(dims) != 2:
            raise TensorFormatError(f"{path}: a feature map must be 2-D float32")
        return _frozen(data, np.float32)
    if dtype_code != SGT_DTYPE_F32 or len(dims) != 3:
        raise TensorFormatError(f"{path}: a {kind} tensor must be 3-D float32")
    if kind == KIND_PROBS:
        return ProbabilityMap(data)
    if kind == KIND_PRIORS:
        smoothed, cutoff = _read_prior_meta(path, data)
        return PriorStack(data, smoothed=smoothed, cutoff=cutoff)
    raise TensorFormatError(f"Unknown tensor kind {kind!r}")


def write_pgm(path: str | Path, image: np.ndarray, max_val: int) -> None:
    """Write a binary (P5) PGM file.

    Samples are 8-bit when ``max_val`` ≤ 255 and 16-bit big-endian otherwise.

    Args:
        path: Destination file.
        image: H×W array of non-negative integers.
        max_val: Maximum sample value, 1 ≤ max_val ≤ 65535.

    Raises:
        InvariantError: If a value is negative, non-integral or exceeds
            ``max_val``.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise InvariantError(f"PGM images must be 2-D, got shape {image.shape}")
    if not 1 <= max_val <= PGM_MAX_16BIT:
        raise InvariantError(f"PGM max_val must be within [1, 65535], got {max_val}")
    if image.size:
        if np.issubdtype(image.dtype, np.floating) and not np.all(
            np.equal(np.mod(image, 1), 0)
        ):
            raise InvariantError("PGM samples must be integers")
        if image.min() < 0:
            raise InvariantError(f"PGM sample {image.min()} is negative")
        if image.max() > max_val:
            pixel = _first_pixel(image > max_val)
            raise InvariantError(
                f"PGM sample {image.max()} at {pixel} exceeds max_val {max_val}",
                pixel=pixel,
            )
    height, width = image.shape
    header = f"P5\n{width} {height}\n{max_val}\n".encode("ascii")
    sample_type = np.dtype("u1") if max_val <= 255 else np.dtype(">u2")
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(image.astype(sample_type).tobytes(order="C"))
    _LOGGER.debug("SegDecide TensorIO: Wrote %dx%d PGM to %s", width, height, path)
