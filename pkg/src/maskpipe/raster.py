"""Raster containers with validation and bit-exact file IO.

Four map types share the same layout: a 2-D numpy array plus invariant
checks at construction.  Float rasters travel in a small binary format
("BFR1": magic, u32 LE height, u32 LE width, f32 LE row-major payload);
integer maps travel as single-channel 8/16-bit PNG.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

MAGIC = b"BFR1"


class RasterError(Exception):
    """Base class for raster IO and validation failures."""


class FormatError(RasterError):
    """File is not in the expected format."""


class ValidationError(RasterError):
    """Contents violate a map invariant."""


def _freeze(data: np.ndarray, original) -> np.ndarray:
    """Make `data` contiguous and read-only without mutating the caller's
    array in place."""
    data = np.ascontiguousarray(data)
    if data is original or data.base is original:
        data = data.copy()
    data.flags.writeable = False
    return data


def _require_2d(data: np.ndarray, name: str) -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValidationError(f"{name}: expected 2-D array, got shape {data.shape}")
    if data.shape[0] <= 0 or data.shape[1] <= 0:
        raise ValidationError(f"{name}: degenerate dimensions {data.shape}")
    return data


@dataclass(frozen=True)
class ProbMap:
    """H x W probabilities in [0, 1].

    Stored as float32 (the raster interchange precision) unless constructed
    from float64, which is preserved for the 64-bit loss paths.
    """

    data: np.ndarray

    def __post_init__(self):
        data = _require_2d(self.data, "ProbMap")
        if data.dtype != np.float64:
            data = data.astype(np.float32, copy=False)
        if np.isnan(data).any():
            raise ValidationError("ProbMap: NaN value present")
        bad = np.flatnonzero((data < 0.0) | (data > 1.0))
        if bad.size:
            i = int(bad[0])
            raise ValidationError(
                f"ProbMap: value {float(data.flat[i])} out of [0,1] at index {i}"
            )
        object.__setattr__(self, "data", _freeze(data, self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelMap:
    """H x W non-negative integer labels; 0 is background/unassigned."""

    data: np.ndarray

    def __post_init__(self):
        data = _require_2d(self.data, "LabelMap")
        if not np.issubdtype(data.dtype, np.integer):
            raise ValidationError(f"LabelMap: non-integer dtype {data.dtype}")
        if data.min(initial=0) < 0:
            raise ValidationError("LabelMap: negative label present")
        data = data.astype(np.int32, copy=False)
        object.__setattr__(self, "data", _freeze(data, self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def num_labels(self) -> int:
        return int(self.data.max(initial=0))


@dataclass(frozen=True)
class SemanticMap:
    """H x W class ids in {0..C}; 0 is background."""

    data: np.ndarray
    num_classes: int = 0  # 0 means "infer from contents"

    def __post_init__(self):
        data = _require_2d(self.data, "SemanticMap")
        if not np.issubdtype(data.dtype, np.integer):
            raise ValidationError(f"SemanticMap: non-integer dtype {data.dtype}")
        if data.min(initial=0) < 0:
            raise ValidationError("SemanticMap: negative class id present")
        top = int(data.max(initial=0))
        num_classes = self.num_classes or top
        if top > num_classes:
            raise ValidationError(
                f"SemanticMap: class id {top} exceeds declared class count {num_classes}"
            )
        data = data.astype(np.int32, copy=False)
        object.__setattr__(self, "data", _freeze(data, self.data))
        object.__setattr__(self, "num_classes", num_classes)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """H x W booleans."""

    data: np.ndarray

    def __post_init__(self):
        data = _require_2d(self.data, "BinaryMask")
        if data.dtype != np.bool_:
            if np.issubdtype(data.dtype, np.integer):
                data = data.astype(bool)
            else:
                raise ValidationError(f"BinaryMask: non-boolean dtype {data.dtype}")
        object.__setattr__(self, "data", _freeze(data, self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        return int(self.data.sum())


# ---------------------------------------------------------------------------
# BFR1 float raster IO

def read_float_raster(path) -> ProbMap:
    """Read a BFR1 file into a ProbMap, validating range on the way in."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        header = f.read(8)
        if len(header) != 8:
            raise IOError(f"{path}: truncated header")
        h, w = struct.unpack("<II", header)
        if h == 0 or w == 0:
            raise ValidationError(f"{path}: degenerate dimensions {h}x{w}")
        payload = f.read(4 * h * w)
        if len(payload) != 4 * h * w:
            raise IOError(
                f"{path}: truncated payload ({len(payload)} of {4 * h * w} bytes)"
            )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return ProbMap(data)


def write_float_raster(pmap: ProbMap, path) -> None:
    """Write a ProbMap as BFR1; read_float_raster inverts it bit-for-bit."""
    payload = np.ascontiguousarray(pmap.data, dtype="<f4").tobytes()
    blob = MAGIC + struct.pack("<II", pmap.height, pmap.width) + payload
    _atomic_write_bytes(path, blob)


# ---------------------------------------------------------------------------
# PNG label / semantic map IO

_GRAY_MODES = {"L", "I", "I;16", "I;16B", "1"}


def read_label_png(path) -> LabelMap:
    """Read a single-channel 8/16-bit PNG; intensities become labels verbatim."""
    try:
        img = Image.open(path)
    except Exception as e:
        raise FormatError(f"{path}: not a readable image ({e})") from e
    with img:
        if img.format != "PNG":
            raise FormatError(f"{path}: expected PNG, got {img.format}")
        if img.mode not in _GRAY_MODES:
            raise FormatError(
                f"{path}: expected single-channel PNG, got mode {img.mode}"
            )
        data = np.asarray(img)
    if data.ndim != 2:
        raise FormatError(f"{path}: expected single channel, got shape {data.shape}")
    return LabelMap(data.astype(np.int32))


def write_label_png(lmap: LabelMap, path) -> None:
    """Write labels as a 16-bit grayscale PNG; read_label_png inverts exactly."""
    if lmap.data.max(initial=0) > 65535:
        raise ValidationError(
            f"label {int(lmap.data.max())} exceeds 16-bit PNG range"
        )
    img = Image.fromarray(lmap.data.astype(np.uint16))  # mode I;16
    _atomic_write_image(img, path)


def read_semantic_png(path, num_classes: int = 0) -> SemanticMap:
    lmap = read_label_png(path)
    return SemanticMap(lmap.data, num_classes)


def write_semantic_png(smap: SemanticMap, path) -> None:
    write_label_png(LabelMap(smap.data), path)


# ---------------------------------------------------------------------------
# atomic writes: temp file in target dir + rename

def _atomic_write_bytes(path, blob: bytes) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def _atomic_write_image(img: Image.Image, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    img.save(tmp, format="PNG")
    os.replace(tmp, path)
