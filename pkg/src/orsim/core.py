"""Domain types plus vector and box geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, OutOfRange, ValidationError, ZeroVector

ZERO_NORM = 1e-12

# Unit vectors are snapped to a fixed-point grid of 2**-GRID_BITS before dot
# products. Grid coordinates are integers with |g|_2 <= 2**26 + sqrt(d)/2, so
# every partial sum of a dot product stays below 2**53 and is exact in float64
# whatever the BLAS kernel, batch shape or thread count.
GRID_BITS = 26
GRID_SCALE = float(2 ** GRID_BITS)


def _exact_norm(values: np.ndarray) -> float:
    # fsum is correctly rounded, so the norm does not depend on summation order
    return math.sqrt(math.fsum(np.square(values, dtype=np.float64).tolist()))


@dataclass(frozen=True, eq=False)
class Embedding:
    """Feature vector of one detection, stored as given (not normalized)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError(f"embedding must be a non-empty 1-d vector, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @cached_property
    def norm(self) -> float:
        return _exact_norm(self.values)

    @cached_property
    def unit(self) -> np.ndarray:
        if self.norm < ZERO_NORM:
            raise ZeroVector("cannot normalize a zero vector")
        out = np.asarray(self.values, dtype=np.float64) / self.norm
        out.flags.writeable = False
        return out

    @cached_property
    def grid(self) -> np.ndarray:
        """Unit vector on the fixed-point grid (integer-valued float64)."""
        out = np.rint(self.unit * GRID_SCALE)
        out.flags.writeable = False
        return out

    @cached_property
    def grid_sq(self) -> float:
        return float(np.dot(self.grid, self.grid))

    def __eq__(self, other):
        if not isinstance(other, Embedding):
            return NotImplemented
        return self.values.dtype == other.values.dtype and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


def l2_normalize(v: Embedding) -> Embedding:
    """Return ``v`` scaled to unit Euclidean norm.

    Raises ZeroVector when the norm is below 1e-12.
    """
    return Embedding(v.unit.copy())


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner (x, y) plus width and height, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValidationError(f"bbox {name} must be finite, got {val}")
            object.__setattr__(self, name, val)
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"bbox needs w > 0 and h > 0, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        # computed from the corners so that iou(a, a) == 1 exactly
        return (self.x2 - self.x) * (self.y2 - self.y)

    def as_list(self) -> list:
        return [self.x, self.y, self.w, self.h]


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


@dataclass(frozen=True)
class GalleryItem:
    item_id: str
    frame_id: str
    bbox: BBox
    det_score: float
    embedding: Embedding = field(repr=False)
    person_id: Optional[str] = None

    def __post_init__(self):
        score = float(self.det_score)
        if not (0.0 <= score <= 1.0):
            raise OutOfRange(f"det_score of {self.item_id!r} must lie in [0, 1], got {score}")
        object.__setattr__(self, "det_score", score)


@dataclass(frozen=True)
class ProbeContext:
    """A probe detection and the other detections of its frame."""

    probe: GalleryItem
    neighbors: Tuple[GalleryItem, ...] = ()

    def __post_init__(self):
        neighbors = tuple(self.neighbors)
        for nb in neighbors:
            if nb.frame_id != self.probe.frame_id:
                raise ValidationError(
                    f"neighbor {nb.item_id!r} is in frame {nb.frame_id!r}, "
                    f"probe is in {self.probe.frame_id!r}")
            if nb.item_id == self.probe.item_id:
                raise ValidationError("the probe cannot be its own neighbor")
        object.__setattr__(self, "neighbors", neighbors)

    @property
    def queries(self) -> Tuple[GalleryItem, ...]:
        """Probe first, then neighbors."""
        return (self.probe,) + self.neighbors

    @property
    def num_neighbors(self) -> int:
        return len(self.neighbors)


@dataclass(frozen=True)
class Frame:
    frame_id: str
    gt_boxes: Tuple[Tuple[BBox, str], ...] = ()

    def __post_init__(self):
        boxes = tuple((box, str(pid)) for box, pid in self.gt_boxes)
        pids = [pid for _, pid in boxes]
        if len(set(pids)) != len(pids):
            raise ValidationError(f"frame {self.frame_id!r} repeats a person_id")
        object.__setattr__(self, "gt_boxes", boxes)


def check_same_dim(items: Sequence[GalleryItem], dim: Optional[int] = None) -> int:
    for it in items:
        if dim is None:
            dim = it.embedding.dim
        elif it.embedding.dim != dim:
            raise DimensionMismatch(
                f"item {it.item_id!r} has dimension {it.embedding.dim}, expected {dim}")
    if dim is None:
        raise ValidationError("no items given")
    return dim
