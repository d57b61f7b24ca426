"""Regular-grid volumes, ROI masks and boundary geometry.

Volumes hold a 3D numpy array indexed ``[i1, i2, i3]`` with axis 2 along
B0.  The flat, serialised layout is x-fastest, i.e. ``ravel(order="F")``.
Arrays are stored read-only; every operation returns a new volume.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import GridMismatch

__all__ = [
    "GridSpec",
    "ScalarVolume",
    "ComplexVolume",
    "RoiMask",
    "boundary_set",
    "interior_set",
    "band_mask",
    "pad_zero",
    "crop_center",
]

_MIN_DIM = 4
# 6-connectivity, matching the 7-point Laplacian
_FACE_STRUCT = ndimage.generate_binary_structure(3, 1)
_CUBE_STRUCT = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class GridSpec:
    """Voxel counts ``dims`` and voxel size ``spacing`` (mm)."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(h) for h in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValueError("GridSpec needs three dims and three spacings")
        if min(dims) < _MIN_DIM:
            raise ValueError(f"all dims must be >= {_MIN_DIM}, got {dims}")
        if not all(np.isfinite(h) and h > 0 for h in spacing):
            raise ValueError(f"spacings must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def size(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64))

    def padded(self, factor: int) -> GridSpec:
        return GridSpec(tuple(factor * n for n in self.dims), self.spacing)

    def voxel_centers(self):
        """Physical coordinates (mm) of voxel centres, ``(i + 0.5) * h``."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.dims, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")


def _as_grid_array(grid: GridSpec, data, dtype) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim == 1:
        if arr.size != grid.size:
            raise GridMismatch(f"expected {grid.size} samples, got {arr.size}")
        arr = arr.reshape(grid.shape, order="F")
    if arr.shape != grid.shape:
        raise GridMismatch(f"array shape {arr.shape} does not match grid {grid.shape}")
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class _VolumeBase:
    grid: GridSpec
    data: np.ndarray

    def flat(self) -> np.ndarray:
        """Samples in x-fastest order."""
        return self.data.ravel(order="F")

    def _check(self, other):
        if other.grid != self.grid:
            raise GridMismatch(f"{other.grid} != {self.grid}")

    def __add__(self, other):
        self._check(other)
        return type(self)(self.grid, self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return type(self)(self.grid, self.data - other.data)

    def __mul__(self, alpha):
        return type(self)(self.grid, self.data * alpha)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.data)


@dataclass(frozen=True, eq=False)
class ScalarVolume(_VolumeBase):
    grid: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _as_grid_array(self.grid, self.data, np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("ScalarVolume data must be finite")
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, grid: GridSpec) -> ScalarVolume:
        return cls(grid, np.zeros(grid.shape))

    def like(self, data) -> ScalarVolume:
        return ScalarVolume(self.grid, data)


@dataclass(frozen=True, eq=False)
class ComplexVolume(_VolumeBase):
    grid: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _as_grid_array(self.grid, self.data, np.complex128)
        if not np.all(np.isfinite(arr)):
            raise ValueError("ComplexVolume data must be finite")
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True, eq=False)
class RoiMask:
    """Boolean region of interest; ``member`` is True inside the ROI."""

    grid: GridSpec
    member: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "member", _as_grid_array(self.grid, self.member, bool))

    @property
    def count(self) -> int:
        return int(self.member.sum())

    def flat(self) -> np.ndarray:
        return self.member.ravel(order="F")

    def indicator(self) -> ScalarVolume:
        return ScalarVolume(self.grid, self.member.astype(np.float64))

    def __and__(self, other: RoiMask) -> RoiMask:
        return RoiMask(self.grid, self.member & other.member)

    def __or__(self, other: RoiMask) -> RoiMask:
        return RoiMask(self.grid, self.member | other.member)

    def __sub__(self, other: RoiMask) -> RoiMask:
        return RoiMask(self.grid, self.member & ~other.member)

    def __invert__(self) -> RoiMask:
        return RoiMask(self.grid, ~self.member)


def interior_set(mask: RoiMask) -> RoiMask:
    """Voxels of the ROI whose six face neighbours are all in the ROI."""
    inner = ndimage.binary_erosion(mask.member, structure=_FACE_STRUCT, border_value=0)
    return RoiMask(mask.grid, inner)


def boundary_set(mask: RoiMask) -> RoiMask:
    """ROI voxels with at least one face neighbour outside the ROI.

    Grid edges count as outside, so a full-grid mask yields the outer shell.
    """
    return RoiMask(mask.grid, mask.member & ~interior_set(mask).member)


def band_mask(mask: RoiMask, k: int) -> RoiMask:
    """Voxels within Chebyshev distance ``k`` of the ROI boundary, both sides."""
    if k < 0:
        raise ValueError("band width must be non-negative")
    edge = boundary_set(mask).member
    if k == 0 or not edge.any():
        return RoiMask(mask.grid, edge)
    band = ndimage.binary_dilation(edge, structure=_CUBE_STRUCT, iterations=k)
    return RoiMask(mask.grid, band)


def pad_zero(vol: ScalarVolume, factor: int) -> ScalarVolume:
    """Embed ``vol`` at the low-index corner of a grid ``factor`` times larger."""
    if int(factor) != factor or factor < 1:
        raise ValueError("pad factor must be an integer >= 1")
    big = vol.grid.padded(int(factor))
    out = np.zeros(big.shape)
    n1, n2, n3 = vol.grid.dims
    out[:n1, :n2, :n3] = vol.data
    return ScalarVolume(big, out)


def crop_center(vol: ScalarVolume, target: GridSpec) -> ScalarVolume:
    """Left inverse of :func:`pad_zero`: keep the low-index ``target.dims`` block.

    The name is kept for the pipeline vocabulary; since padding puts the
    original at the low corner, that block is where the original lives.
    """
    if target.spacing != vol.grid.spacing:
        raise GridMismatch("crop target must share the source spacing")
    if any(t > s for t, s in zip(target.dims, vol.grid.dims)):
        raise GridMismatch(f"cannot crop {vol.grid.dims} to larger {target.dims}")
    n1, n2, n3 = target.dims
    return ScalarVolume(target, vol.data[:n1, :n2, :n3])
