"""Dense 3D scalar volumes with voxel spacing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Volume:
    """A 3D scalar field indexed ``data[i, j, k]`` with spacing in mm/voxel.

    Data is stored as float32.  The on-disk order is x-fastest, which is the
    Fortran ravel of ``data``.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"volume must be 3D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"volume shape must be positive, got {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def like(self, data) -> "Volume":
        """New volume with this volume's spacing."""
        return Volume(data, self.spacing)

    def __getitem__(self, index):
        return self.data[index]


def in_bounds(index, shape) -> bool:
    return all(0 <= int(c) < n for c, n in zip(index, shape)) and len(index) == 3


def _axis_derivative(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    d = np.empty_like(a)
    d[1:-1] = (a[2:] - a[:-2]) / (2.0 * h)
    d[0] = (a[1] - a[0]) / h
    d[-1] = (a[-1] - a[-2]) / h
    return np.moveaxis(d, 0, axis)


def gradient_magnitude(vol: Volume) -> Volume:
    """Norm of the spacing-aware finite-difference gradient.

    Central differences inside, one-sided differences on the faces.
    """
    if min(vol.shape) < 2:
        raise ValueError("volume too small for gradient")
    a = vol.data.astype(np.float64)
    sq = np.zeros_like(a)
    for axis in range(3):
        sq += _axis_derivative(a, axis, vol.spacing[axis]) ** 2
    return vol.like(np.sqrt(sq))


def normalize_intensity(vol: Volume) -> Volume:
    """Affine rescale to [0, 1]; constant volumes map to 0.5."""
    a = vol.data.astype(np.float64)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return vol.like(np.full(vol.shape, 0.5))
    return vol.like((a - lo) / (hi - lo))
