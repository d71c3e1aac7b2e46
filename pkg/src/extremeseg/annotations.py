"""Extreme points, bounding boxes and the initial label field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Volume, in_bounds

POINT_KEYS = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")

# Label states of a SupervisionMask.
UNLABELED = -1
BG = 0
FG = 1


def _as_index(p) -> tuple[int, int, int]:
    t = tuple(int(c) for c in p)
    if len(t) != 3 or any(c < 0 for c in t):
        raise ValueError(f"invalid voxel index {p!r}")
    return t


@dataclass(frozen=True)
class ExtremePointSet:
    """The six extreme clicks, one min/max pair per axis."""

    x_min: tuple[int, int, int]
    x_max: tuple[int, int, int]
    y_min: tuple[int, int, int]
    y_max: tuple[int, int, int]
    z_min: tuple[int, int, int]
    z_max: tuple[int, int, int]

    def __post_init__(self):
        for key in POINT_KEYS:
            object.__setattr__(self, key, _as_index(getattr(self, key)))
        pts = np.array(self.points())
        for axis, name in enumerate("xyz"):
            lo = getattr(self, f"{name}_min")[axis]
            hi = getattr(self, f"{name}_max")[axis]
            if lo != pts[:, axis].min() or hi != pts[:, axis].max():
                raise ValueError(
                    f"inconsistent extreme points on axis {name}: "
                    f"{name}_min/{name}_max are not the extreme coordinates"
                )

    @classmethod
    def from_dict(cls, d: dict) -> "ExtremePointSet":
        if set(d) != set(POINT_KEYS):
            raise ValueError(f"extreme points need exactly the keys {POINT_KEYS}, got {sorted(d)}")
        return cls(**{k: d[k] for k in POINT_KEYS})

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in POINT_KEYS}

    def points(self) -> list[tuple[int, int, int]]:
        return [getattr(self, k) for k in POINT_KEYS]

    def pairs(self):
        """(axis name, start, end) for the three inter-extreme paths."""
        return [(a, getattr(self, f"{a}_min"), getattr(self, f"{a}_max")) for a in "xyz"]

    def check_inside(self, shape):
        for key in POINT_KEYS:
            if not in_bounds(getattr(self, key), shape):
                raise ValueError(f"extreme point {key}={getattr(self, key)} outside volume {tuple(shape)}")


@dataclass(frozen=True)
class VoxelBox:
    """Axis-aligned box with inclusive integer bounds."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        lo, hi = _as_index(self.lo), _as_index(self.hi)
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box lo {lo} exceeds hi {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b + 1) for a, b in zip(self.lo, self.hi))

    def contains(self, p) -> bool:
        return all(a <= c <= b for a, c, b in zip(self.lo, p, self.hi))

    def mask(self, shape) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[self.slices] = True
        return m


@dataclass(frozen=True)
class SupervisionMask:
    """Per-voxel label state: FG (1), BG (0) or UNLABELED (-1)."""

    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int8)
        if not np.isin(s, (UNLABELED, BG, FG)).all():
            raise ValueError("supervision states must be -1, 0 or 1")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def shape(self):
        return self.states.shape

    @property
    def annotated(self) -> np.ndarray:
        return self.states != UNLABELED

    @property
    def fg(self) -> np.ndarray:
        return self.states == FG

    @property
    def bg(self) -> np.ndarray:
        return self.states == BG


def tight_bbox(pts: ExtremePointSet) -> VoxelBox:
    a = np.array(pts.points())
    return VoxelBox(tuple(a.min(axis=0)), tuple(a.max(axis=0)))


def relax_bbox(box: VoxelBox, r: int, shape) -> VoxelBox:
    """Grow ``box`` by ``r`` voxels per side, clamped to the volume."""
    if r < 0:
        raise ValueError(f"margin must be >= 0, got {r}")
    lo = tuple(max(0, c - r) for c in box.lo)
    hi = tuple(min(n - 1, c + r) for c, n in zip(box.hi, shape))
    return VoxelBox(lo, hi)


def simulate_extreme_points(gt, seed=0) -> ExtremePointSet:
    """Extreme points read off a binary ground truth.

    Ties among voxels attaining an extreme coordinate are broken uniformly
    at random with ``seed``.
    """
    mask = np.asarray(gt.data if isinstance(gt, Volume) else gt) > 0.5
    coords = np.argwhere(mask)
    if len(coords) == 0:
        raise ValueError("empty ground truth")
    rng = np.random.default_rng(seed)
    picked = {}
    for axis, name in enumerate("xyz"):
        for suffix, value in (("min", coords[:, axis].min()), ("max", coords[:, axis].max())):
            cands = coords[coords[:, axis] == value]
            picked[f"{name}_{suffix}"] = tuple(int(c) for c in cands[rng.integers(len(cands))])
    return ExtremePointSet(**picked)


def initial_supervision(pts: ExtremePointSet, box_relax: VoxelBox, shape) -> SupervisionMask:
    """Extreme points as FG, everything outside the relaxed box as BG."""
    pts.check_inside(shape)
    states = np.full(shape, BG, dtype=np.int8)
    states[box_relax.slices] = UNLABELED
    for p in pts.points():
        states[p] = FG
    return SupervisionMask(states)
