"""Inter-extreme-point geodesics on the voxel graph of the tight box.

Edge length from voxel ``a`` to an adjacent voxel ``b``::

    gamma_e * d(a, b) + gamma_g * |X(b) - X(a)| + (1 - prob(a))

where the Euclidean term is used by the GRADIENT_EUCLIDEAN and DEEP metrics
and the background-probability term only by DEEP.  ``d`` is measured in mm.
"""

from __future__ import annotations

import enum
import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from .annotations import ExtremePointSet, VoxelBox, tight_bbox
from .volume import Volume


class Metric(str, enum.Enum):
    GRADIENT = "gradient"
    GRADIENT_EUCLIDEAN = "gradient-euclidean"
    DEEP = "deep"

    @property
    def uses_euclidean(self) -> bool:
        return self is not Metric.GRADIENT


@dataclass(frozen=True)
class GeodesicConfig:
    """Length metric settings.

    ``gamma_e``/``gamma_g`` left as None are set per path by
    :func:`auto_gammas` with the path's start point as source.
    """

    mode: Metric = Metric.DEEP
    gamma_e: float | None = None
    gamma_g: float | None = None
    connectivity: int = 26

    def __post_init__(self):
        object.__setattr__(self, "mode", Metric(self.mode))
        if self.connectivity not in (6, 26):
            raise ValueError(f"connectivity must be 6 or 26, got {self.connectivity}")
        for name in ("gamma_e", "gamma_g"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")


@dataclass(frozen=True)
class VoxelPath:
    voxels: tuple[tuple[int, int, int], ...]
    total_length: float

    def __len__(self):
        return len(self.voxels)

    def as_array(self) -> np.ndarray:
        return np.array(self.voxels, dtype=np.int64).reshape(-1, 3)


@dataclass(frozen=True)
class GeodesicSet:
    path_x: VoxelPath
    path_y: VoxelPath
    path_z: VoxelPath

    @property
    def paths(self) -> tuple[VoxelPath, VoxelPath, VoxelPath]:
        return self.path_x, self.path_y, self.path_z

    def voxels(self) -> set[tuple[int, int, int]]:
        return set().union(*(p.voxels for p in self.paths))

    def mask(self, shape) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        for p in self.paths:
            a = p.as_array()
            m[a[:, 0], a[:, 1], a[:, 2]] = True
        return m


def neighbour_offsets(connectivity: int) -> list[tuple[int, int, int]]:
    offs = [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]
    if connectivity == 6:
        offs = [o for o in offs if sum(map(abs, o)) == 1]
    return offs


def _step_length(offset, spacing) -> float:
    return float(np.sqrt(sum((o * s) ** 2 for o, s in zip(offset, spacing))))


def auto_gammas(grad: Volume, box: VoxelBox, source) -> tuple[float, float]:
    """Scale the Euclidean and gradient terms into [0, 1] over ``box``.

    A zero maximum disables its term (gamma 0).
    """
    if not box.contains(source):
        raise ValueError(f"source {tuple(source)} not inside box {box}")
    # distance is convex, so its max over the box sits on a corner
    corners = itertools.product(*zip(box.lo, box.hi))
    max_d = max(_step_length(np.subtract(c, source), grad.spacing) for c in corners)
    max_g = float(grad.data[box.slices].astype(np.float64).max())
    gamma_e = 1.0 / max_d if max_d > 0 else 0.0
    gamma_g = 1.0 / max_g if max_g > 0 else 0.0
    return gamma_e, gamma_g


def _check_prob(cfg: GeodesicConfig, prob):
    if cfg.mode is Metric.DEEP and prob is None:
        raise ValueError("DEEP geodesic metric requires a probability volume")


def edge_cost(cfg: GeodesicConfig, frm, to, X: Volume, grad: Volume, prob: Volume | None = None,
              gammas: tuple[float, float] | None = None) -> float:
    """Length of the single step ``frm -> to``.

    ``gammas`` overrides the config's gammas; unset gammas count as 0.
    ``grad`` is only consulted through the gamma normalisation.
    """
    _check_prob(cfg, prob)
    offset = np.subtract(to, frm)
    if np.abs(offset).max() != 1 or (cfg.connectivity == 6 and np.abs(offset).sum() != 1):
        raise ValueError(f"voxels {tuple(frm)} and {tuple(to)} are not adjacent")
    ge, gg = gammas if gammas is not None else (cfg.gamma_e or 0.0, cfg.gamma_g or 0.0)
    frm, to = tuple(frm), tuple(to)
    cost = gg * abs(float(X.data[to]) - float(X.data[frm]))
    if cfg.mode.uses_euclidean:
        cost += ge * _step_length(offset, X.spacing)
    if cfg.mode is Metric.DEEP:
        cost += 1.0 - min(max(float(prob.data[frm]), 0.0), 1.0)
    return cost


def edge_cost_arrays(cfg: GeodesicConfig, X: Volume, prob: Volume | None, box: VoxelBox,
                     gammas: tuple[float, float]):
    """Vectorised step lengths inside ``box``.

    Returns ``offsets`` and, per offset, a cost array over the box voxels for
    the step leaving each voxel (``inf`` where the step leaves the box).
    """
    _check_prob(cfg, prob)
    ge, gg = gammas
    x = X.data[box.slices].astype(np.float64)
    if cfg.mode is Metric.DEEP:
        tail = 1.0 - np.clip(prob.data[box.slices].astype(np.float64), 0.0, 1.0)
    offsets = neighbour_offsets(cfg.connectivity)
    costs = []
    for off in offsets:
        c = np.full(x.shape, np.inf)
        src, dst = _shift_slices(x.shape, off)
        step = gg * np.abs(x[dst] - x[src])
        if cfg.mode.uses_euclidean:
            step = step + ge * _step_length(off, X.spacing)
        if cfg.mode is Metric.DEEP:
            step = step + tail[src]
        c[src] = step
        costs.append(c)
    return offsets, costs


def _shift_slices(shape, off):
    """Slices selecting voxels ``a`` and ``a + off`` where both are in range."""
    src, dst = [], []
    for n, o in zip(shape, off):
        if o >= 0:
            src.append(slice(0, n - o))
            dst.append(slice(o, n))
        else:
            src.append(slice(-o, n))
            dst.append(slice(0, n + o))
    return tuple(src), tuple(dst)


def shortest_path(cfg: GeodesicConfig, X: Volume, grad: Volume, prob: Volume | None, start, end,
                  box: VoxelBox, gammas: tuple[float, float] | None = None) -> VoxelPath:
    """Dijkstra between ``start`` and ``end`` restricted to ``box``.

    Heap entries are ordered by (distance, voxel index) and a distance only
    improves on a strict decrease, so the result is reproducible.
    """
    start, end = tuple(int(c) for c in start), tuple(int(c) for c in end)
    for p in (start, end):
        if not box.contains(p):
            raise ValueError(f"endpoint {p} not inside box {box}")
    _check_prob(cfg, prob)
    if start == end:
        return VoxelPath((start,), 0.0)
    if gammas is None:
        auto = auto_gammas(grad, box, start)
        gammas = (auto[0] if cfg.gamma_e is None else cfg.gamma_e,
                  auto[1] if cfg.gamma_g is None else cfg.gamma_g)

    offsets, costs = edge_cost_arrays(cfg, X, prob, box, gammas)
    bshape = box.shape
    n = bshape[0] * bshape[1] * bshape[2]
    strides = (bshape[1] * bshape[2], bshape[2], 1)
    deltas = [o[0] * strides[0] + o[1] * strides[1] + o[2] * strides[2] for o in offsets]
    # flat per-voxel rows of (neighbour, cost) for the inner loop
    cost_cols = np.stack([c.ravel() for c in costs], axis=1)
    finite = np.isfinite(cost_cols)
    nbr_cols = np.arange(n)[:, None] + np.array(deltas)[None, :]
    rows = [list(zip(nbr_cols[v][finite[v]].tolist(), cost_cols[v][finite[v]].tolist()))
            for v in range(n)]

    def flat(p):
        return sum((c - lo) * s for c, lo, s in zip(p, box.lo, strides))

    s, t = flat(start), flat(end)
    dist = [np.inf] * n
    parent = [-1] * n
    done = [False] * n
    dist[s] = 0.0
    heap = [(0.0, s)]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        if v == t:
            break
        for u, c in rows[v]:
            nd = d + c
            if nd < dist[u]:
                dist[u] = nd
                parent[u] = v
                heapq.heappush(heap, (nd, u))

    order = []
    v = t
    while v != -1:
        order.append(v)
        v = parent[v]
    order.reverse()
    voxels = []
    for v in order:
        i, rem = divmod(v, strides[0])
        j, k = divmod(rem, strides[1])
        voxels.append((i + box.lo[0], j + box.lo[1], k + box.lo[2]))
    return VoxelPath(tuple(voxels), float(dist[t]))


def path_cost(cfg: GeodesicConfig, voxels, X: Volume, grad: Volume, prob: Volume | None,
              gammas: tuple[float, float]) -> float:
    """Total length of an explicit voxel sequence."""
    return float(sum(edge_cost(cfg, a, b, X, grad, prob, gammas)
                     for a, b in zip(voxels[:-1], voxels[1:])))


def inter_extreme_geodesics(cfg: GeodesicConfig, X: Volume, grad: Volume, prob: Volume | None,
                            pts: ExtremePointSet) -> GeodesicSet:
    """The three min-to-max geodesics inside the tight box."""
    pts.check_inside(X.shape)
    box = tight_bbox(pts)
    paths = [shortest_path(cfg, X, grad, prob, a, b, box) for _, a, b in pts.pairs()]
    return GeodesicSet(*paths)
