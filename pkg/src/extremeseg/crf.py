"""Pairwise CRF relaxation used as an unsupervised regulariser.

    R(p) = 1/|Omega| * sum_{k,l} p_k W_kl (1 - p_l)
    W_kl = exp(-d(k,l)^2 / (2 sa^2) - (X_k - X_l)^2 / (2 sb^2))

Two evaluators: EXACT sums every ordered pair, the windowed one only pairs
whose Chebyshev index distance is at most ``window_radius``.  Both sum
ordered pairs, so W stays symmetric and the gradient is

    dR/dp_m = 1/|Omega| * (sum_l W_ml - 2 sum_l W_ml p_l).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .volume import Volume

EXACT = "exact"
# pair blocks materialised at once by the exact evaluator
_EXACT_BLOCK = 2048


@dataclass(frozen=True)
class RegConfig:
    sigma_alpha: float = 15.0
    sigma_beta: float = 0.05
    window_radius: int | str = EXACT
    include_self: bool = True
    sigma_alpha_units: str = "voxel"

    def __post_init__(self):
        if not (self.sigma_alpha > 0 and self.sigma_beta > 0):
            raise ValueError("sigma_alpha and sigma_beta must be > 0")
        if self.window_radius != EXACT:
            if not isinstance(self.window_radius, (int, np.integer)) or self.window_radius < 1:
                raise ValueError(f"window_radius must be an int >= 1 or 'exact', got {self.window_radius!r}")
        if self.sigma_alpha_units not in ("voxel", "mm"):
            raise ValueError(f"sigma_alpha_units must be 'voxel' or 'mm', got {self.sigma_alpha_units!r}")

    def spatial_scale(self, spacing) -> np.ndarray:
        """Per-axis length of one index step in sigma_alpha's units."""
        if self.sigma_alpha_units == "mm":
            return np.asarray(spacing, dtype=np.float64)
        return np.ones(3)


def kernel_weight(k, l, X: Volume, cfg: RegConfig) -> float:
    scale = cfg.spatial_scale(X.spacing)
    d2 = float(np.sum(((np.subtract(k, l)) * scale) ** 2))
    dx = float(X.data[tuple(k)]) - float(X.data[tuple(l)])
    return float(np.exp(-d2 / (2 * cfg.sigma_alpha ** 2) - dx * dx / (2 * cfg.sigma_beta ** 2)))


def _check_shapes(prob, X):
    if prob.shape != X.shape:
        raise ValueError(f"probability shape {prob.shape} does not match image shape {X.shape}")


class PairwiseKernel:
    """Kernel sums for a fixed image.

    Windowed weights are precomputed once per image so repeated evaluations
    during training only pay for the products with ``p``.
    """

    def __init__(self, X: Volume, cfg: RegConfig):
        self.cfg = cfg
        self.shape = X.shape
        self.n = X.size
        x = X.data.astype(np.float64)
        scale = cfg.spatial_scale(X.spacing)
        a = 1.0 / (2 * cfg.sigma_alpha ** 2)
        b = 1.0 / (2 * cfg.sigma_beta ** 2)
        if cfg.window_radius == EXACT:
            self._coords = (np.argwhere(np.ones(self.shape, dtype=bool)) * scale).astype(np.float64)
            self._x = x.ravel()
            self._a, self._b = a, b
            self._terms = None
        else:
            rad = int(cfg.window_radius)
            self._terms = []
            for off in itertools.product(range(-rad, rad + 1), repeat=3):
                if off == (0, 0, 0):
                    continue
                src, dst = _pair_slices(self.shape, off)
                if src is None:
                    continue
                d2 = float(np.sum((np.array(off) * scale) ** 2))
                w = np.exp(-a * d2 - b * (x[src] - x[dst]) ** 2)
                self._terms.append((src, dst, w))
        self.row_sums = self.apply(np.ones(self.shape))

    def apply(self, p: np.ndarray) -> np.ndarray:
        """(W p)_k = sum_l W_kl p_l."""
        p = np.asarray(p, dtype=np.float64)
        if self._terms is None:
            return self._apply_exact(p)
        out = p.copy() if self.cfg.include_self else np.zeros(self.shape)
        for src, dst, w in self._terms:
            out[src] += w * p[dst]
        return out

    def _apply_exact(self, p):
        flat = p.ravel()
        out = np.empty(self.n)
        for start in range(0, self.n, _EXACT_BLOCK):
            stop = min(start + _EXACT_BLOCK, self.n)
            c = self._coords[start:stop]
            d2 = ((c[:, None, :] - self._coords[None, :, :]) ** 2).sum(axis=2)
            dx = self._x[start:stop, None] - self._x[None, :]
            w = np.exp(-self._a * d2 - self._b * dx * dx)
            if not self.cfg.include_self:
                w[np.arange(stop - start), np.arange(start, stop)] = 0.0
            out[start:stop] = w @ flat
        return out.reshape(self.shape)

    def value_and_gradient(self, prob) -> tuple[float, np.ndarray]:
        p = np.asarray(prob, dtype=np.float64)
        if p.shape != self.shape:
            raise ValueError(f"probability shape {p.shape} does not match image shape {self.shape}")
        wp = self.apply(p)
        value = float(np.sum(p * (self.row_sums - wp))) / self.n
        grad = (self.row_sums - 2.0 * wp) / self.n
        return value, grad


def _pair_slices(shape, off):
    src, dst = [], []
    for n, o in zip(shape, off):
        if abs(o) >= n:
            return None, None
        if o >= 0:
            src.append(slice(0, n - o))
            dst.append(slice(o, n))
        else:
            src.append(slice(-o, n))
            dst.append(slice(0, n + o))
    return tuple(src), tuple(dst)


def _prob_array(prob):
    return (prob.data if isinstance(prob, Volume) else np.asarray(prob)).astype(np.float64)


def regularizer_value(prob, X: Volume, cfg: RegConfig) -> float:
    p = _prob_array(prob)
    _check_shapes(p, X)
    return PairwiseKernel(X, cfg).value_and_gradient(p)[0]


def regularizer_gradient(prob, X: Volume, cfg: RegConfig) -> Volume:
    p = _prob_array(prob)
    _check_shapes(p, X)
    return X.like(PairwiseKernel(X, cfg).value_and_gradient(p)[1])


def regularizer_gradient_array(prob, X: Volume, cfg: RegConfig) -> np.ndarray:
    """Float64 gradient, for callers that need more than storage precision."""
    p = _prob_array(prob)
    _check_shapes(p, X)
    return PairwiseKernel(X, cfg).value_and_gradient(p)[1]
