"""Evaluation metrics and the paired signed-rank test."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .volume import Volume

REPORT_COLUMNS = ("case_id", "dice", "hd95", "precision")


def _binary(m) -> np.ndarray:
    return np.asarray(m.data if isinstance(m, Volume) else m) > 0.5


def _pair(pred, gt):
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs ground truth {g.shape}")
    return p, g


def dice(pred, gt) -> float:
    p, g = _pair(pred, gt)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 100.0
    return 100.0 * 2 * int(np.sum(p & g)) / total


def precision(pred, gt) -> float:
    p, g = _pair(pred, gt)
    n_pred = int(p.sum())
    if n_pred == 0:
        return 100.0 if not g.any() else 0.0
    return 100.0 * int(np.sum(p & g)) / n_pred


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a 6-neighbour outside the foreground.

    Voxels on the volume faces count as boundary.
    """
    eroded = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(3, 1),
                                    border_value=0)
    return mask & ~eroded


def _directed_distances(src: np.ndarray, dst: np.ndarray, spacing) -> np.ndarray:
    s = np.argwhere(src) * np.asarray(spacing, dtype=np.float64)
    d = np.argwhere(dst) * np.asarray(spacing, dtype=np.float64)
    dist, _ = cKDTree(d).query(s)
    return dist


def hd95(pred, gt, spacing=None) -> float:
    """Max of the two directed 95th-percentile boundary distances, in mm."""
    p, g = _pair(pred, gt)
    if spacing is None:
        spacing = pred.spacing if isinstance(pred, Volume) else (1.0, 1.0, 1.0)
    if not p.any() or not g.any():
        raise ValueError("undefined HD95: empty mask")
    bp, bg = boundary(p), boundary(g)
    return max(percentile_linear(_directed_distances(bp, bg, spacing), 95),
               percentile_linear(_directed_distances(bg, bp, spacing), 95))


def percentile_linear(values, q: float) -> float:
    """``q``-th percentile interpolating between the two nearest sorted values."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    pos = q / 100.0 * (len(v) - 1)
    k = int(math.floor(pos))
    if k + 1 >= len(v):
        return float(v[k])
    return float(v[k] + (pos - k) * (v[k + 1] - v[k]))


def hausdorff(pred, gt, spacing=(1.0, 1.0, 1.0)) -> float:
    p, g = _pair(pred, gt)
    if not p.any() or not g.any():
        raise ValueError("undefined Hausdorff distance: empty mask")
    bp, bg = boundary(p), boundary(g)
    return float(max(_directed_distances(bp, bg, spacing).max(),
                     _directed_distances(bg, bp, spacing).max()))


EXACT_MAX_N = 25


def wilcoxon_signed_rank(a, b, method: str = "auto") -> float:
    """Two-sided p-value of the paired signed-rank test.

    Zero differences are dropped.  ``method="normal"`` uses the normal
    approximation with tie and continuity corrections and needs at least 6
    non-zero differences; ``"exact"`` counts the null distribution of the
    statistic over all sign assignments (ties keep their average ranks).
    ``"auto"`` is exact up to ``EXACT_MAX_N`` differences, normal above.
    """
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1D and of equal length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 1.0
    ranks = _average_ranks(np.abs(d))
    if method == "exact" or (method == "auto" and n <= EXACT_MAX_N):
        return _exact_p(ranks, d > 0)
    if n < 6:
        raise ValueError(f"need at least 6 non-zero paired differences, got {n}")
    w_plus = ranks[d > 0].sum()
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts ** 3 - counts) / 48.0
    if var <= 0:
        return 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, math.erfc(z / math.sqrt(2))))


def _exact_p(ranks: np.ndarray, positive: np.ndarray) -> float:
    # average ranks are multiples of 1/2, so doubled ranks are integers
    r2 = np.rint(2 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in r2:
        counts[r:] = counts[r:] + counts[:-r]
    obs = int(r2[positive].sum())
    w = np.arange(total + 1)
    extreme = np.abs(2 * w - total) >= abs(2 * obs - total)
    return float(min(1.0, counts[extreme].sum() / counts.sum()))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, case_id: str, pred, gt, spacing):
        row = {"case_id": case_id, "dice": dice(pred, gt), "precision": precision(pred, gt)}
        p, g = _pair(pred, gt)
        row["hd95"] = hd95(p, g, spacing) if p.any() and g.any() else float("nan")
        self.rows.append({k: row[k] for k in REPORT_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def summary(self) -> dict:
        out = {"n_cases": len(self.rows)}
        for name in REPORT_COLUMNS[1:]:
            v = self.column(name)
            v = v[np.isfinite(v)]
            if len(v) == 0:
                out[name] = {"mean": None, "variance": None, "sd": None, "n": 0}
                continue
            out[name] = {"mean": float(v.mean()), "variance": float(v.var()),
                         "sd": float(v.std()), "n": int(len(v))}
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r["case_id"]] + [repr(float(r[k])) for k in REPORT_COLUMNS[1:]])
        return buf.getvalue()

    def to_json(self, extra: dict | None = None) -> str:
        doc = {"summary": self.summary(), "cases": self.rows}
        if extra:
            doc.update(extra)
        return json.dumps(_finite_or_none(doc), indent=2) + "\n"


def _finite_or_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_or_none(v) for v in obj]
    return obj
