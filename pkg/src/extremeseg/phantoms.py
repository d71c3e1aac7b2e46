"""Seeded synthetic phantoms with path-connected foreground objects."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .annotations import simulate_extreme_points
from .volume import Volume

MAX_ATTEMPTS = 10
FG_FRACTION = (0.01, 0.20)
_STRUCT26 = np.ones((3, 3, 3), dtype=bool)


class PhantomKind(str, enum.Enum):
    BLOB = "blob"
    BENT_TUBE = "bent_tube"
    BLOB_WITH_DISTRACTOR = "blob_with_distractor"


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (48, 48, 24)
    spacing: tuple[float, float, float] = (1.0, 1.0, 2.0)
    kind: PhantomKind = PhantomKind.BLOB_WITH_DISTRACTOR
    fg_intensity: float = 1.0
    bg_intensity: float = 0.0
    noise_sd: float = 0.01
    distractor_contrast: float = 0.6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PhantomKind(self.kind))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if self.fg_intensity == self.bg_intensity:
            raise ValueError("fg_intensity must differ from bg_intensity")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if min(self.shape) < 8:
            raise ValueError(f"phantom shape too small: {self.shape}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["shape"], d["spacing"] = list(self.shape), list(self.spacing)
        return d


def _rng(seed: int, stream: int) -> np.random.Generator:
    # Philox is counter-based, so streams are reproducible across platforms
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def _physical_grid(shape, spacing):
    return np.meshgrid(*[np.arange(n) * s for n, s in zip(shape, spacing)], indexing="ij")


def _extent(shape, spacing):
    return np.array(shape) * np.array(spacing)


def _blob(shape, spacing, rng, radius_range=(8.0, 11.0)):
    """Ellipsoid with a low-order surface wobble, centred away from the faces."""
    ext = _extent(shape, spacing)
    radii = rng.uniform(*radius_range, size=3) * min(1.0, ext.min() / 40.0)
    radii = np.minimum(radii, ext / 2 - 2 * np.array(spacing) - 1)
    centre = np.array([rng.uniform(r + 2 * s, e - r - 2 * s) for r, e, s in zip(radii, ext, spacing)])
    g = _physical_grid(shape, spacing)
    rel = [(gi - c) / r for gi, c, r in zip(g, centre, radii)]
    rho = np.sqrt(sum(x * x for x in rel))
    theta = np.arctan2(rel[1], rel[0])
    phi = np.arctan2(rel[2], np.hypot(rel[0], rel[1]))
    amp = rng.uniform(0.0, 0.12, size=2)
    ph = rng.uniform(0, 2 * np.pi, size=2)
    wobble = 1 + amp[0] * np.cos(2 * theta + ph[0]) + amp[1] * np.cos(3 * phi + ph[1])
    return rho <= wobble, centre, radii


def _bent_tube(shape, spacing, rng):
    """Tube of constant radius along a quadratic Bezier centreline."""
    ext = _extent(shape, spacing)
    scale = min(1.0, ext.min() / 40.0)
    margin = 6.0 * scale
    p0 = np.array([margin, rng.uniform(margin, ext[1] - margin), rng.uniform(0.3, 0.7) * ext[2]])
    p2 = np.array([ext[0] - margin, rng.uniform(margin, ext[1] - margin), rng.uniform(0.3, 0.7) * ext[2]])
    p1 = (p0 + p2) / 2 + np.array([0.0, rng.choice([-1, 1]) * scale * rng.uniform(10, 16), 0.0])
    p1[1] = np.clip(p1[1], margin, ext[1] - margin)
    radius = scale * rng.uniform(3.0, 4.5)
    t = np.linspace(0, 1, 200)[:, None]
    curve = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2
    g = np.stack(_physical_grid(shape, spacing), axis=-1).reshape(-1, 3)
    dist, _ = cKDTree(curve).query(g)
    return (dist <= radius).reshape(shape)


def _kidney_with_corridor(shape, spacing, rng):
    """Curved blob (a thick arc in the x-y plane) plus distractor structures.

    A pad of distractor intensity lines the deep part of the concavity,
    touching the inner wall, and a lane runs from the arc centre out through
    the opening to the volume face, so part of it lies outside any box
    around the object.  Chords between the arc's extreme points cross the
    pad or the open mouth rather than the object.
    """
    ext = _extent(shape, spacing)
    # sizes are tuned for a 48 mm field of view and shrink with smaller ones
    scale = min(1.0, ext[0] / 48.0, ext[1] / 48.0, ext[2] / 24.0)
    arc_r = scale * rng.uniform(11.0, 14.0)
    tube_r = scale * rng.uniform(4.0, 5.0)
    half_span = np.deg2rad(rng.uniform(105.0, 125.0))
    opening = rng.choice([-1.0, 1.0])
    lo = arc_r + tube_r + 3.0 * scale
    centre = np.array([
        rng.uniform(lo, max(lo, ext[0] - lo)),
        ext[1] / 2 + scale * rng.uniform(-3.0, 3.0),
        ext[2] / 2 + scale * rng.uniform(-4.0, 4.0),
    ])
    g = _physical_grid(shape, spacing)
    dx, dy, dz = g[0] - centre[0], -opening * (g[1] - centre[1]), g[2] - centre[2]
    # angle measured from the closed side of the arc
    ang = np.arctan2(dx, dy)
    rad = np.hypot(dx, dy)
    # radius tapers towards the arc ends
    local_r = tube_r * (1.0 - 0.25 * (np.abs(ang) / half_span) ** 2)
    on_arc = np.abs(ang) <= half_span
    d_tube = np.where(on_arc, np.hypot(rad - arc_r, dz), np.inf)
    # rounded caps at both ends
    for s in (-1.0, 1.0):
        end = np.array([np.sin(s * half_span), np.cos(s * half_span)]) * arc_r
        cap = np.sqrt((dx - end[0]) ** 2 + (dy - end[1]) ** 2 + dz ** 2)
        d_tube = np.minimum(d_tube, cap)
    gt = d_tube <= np.where(on_arc, local_r, 0.75 * tube_r)
    slab = np.abs(dz) <= 0.8 * tube_r
    pad = (rad <= arc_r) & (dy >= 0.2 * arc_r) & slab
    lane = (dy <= 0) & (np.abs(dx) <= 0.3 * arc_r) & slab
    corridor = (pad | lane) & ~gt
    return gt, corridor


def _single_component(mask: np.ndarray) -> bool:
    _, n = ndimage.label(mask, structure=_STRUCT26)
    return n == 1


def box_smooth(a: np.ndarray, radius: int = 1) -> np.ndarray:
    return ndimage.uniform_filter(a, size=2 * radius + 1, mode="nearest")


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, Volume]:
    """Image and binary ground truth for ``spec``.

    Up to ten geometry draws are tried until the foreground is a single
    26-connected component covering 1-20% of the volume.
    """
    n_vox = float(np.prod(spec.shape))
    for attempt in range(MAX_ATTEMPTS):
        rng = _rng(spec.seed, attempt)
        corridor = None
        if spec.kind is PhantomKind.BENT_TUBE:
            gt = _bent_tube(spec.shape, spec.spacing, rng)
        elif spec.kind is PhantomKind.BLOB_WITH_DISTRACTOR:
            gt, corridor = _kidney_with_corridor(spec.shape, spec.spacing, rng)
        else:
            gt, _, _ = _blob(spec.shape, spec.spacing, rng)
        frac = gt.sum() / n_vox
        if FG_FRACTION[0] <= frac <= FG_FRACTION[1] and _single_component(gt):
            break
    else:
        raise RuntimeError(f"could not generate a valid {spec.kind.value} phantom for seed {spec.seed}")

    contrast = spec.fg_intensity - spec.bg_intensity
    img = np.full(spec.shape, spec.bg_intensity, dtype=np.float64)
    if corridor is not None:
        img[corridor] = spec.bg_intensity + spec.distractor_contrast * contrast
    img[gt] = spec.fg_intensity
    img = box_smooth(img, 1)
    if spec.noise_sd > 0:
        img = img + _rng(spec.seed, 1000 + attempt).normal(0.0, spec.noise_sd, size=spec.shape)
    return Volume(img, spec.spacing), Volume(gt.astype(np.float32), spec.spacing)


def generate_dataset(out_dir, n_train: int, n_val: int, n_test: int, base_spec: PhantomSpec,
                     seed: int = 0) -> dict:
    """Write cases and ``manifest.json`` under ``out_dir``; returns the manifest."""
    from .io import write_points, write_volume

    for name, n in (("n_train", n_train), ("n_val", n_val), ("n_test", n_test)):
        if n < 1:
            raise ValueError(f"{name} must be >= 1, got {n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(n_train + n_val + n_test)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    cases = []
    for idx, (split, case_seed) in enumerate(zip(splits, seeds.tolist())):
        case_id = f"case{idx:03d}"
        spec = replace(base_spec, seed=int(case_seed))
        X, gt = generate_phantom(spec)
        pts = simulate_extreme_points(gt, seed=int(case_seed))
        paths = {"image": f"{case_id}_image.json", "gt": f"{case_id}_gt.json",
                 "points": f"{case_id}_points.json"}
        write_volume(out / paths["image"], X)
        write_volume(out / paths["gt"], gt)
        write_points(out / paths["points"], pts)
        cases.append({"case_id": case_id, "split": split, "seed": int(case_seed), **paths})
    manifest = {"seed": seed, "spec": base_spec.to_dict(), "cases": cases}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()


def load_dataset(root):
    """Yield ``(case, X, gt, pts)`` for every case of a generated dataset."""
    from .io import read_points, read_volume

    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    for case in manifest["cases"]:
        yield (case, read_volume(root / case["image"]), read_volume(root / case["gt"]),
               read_points(root / case["points"]))
