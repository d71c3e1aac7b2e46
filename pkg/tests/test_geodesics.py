import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from _oracles import box_voxels, brute_force_path_cost, scan_gammas
from extremeseg.annotations import ExtremePointSet, VoxelBox, simulate_extreme_points, tight_bbox
from extremeseg.geodesics import (GeodesicConfig, Metric, auto_gammas, edge_cost, inter_extreme_geodesics,
                                  neighbour_offsets, path_cost, shortest_path)
from extremeseg.phantoms import PhantomKind, PhantomSpec, generate_phantom
from extremeseg.volume import Volume, gradient_magnitude


def _setup(seed, shape=(5, 5, 5), spacing=(1.0, 1.0, 1.5)):
    rng = np.random.default_rng(seed)
    X = Volume(rng.random(shape), spacing)
    P = Volume(rng.random(shape), spacing)
    return rng, X, P, gradient_magnitude(X)


def test_offsets():
    assert len(neighbour_offsets(26)) == 26
    assert sorted(neighbour_offsets(6)) == sorted(
        [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)])


def test_config_validation():
    with pytest.raises(ValueError):
        GeodesicConfig(connectivity=18)
    with pytest.raises(ValueError):
        GeodesicConfig(gamma_e=-1.0)
    assert GeodesicConfig("gradient-euclidean").mode is Metric.GRADIENT_EUCLIDEAN


class TestAutoGammas:
    def test_single_voxel_box_disables_both(self):
        grad = Volume(np.zeros((4, 4, 4)))
        assert auto_gammas(grad, VoxelBox((1, 1, 1), (1, 1, 1)), (1, 1, 1)) == (0.0, 0.0)

    def test_farthest_corner(self):
        grad = Volume(np.zeros((4, 1, 1)))
        ge, gg = auto_gammas(grad, VoxelBox((0, 0, 0), (3, 0, 0)), (0, 0, 0))
        assert 1 / ge == 3.0 and gg == 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_scan(self, seed):
        rng, X, _, G = _setup(seed, (6, 5, 4), (0.8, 1.0, 2.5))
        lo = tuple(int(v) for v in rng.integers(0, 2, 3))
        hi = tuple(int(l + rng.integers(0, 3)) for l in lo)
        src = tuple(int(rng.integers(a, b + 1)) for a, b in zip(lo, hi))
        got = auto_gammas(G, VoxelBox(lo, hi), src)
        ref = scan_gammas(G.data, G.spacing, lo, hi, src)
        assert got == pytest.approx(ref, rel=1e-12)

    def test_source_outside_box(self):
        with pytest.raises(ValueError):
            auto_gammas(Volume(np.zeros((4, 4, 4))), VoxelBox((0, 0, 0), (1, 1, 1)), (3, 3, 3))


class TestEdgeCost:
    def test_constant_image_gradient_mode_is_free(self):
        X = Volume(np.full((3, 3, 3), 0.7))
        cfg = GeodesicConfig(Metric.GRADIENT)
        for off in neighbour_offsets(26):
            to = tuple(1 + o for o in off)
            assert edge_cost(cfg, (1, 1, 1), to, X, X, gammas=(1.0, 1.0)) == 0.0

    def test_constant_image_deep_with_certain_foreground(self):
        X = Volume(np.full((3, 3, 3), 0.2))
        prob = Volume(np.ones((3, 3, 3)))
        cost = edge_cost(GeodesicConfig(Metric.DEEP), (1, 1, 1), (1, 1, 2), X, X, prob, gammas=(0.0, 1.0))
        assert cost == 0.0

    def test_hand_value_euclidean_step(self):
        X = Volume(np.zeros((3, 3, 3)))
        cfg = GeodesicConfig(Metric.GRADIENT_EUCLIDEAN, gamma_e=0.5, gamma_g=1.0)
        assert edge_cost(cfg, (0, 0, 0), (1, 0, 0), X, X) == 0.5

    def test_hand_value_all_terms(self):
        data = np.zeros((2, 2, 2))
        data[1, 1, 0] = 0.375
        X = Volume(data, (1.0, 2.0, 1.0))
        prob = Volume(np.full((2, 2, 2), 0.25), X.spacing)
        cfg = GeodesicConfig(Metric.DEEP)
        got = edge_cost(cfg, (0, 0, 0), (1, 1, 0), X, X, prob, gammas=(0.5, 2.0))
        assert got == pytest.approx(0.5 * math.sqrt(5) + 2.0 * 0.375 + 0.75, rel=1e-12)

    def test_deep_needs_probability(self):
        X = Volume(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError, match="probability"):
            edge_cost(GeodesicConfig(Metric.DEEP), (0, 0, 0), (1, 0, 0), X, X)

    def test_non_adjacent_rejected(self):
        X = Volume(np.zeros((3, 3, 3)))
        with pytest.raises(ValueError):
            edge_cost(GeodesicConfig(Metric.GRADIENT), (0, 0, 0), (2, 0, 0), X, X)
        with pytest.raises(ValueError):
            edge_cost(GeodesicConfig(Metric.GRADIENT, connectivity=6), (0, 0, 0), (1, 1, 0), X, X)

    @pytest.mark.parametrize("seed", range(5))
    def test_nonnegative(self, seed):
        rng, X, P, G = _setup(seed)
        for mode in Metric:
            for off in neighbour_offsets(26):
                to = tuple(2 + o for o in off)
                assert edge_cost(GeodesicConfig(mode), (2, 2, 2), to, X, G, P, gammas=(0.3, 0.7)) >= 0


class TestShortestPath:
    def test_identity(self):
        X = Volume(np.zeros((3, 3, 3)))
        path = shortest_path(GeodesicConfig(Metric.GRADIENT), X, X, None, (1, 1, 1), (1, 1, 1),
                             VoxelBox((0, 0, 0), (2, 2, 2)))
        assert path.voxels == ((1, 1, 1),) and path.total_length == 0.0

    def test_uniform_image_straight_line(self):
        X = Volume(np.ones((8, 3, 3)), (1.5, 1.0, 1.0))
        box = VoxelBox((0, 0, 0), (7, 2, 2))
        path = shortest_path(GeodesicConfig(Metric.GRADIENT_EUCLIDEAN), X, gradient_magnitude(X), None,
                             (0, 1, 1), (7, 1, 1), box)
        ge = 1 / math.dist((0, 0, 0), (7 * 1.5, 1, 1))
        assert path.total_length == pytest.approx(ge * 7 * 1.5, rel=1e-12)

    @pytest.mark.parametrize("connectivity", [6, 26])
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_brute_force(self, seed, connectivity):
        rng, X, P, G = _setup(seed)
        lo = tuple(int(v) for v in rng.integers(0, 3, 3))
        hi = tuple(l + 2 for l in lo)
        vox = box_voxels(lo, hi)
        s, e = vox[rng.integers(27)], vox[rng.integers(27)]
        for mode in Metric:
            gam = scan_gammas(G.data, X.spacing, lo, hi, s)
            ref = brute_force_path_cost(mode.value, X.data, P.data, X.spacing, lo, hi, s, e, gam, connectivity)
            cfg = GeodesicConfig(mode, connectivity=connectivity)
            assert shortest_path(cfg, X, G, P, s, e, VoxelBox(lo, hi)).total_length == ref

    @pytest.mark.parametrize("seed", range(6))
    def test_path_invariants(self, seed):
        rng, X, P, G = _setup(seed, (7, 6, 5))
        box = VoxelBox((1, 0, 1), (6, 4, 3))
        vox = box_voxels(box.lo, box.hi)
        s, e = vox[rng.integers(len(vox))], vox[rng.integers(len(vox))]
        for mode in Metric:
            for conn in (6, 26):
                cfg = GeodesicConfig(mode, connectivity=conn)
                path = shortest_path(cfg, X, G, P, s, e, box)
                assert path.voxels[0] == s and path.voxels[-1] == e
                assert len(set(path.voxels)) == len(path.voxels)
                assert all(box.contains(v) for v in path.voxels)
                steps = np.abs(np.diff(path.as_array(), axis=0))
                assert np.all(steps.max(axis=1) == 1)
                if conn == 6:
                    assert np.all(steps.sum(axis=1) == 1)
                gam = scan_gammas(G.data, X.spacing, box.lo, box.hi, s)
                assert path_cost(cfg, path.voxels, X, G, P, gam) == pytest.approx(path.total_length, rel=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_reverse_symmetry_without_deep_term(self, seed):
        rng, X, _, G = _setup(seed, (6, 6, 6))
        box = VoxelBox((0, 0, 0), (5, 5, 5))
        s, e = tuple(rng.integers(0, 6, 3)), tuple(rng.integers(0, 6, 3))
        for mode in (Metric.GRADIENT, Metric.GRADIENT_EUCLIDEAN):
            # fixed gammas: the automatic ones depend on which end is the source
            cfg = GeodesicConfig(mode, gamma_e=0.2, gamma_g=0.9)
            ab = shortest_path(cfg, X, G, None, s, e, box).total_length
            ba = shortest_path(cfg, X, G, None, e, s, box).total_length
            assert ab == pytest.approx(ba, abs=1e-9)

    def test_endpoint_outside_box(self):
        X = Volume(np.zeros((4, 4, 4)))
        with pytest.raises(ValueError):
            shortest_path(GeodesicConfig(Metric.GRADIENT), X, X, None, (0, 0, 0), (3, 3, 3),
                          VoxelBox((0, 0, 0), (2, 2, 2)))

    def test_deterministic(self):
        _, X, P, G = _setup(3, (6, 6, 6))
        box = VoxelBox((0, 0, 0), (5, 5, 5))
        runs = [shortest_path(GeodesicConfig(Metric.DEEP), X, G, P, (0, 0, 0), (5, 5, 5), box) for _ in range(2)]
        assert runs[0] == runs[1]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), bump=st.floats(0.0, 1.0))
def test_background_penalty_never_shortens_a_path(seed, bump):
    rng, X, P, G = _setup(seed, (4, 4, 4))
    box = VoxelBox((0, 0, 0), (3, 3, 3))
    path = shortest_path(GeodesicConfig(Metric.GRADIENT_EUCLIDEAN), X, G, None, (0, 0, 0), (3, 3, 3), box)
    gam = auto_gammas(G, box, (0, 0, 0))
    plain = path_cost(GeodesicConfig(Metric.GRADIENT_EUCLIDEAN), path.voxels, X, G, None, gam)
    prob = Volume(np.clip(P.data * bump, 0, 1))
    deep = path_cost(GeodesicConfig(Metric.DEEP), path.voxels, X, G, prob, gam)
    assert deep >= plain


def test_single_voxel_object():
    X = Volume(np.zeros((5, 5, 5)))
    p = (2, 2, 2)
    pts = ExtremePointSet(p, p, p, p, p, p)
    geo = inter_extreme_geodesics(GeodesicConfig(Metric.GRADIENT), X, X, None, pts)
    assert all(path.voxels == (p,) for path in geo.paths)
    assert geo.mask(X.shape).sum() == 1


def test_paths_join_the_matching_extremes():
    gt = np.zeros((12, 12, 12), dtype=np.float32)
    gt[2:9, 3:10, 4:8] = 1
    X = Volume(ndimage.gaussian_filter(gt, 1.0))
    pts = simulate_extreme_points(Volume(gt), seed=1)
    geo = inter_extreme_geodesics(GeodesicConfig(Metric.GRADIENT_EUCLIDEAN), X, gradient_magnitude(X), None, pts)
    box = tight_bbox(pts)
    for (_, a, b), path in zip(pts.pairs(), geo.paths):
        assert path.voxels[0] == tuple(a) and path.voxels[-1] == tuple(b)
        assert all(box.contains(v) for v in path.voxels)


def _containment(kind, seed, mode):
    X, gt = generate_phantom(PhantomSpec(kind=kind, seed=seed))
    pts = simulate_extreme_points(gt, seed)
    prob = X.like(ndimage.gaussian_filter(gt.data.astype(np.float64), 1.0))
    geo = inter_extreme_geodesics(GeodesicConfig(mode), X, gradient_magnitude(X), prob, pts)
    mask = geo.mask(X.shape)
    return float((gt.data[mask] > 0.5).mean())


@pytest.mark.parametrize("seed", range(3))
def test_deep_paths_stay_inside_bent_tube(seed):
    deep = _containment(PhantomKind.BENT_TUBE, seed, Metric.DEEP)
    assert deep >= 0.95


def test_deep_beats_gradient_on_distractor():
    deep = _containment(PhantomKind.BLOB_WITH_DISTRACTOR, 306, Metric.DEEP)
    grad = _containment(PhantomKind.BLOB_WITH_DISTRACTOR, 306, Metric.GRADIENT)
    assert deep >= 0.95 and deep > grad
