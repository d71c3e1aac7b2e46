import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from extremeseg.volume import Volume, gradient_magnitude, normalize_intensity


def stencil_oracle(a, spacing):
    """Per-voxel re-evaluation of the central/one-sided difference stencil."""
    out = np.zeros(a.shape)
    for idx in np.ndindex(a.shape):
        sq = 0.0
        for axis in range(3):
            n, h, c = a.shape[axis], spacing[axis], idx[axis]
            lo, hi = list(idx), list(idx)
            if c == 0:
                hi[axis] = 1
                d = (a[tuple(hi)] - a[idx]) / h
            elif c == n - 1:
                lo[axis] = n - 2
                d = (a[idx] - a[tuple(lo)]) / h
            else:
                lo[axis], hi[axis] = c - 1, c + 1
                d = (a[tuple(hi)] - a[tuple(lo)]) / (2 * h)
            sq += d * d
        out[idx] = np.sqrt(sq)
    return out


def test_constant_volume_has_zero_gradient():
    g = gradient_magnitude(Volume(np.full((4, 4, 4), 5.0)))
    assert np.all(g.data == 0)


def test_ramp_has_unit_gradient_everywhere():
    i = np.arange(6, dtype=float)[:, None, None]
    vol = Volume(np.broadcast_to(i, (6, 5, 4)))
    np.testing.assert_allclose(gradient_magnitude(vol).data, 1.0)


def test_matches_stencil_oracle(rng):
    spacing = (1.0, 0.7, 2.0)
    vol = Volume(rng.random((5, 5, 5)), spacing)
    expected = stencil_oracle(vol.data.astype(np.float64), spacing)
    np.testing.assert_allclose(gradient_magnitude(vol).data, expected, rtol=1e-6)


def test_gradient_preserves_shape_and_spacing(rng):
    vol = Volume(rng.random((3, 4, 5)), (0.5, 1.0, 1.5))
    g = gradient_magnitude(vol)
    assert g.shape == vol.shape and g.spacing == vol.spacing


@pytest.mark.parametrize("shape", [(1, 4, 4), (4, 1, 4), (4, 4, 1)])
def test_degenerate_volume_rejected(shape):
    with pytest.raises(ValueError, match="volume too small for gradient"):
        gradient_magnitude(Volume(np.zeros(shape)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5).filter(lambda a: abs(a) > 1e-2), st.floats(-10, 10), st.integers(0, 2**32 - 1))
def test_gradient_affine_equivariance(a, b, seed):
    x = np.random.default_rng(seed).random((4, 5, 3))
    g1 = gradient_magnitude(Volume(a * x + b)).data.astype(np.float64)
    g0 = gradient_magnitude(Volume(x)).data.astype(np.float64)
    assert np.all(g1 >= 0)
    # float32 storage of a*x+b loses relative precision proportional to |b|/|a|
    tol = 1e-6 + 4e-7 * (abs(b) + abs(a)) / abs(a)
    np.testing.assert_allclose(g1, abs(a) * g0, rtol=tol, atol=tol * abs(a))


def test_normalize_endpoints():
    v = normalize_intensity(Volume(np.array([0.0, 10.0]).reshape(2, 1, 1)))
    assert v.data.ravel().tolist() == [0.0, 1.0]


def test_normalize_constant_is_half():
    assert np.all(normalize_intensity(Volume(np.full((3, 3, 3), 7.0))).data == 0.5)


def test_normalize_affine():
    v = normalize_intensity(Volume(np.array([2.0, 4.0, 6.0]).reshape(3, 1, 1)))
    assert v.data.ravel().tolist() == [0.0, 0.5, 1.0]


def test_normalize_idempotent(rng):
    v = normalize_intensity(Volume(rng.random((4, 4, 4)) * 3 - 1))
    np.testing.assert_allclose(normalize_intensity(v).data, v.data, atol=1e-7)


def test_volume_validation():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        Volume(np.array([np.nan]).reshape(1, 1, 1))
