"""Parity between the compiled kernels and the numpy fallback, plus edge
semantics both must share."""

import numpy as np
import pytest

from craniotk.kernels import BACKEND, _fallback

try:
    from craniotk.kernels import _native
    HAVE_NATIVE = True
except ImportError:
    HAVE_NATIVE = False

needs_native = pytest.mark.skipif(not HAVE_NATIVE,
                                  reason="native kernels not built")


def _random_affine(rng):
    ang = rng.uniform(-0.4, 0.4, 3)
    ca, sa = np.cos(ang[2]), np.sin(ang[2])
    rot = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1.0]])
    m = np.zeros((3, 4))
    m[:, :3] = rot
    m[:, 3] = rng.uniform(-4, 4, 3)
    return m


@needs_native
class TestParity:
    def test_nearest_parity(self):
        rng = np.random.default_rng(0)
        vol = (rng.random((17, 13, 11)) < 0.5).astype(np.uint8)
        for _ in range(5):
            m = _random_affine(rng)
            a = _native.affine_sample_nearest(vol, m, (15, 14, 9))
            b = _fallback.affine_sample_nearest(vol, m, (15, 14, 9))
            assert np.array_equal(a, b)

    def test_trilinear_parity(self):
        rng = np.random.default_rng(1)
        vol = rng.random((12, 15, 10)).astype(np.float32)
        for _ in range(5):
            m = _random_affine(rng)
            a = _native.affine_sample_trilinear(vol, m, (13, 11, 12), 0.25)
            b = _fallback.affine_sample_trilinear(vol, m, (13, 11, 12), 0.25)
            assert np.abs(a - b).max() < 1e-6

    def test_points_parity(self):
        rng = np.random.default_rng(2)
        vol = rng.random((9, 9, 9)).astype(np.float32)
        pts = rng.uniform(-2, 10, (500, 3))
        a = _native.sample_points_trilinear(vol, pts, 0.5)
        b = _fallback.sample_points_trilinear(vol, pts, 0.5)
        assert np.abs(a - b).max() < 1e-12

    def test_readonly_input_accepted(self):
        vol = np.zeros((4, 4, 4), dtype=np.uint8)
        vol.setflags(write=False)
        m = np.hstack([np.eye(3), np.zeros((3, 1))])
        _native.affine_sample_nearest(vol, m, (4, 4, 4))


@pytest.mark.parametrize("impl", ["fallback", "native"])
class TestSemantics:
    def _get(self, impl):
        if impl == "native":
            if not HAVE_NATIVE:
                pytest.skip("native kernels not built")
            return _native
        return _fallback

    def test_identity_exact(self, impl):
        k = self._get(impl)
        rng = np.random.default_rng(3)
        vol = (rng.random((8, 9, 10)) < 0.4).astype(np.uint8)
        ident = np.hstack([np.eye(3), np.zeros((3, 1))])
        assert np.array_equal(
            k.affine_sample_nearest(vol, ident, vol.shape), vol)
        volf = vol.astype(np.float32)
        out = k.affine_sample_trilinear(volf, ident, vol.shape, 0.0)
        assert np.array_equal(out, volf)

    def test_out_of_field_is_fill(self, impl):
        k = self._get(impl)
        vol = np.ones((4, 4, 4), dtype=np.float32)
        m = np.hstack([np.eye(3), np.full((3, 1), 100.0)])
        out = k.affine_sample_trilinear(vol, m, (3, 3, 3), -7.0)
        assert (out == -7.0).all()

    def test_round_half_up(self, impl):
        k = self._get(impl)
        vol = np.arange(4, dtype=np.uint8).reshape(4, 1, 1)
        m = np.hstack([np.eye(3), np.array([[0.5], [0.0], [0.0]])])
        out = k.affine_sample_nearest(vol, m, (3, 1, 1))
        # x = i + 0.5 rounds up to i + 1
        assert out.ravel().tolist() == [1, 2, 3]

    def test_trilinear_interpolates(self, impl):
        k = self._get(impl)
        vol = np.zeros((3, 1, 1), dtype=np.float32)
        vol[1] = 1.0
        pts = np.array([[0.5, 0.0, 0.0], [1.0, 0.0, 0.0], [1.75, 0.0, 0.0]])
        out = k.sample_points_trilinear(vol, pts, 0.0)
        assert out == pytest.approx([0.5, 1.0, 0.25])

    def test_edge_of_hull_valid(self, impl):
        k = self._get(impl)
        vol = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
        pts = np.array([[1.0, 1.0, 1.0], [1.0 + 1e-9, 1.0, 1.0]])
        out = k.sample_points_trilinear(vol, pts, -1.0)
        assert out[0] == pytest.approx(7.0)
        assert out[1] == -1.0


def test_backend_reported():
    assert BACKEND in ("native", "numpy")
