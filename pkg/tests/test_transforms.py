import numpy as np
import pytest

from craniotk.transforms import (COMMON_DIMS, COMMON_SPACING, RigidTransform,
                                 common_grid, euler_matrix,
                                 transform_discrepancy)


def test_identity_roundtrip():
    t = RigidTransform.identity()
    assert t.approx_eq(t.inverse())
    assert np.allclose(t.apply([(1.0, 2.0, 3.0)]), [(1.0, 2.0, 3.0)])


def test_inverse_composition():
    t = RigidTransform.from_euler(rx=0.3, ry=-0.2, rz=0.9,
                                  translation=(5, -7, 2))
    ident = t.compose(t.inverse())
    assert np.max(np.abs(ident.matrix - np.eye(4))) < 1e-6


def test_double_inverse_exact():
    t = RigidTransform.from_euler(rx=0.11, ry=0.5, rz=-1.2,
                                  translation=(3.5, 0.1, -9))
    assert np.max(np.abs(t.inverse().inverse().matrix - t.matrix)) < 1e-9


def test_euler_convention_zyx():
    # intrinsic z-y-x: matrix is Rz @ Ry @ Rx
    rz, ry, rx = 0.7, -0.4, 0.2
    m = euler_matrix(rx, ry, rz)
    cz, sz = np.cos(rz), np.sin(rz)
    cy, sy = np.cos(ry), np.sin(ry)
    cx, sx = np.cos(rx), np.sin(rx)
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    assert np.allclose(m, mz @ my @ mx)


def test_rotation_about_center():
    c = (10.0, -4.0, 2.0)
    t = RigidTransform.from_euler(rz=np.pi / 2, center=c)
    assert np.allclose(t.apply([c]), [c])


def test_rejects_non_rigid():
    m = np.eye(4)
    m[0, 0] = 2.0
    with pytest.raises(ValueError):
        RigidTransform(m)
    m = np.eye(4)
    m[0, 0] = -1.0  # reflection
    with pytest.raises(ValueError):
        RigidTransform(m)
    m = np.eye(4)
    m[3, 0] = 0.5
    with pytest.raises(ValueError):
        RigidTransform(m)


def test_rotation_angle():
    t = RigidTransform.from_euler(rz=np.radians(30))
    assert t.rotation_angle_deg() == pytest.approx(30.0, abs=1e-9)


def test_discrepancy_measures_at_point():
    a = RigidTransform.from_euler(rz=np.radians(10), translation=(2, 0, 0))
    deg, mm = transform_discrepancy(a, a)
    assert deg == pytest.approx(0.0, abs=1e-9)
    assert mm == pytest.approx(0.0, abs=1e-9)
    b = RigidTransform.translation_only((1.0, 0, 0))
    deg, mm = transform_discrepancy(a.compose(b), a, at_point=(0, 0, 0))
    assert mm == pytest.approx(1.0, abs=1e-9)


def test_common_grid_defaults():
    g = common_grid()
    assert g.dims == COMMON_DIMS == (304, 304, 224)
    assert g.spacing == pytest.approx(COMMON_SPACING, abs=1e-7)
    assert np.allclose(g.center_world, (0, 0, 0), atol=1e-4)


def test_common_grid_override():
    g = common_grid(dims=(64, 64, 48), spacing=(2, 2, 2))
    assert g.dims == (64, 64, 48)
