import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmreflect.vectormath import (ContractError, DegenerateGeometryError, Plane, angle_between, angles_to_normal,
                                  bisector_normal, bisector_normals, mirror_point, normal_to_angles, normalize,
                                  reflect_direction, vec3)

coord = st.floats(-20, 20, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)


def unit(v):
    return v / np.linalg.norm(v)


def test_reflect_off_horizontal_plane():
    d = unit(np.array([1.0, 0.0, -1.0]))
    np.testing.assert_allclose(reflect_direction(d, [0, 0, 1]), unit(np.array([1.0, 0.0, 1.0])), atol=1e-15)


def test_reflect_requires_unit_vectors():
    with pytest.raises(ContractError):
        reflect_direction([1, 1, 0], [0, 0, 1])
    with pytest.raises(ContractError):
        reflect_direction([1, 0, 0], [0, 0, 2])


def test_bisector_normal_symmetric_case():
    n = bisector_normal([0, 0, 0], [1, 0, 1], [-1, 0, 1])
    np.testing.assert_allclose(n, [0, 0, 1], atol=1e-15)


def test_bisector_normal_is_normalized():
    # The raw half-sum here has length cos(45 deg); the result must be unit.
    n = bisector_normal([0, 0, 0], [1, 0, 0], [0, 1, 0])
    assert abs(np.linalg.norm(n) - 1.0) < 1e-15
    np.testing.assert_allclose(n, unit(np.array([1.0, 1.0, 0.0])))


def test_bisector_degenerate_cases():
    with pytest.raises(DegenerateGeometryError):
        bisector_normal([0, 0, 0], [0, 0, 0], [1, 0, 0])
    with pytest.raises(DegenerateGeometryError):
        bisector_normal([0, 0, 0], [1, 0, 0], [-2, 0, 0])


def test_normal_angles_round_trip_examples():
    assert normal_to_angles([0, 0, 1]) == (0.0, 0.0)
    theta, phi = normal_to_angles([1, 0, 0])
    assert theta == pytest.approx(math.pi / 2) and phi == pytest.approx(0.0)
    theta, phi = normal_to_angles([0, 1, 0])
    assert phi == pytest.approx(math.pi / 2)


def test_mirror_point_and_plane():
    plane = Plane([0, 0, 1], [0, 0, 1])
    np.testing.assert_allclose(mirror_point([2, 3, 4], plane), [2, 3, -2])
    with pytest.raises(ContractError):
        Plane([0, 0, 0], [0, 0, 2])


def test_vec3_rejects_bad_input():
    with pytest.raises(ContractError):
        vec3([1, 2])
    with pytest.raises(ContractError):
        vec3([1, np.nan, 2])
    with pytest.raises(DegenerateGeometryError):
        normalize(np.zeros(3))


@settings(max_examples=200, deadline=None)
@given(point, point, point)
def test_focusing_law(tile, focal, ap):
    """A ray from the AP reflected on the bisector plane heads for the focal point."""
    if min(np.linalg.norm(focal - tile), np.linalg.norm(ap - tile)) < 1e-3:
        return
    u, v = unit(focal - tile), unit(ap - tile)
    if np.linalg.norm(u + v) < 1e-3:
        return
    n = bisector_normal(tile, focal, ap)
    out = reflect_direction(unit(tile - ap), n)
    assert angle_between(out, focal - tile) < 1e-9


@settings(max_examples=200, deadline=None)
@given(point, point)
def test_reflection_preserves_norm_and_involutes(dv, nv):
    if np.linalg.norm(dv) < 1e-3 or np.linalg.norm(nv) < 1e-3:
        return
    d, n = unit(dv), unit(nv)
    r = reflect_direction(d, n)
    assert abs(np.linalg.norm(r) - 1.0) < 1e-12
    np.testing.assert_allclose(reflect_direction(r, n), d, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, math.pi - 1e-6), st.floats(-math.pi, math.pi))
def test_angles_round_trip(theta, phi):
    n = angles_to_normal(theta, phi)
    np.testing.assert_allclose(angles_to_normal(*normal_to_angles(n)), n, atol=1e-12)


def test_batched_bisector_matches_scalar():
    rng = np.random.default_rng(3)
    tiles, focals = rng.normal(size=(50, 3)), rng.normal(size=(50, 3)) * 5
    ap = np.array([10.0, 2.0, 3.0])
    batch = bisector_normals(tiles, focals, ap)
    for t, f, b in zip(tiles, focals, batch):
        np.testing.assert_allclose(b, bisector_normal(t, f, ap), atol=1e-14)
