import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmreflect.reflector import (SERVO_LIMIT, FocalConstraints, apply_focal_points, assign_columns, assign_shifted,
                                 clamp_focal, complexity_reduction, hex_layout, hex_manhattan, hex_offsets,
                                 segment_centroids, shifted_groups, signed_angles, target_angles)
from mmreflect.scene import Box, SceneConfig
from mmreflect.vectormath import ContractError, angle_between, reflect_direction


def unit(v):
    return v / np.linalg.norm(v)


def test_hex_offsets_closed_form():
    off = hex_offsets(2, 2, 0.1)
    np.testing.assert_allclose(off[0], [0.0, 0.0])
    np.testing.assert_allclose(off[1], [0.1, 0.0])
    np.testing.assert_allclose(off[2], [0.05, 0.1 * math.sqrt(3) / 2])


def test_hex_layout_counts_and_centering():
    cfg = SceneConfig()
    arr = hex_layout(7, 9, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    assert arr.n_tiles == 63
    single = hex_layout(1, 1, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    np.testing.assert_allclose(single.positions[0], cfg.reflector_center)
    assert np.all(arr.theta == 0) and np.all(arr.phi == 0)
    # tiles lie in the panel plane
    offsets = (arr.positions - cfg.reflector_center) @ arr.base_normal
    assert np.max(np.abs(offsets)) < 1e-12


def test_tiles_do_not_overlap_when_flat():
    cfg = SceneConfig.desk()
    arr = hex_layout(5, 5, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    d = np.linalg.norm(arr.positions[:, None] - arr.positions[None], axis=2)
    d[np.diag_indices_from(d)] = np.inf
    flat_to_flat = arr.tile_fill * arr.pitch
    assert d.min() >= flat_to_flat - 1e-12


def test_column_assignment():
    a = assign_columns(7, 9, 3)
    assert set(np.flatnonzero(a.table[0] == 1) + 1) == {1, 4, 7}
    assert [len(a.tiles_of(l)) for l in (1, 2, 3)] == [21, 21, 21]
    assert np.all(assign_columns(4, 4, 1).table == 1)
    with pytest.raises(ContractError):
        assign_columns(7, 2, 3)


def test_shifted_groups():
    g = shifted_groups(7, 9)
    np.testing.assert_array_equal(g[0], np.arange(1, 10))
    assert g[1, 0] == 5
    np.testing.assert_array_equal(shifted_groups(7, 9, shift=0), np.tile(np.arange(1, 10), (7, 1)))
    assert assign_shifted(7, 9, 3).table.shape == (7, 9)


def test_shifted_groups_are_dispersed():
    g = shifted_groups(7, 9)
    worst = math.inf
    for r0 in range(7):
        for c0 in range(9):
            for r1 in range(7):
                for c1 in range(9):
                    if (r0, c0) != (r1, c1) and g[r0, c0] == g[r1, c1]:
                        worst = min(worst, hex_manhattan(r0, c0, r1, c1))
    assert worst >= 4


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 11), st.integers(1, 11), st.integers(1, 11))
def test_assignments_partition_tiles(rows, cols, agents):
    if agents > cols:
        return
    for a in (assign_columns(rows, cols, agents), assign_shifted(rows, cols, agents)):
        counts = sum(len(a.tiles_of(l)) for l in range(1, agents + 1))
        assert counts == rows * cols


def test_focal_points_reflect_through_focals_without_limits():
    cfg = SceneConfig.desk()
    arr = hex_layout(5, 5, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    assign = assign_columns(5, 5, 3)
    box = Box((-50, -50, -50), (50, 50, 50))
    cons = FocalConstraints((box,) * 3).unconstrained_angles()
    focals = np.array([[-2.0, -5.0, 1.5], [0.0, -4.5, 1.0], [1.0, -6.0, 2.0]])
    out = apply_focal_points(arr, focals, assign, cfg.ap_position, cons)
    normals = out.normals()
    for i, (p, n) in enumerate(zip(out.positions, normals)):
        ray = reflect_direction(unit(p - cfg.ap_position), n)
        assert angle_between(ray, focals[assign.flat()[i] - 1] - p) < 1e-9


def test_servo_clamp():
    cfg = SceneConfig.desk()
    arr = hex_layout(1, 1, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    assign = assign_columns(1, 1, 1)
    box = Box((-50, -50, -50), (50, 50, 50))
    cons = FocalConstraints((box,))
    # Place the focal where the required tile normal is tilted 0.8 rad from the panel normal.
    want = np.array([-math.sin(0.8), 0.0, math.cos(0.8)]) @ arr.frame
    tile = arr.positions[0]
    focal = tile + 5.0 * reflect_direction(unit(tile - cfg.ap_position), want)
    theta, _ = target_angles(arr, focal[None], assign, cfg.ap_position)
    assert abs(theta[0]) == pytest.approx(0.8)
    out = apply_focal_points(arr, focal[None], assign, cfg.ap_position, cons)
    assert abs(out.theta[0]) == pytest.approx(SERVO_LIMIT)


def test_column_azimuth_degenerate_column_equals_per_tile():
    cfg = SceneConfig.desk()
    arr = hex_layout(1, 3, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    assign = assign_columns(1, 3, 3)
    cons = FocalConstraints.around(cfg.user_region, 3)
    focals = np.array([[-2.0, -5.0, 1.5], [0.0, -4.5, 1.5], [1.0, -6.0, 1.5]])
    a = apply_focal_points(arr, focals, assign, cfg.ap_position, cons, "per_tile")
    b = apply_focal_points(arr, focals, assign, cfg.ap_position, cons, "column_azimuth")
    np.testing.assert_allclose(a.phi, b.phi)
    np.testing.assert_allclose(a.theta, b.theta)


def test_column_azimuth_shares_one_azimuth_per_column():
    cfg = SceneConfig.desk()
    arr = hex_layout(5, 5, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    assign = assign_shifted(5, 5, 3)
    cons = FocalConstraints.around(cfg.user_region, 3)
    focals = np.array([[-2.0, -5.0, 1.5], [0.0, -4.5, 1.5], [1.0, -6.0, 1.5]])
    out = apply_focal_points(arr, focals, assign, cfg.ap_position, cons, "column_azimuth")
    phi = out.phi.reshape(5, 5)
    assert np.allclose(phi, phi[0][None, :])


def test_signed_angles_reconstruct_normals():
    rng = np.random.default_rng(1)
    n = rng.normal(size=(200, 3))
    n[:, 2] = np.abs(n[:, 2]) + 0.1
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    theta, phi = signed_angles(n)
    assert np.all(np.abs(phi) <= math.pi / 2 + 1e-15)
    st_ = np.sin(theta)
    back = np.stack([st_ * np.cos(phi), st_ * np.sin(phi), np.cos(theta)], axis=1)
    np.testing.assert_allclose(back, n, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(-100, 100)] * 3))
def test_clamp_focal_idempotent(f):
    box = Box((-10, -8, 0.5), (10, -2, 2.5))
    once = clamp_focal(f, box)
    np.testing.assert_array_equal(clamp_focal(once, box), once)
    assert box.contains(once)


def test_clamp_focal_examples():
    box = Box((-10, -10, 0), (10, 10, 3))
    np.testing.assert_array_equal(clamp_focal([1, 2, 1], box), [1, 2, 1])
    assert clamp_focal([100, 0, 0], box)[0] == 10


def test_complexity_reduction():
    assert complexity_reduction(8, 9, 3) == 16
    assert complexity_reduction(1, 1, 1) == pytest.approx(2 / 3)
    assert complexity_reduction(7, 9, 3) == 14


def test_dump_is_valid_json_and_stable():
    cfg = SceneConfig.desk()
    arr = hex_layout(2, 2, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    doc = json.loads(arr.dump())
    assert doc["rows"] == 2 and len(doc["tiles"]) == 4
    assert arr.dump() == arr.copy().dump()


def test_segment_centroids_one_per_agent():
    cfg = SceneConfig.desk()
    arr = hex_layout(5, 5, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    cents = segment_centroids(arr, assign_columns(5, 5, 3))
    assert cents.shape == (3, 3)


def test_tile_polygons_follow_orientation():
    cfg = SceneConfig.desk()
    arr = hex_layout(2, 2, 0.1, cfg.reflector_center, cfg.panel_base_normal())
    arr.theta[:] = 0.3
    arr.phi[:] = -0.2
    polys = arr.tile_polygons()
    for poly, n, c in zip(polys, arr.normals(), arr.positions):
        assert np.max(np.abs((poly - c) @ n)) < 1e-12
        np.testing.assert_allclose(poly.mean(axis=0), c, atol=1e-12)
