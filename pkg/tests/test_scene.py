import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmreflect.raytracer import Tracer
from mmreflect.scene import (CONCRETE, EPS0, METAL, PLASTERBOARD, WOOD, Box, Material, SceneConfig, Surface,
                             build_l_hallway, complex_permittivity, fresnel_reflection, load_scene_config,
                             material_properties, rectangle, scene_config_from_mapping)
from mmreflect.vectormath import ContractError


def test_concrete_at_60ghz():
    eta_p, sigma = material_properties(CONCRETE, 60.0)
    assert eta_p == 5.24
    assert sigma == pytest.approx(0.0462 * 60.0 ** 0.7822, rel=1e-12)
    assert sigma == pytest.approx(1.137, abs=1e-3)


def test_frequency_independent_and_vacuum_like_materials():
    flat = Material("flat", 3.0, 0.0, 0.2, 0.0)
    assert material_properties(flat, 1.0) == material_properties(flat, 90.0) == (3.0, 0.2)
    assert material_properties(Material("vac", 1.0, 0.0, 0.0, 0.0), 60.0) == (1.0, 0.0)


def test_complex_permittivity_closed_form():
    eta = complex_permittivity(5.24, 1.137, 60e9)
    assert eta.real == 5.24
    assert eta.imag == pytest.approx(-1.137 / (2 * math.pi * 60e9 * EPS0), rel=1e-12)
    assert eta.imag == pytest.approx(-0.3407, abs=1e-4)
    assert complex_permittivity(1.0, 0.0, 60e9) == 1 + 0j


def test_fresnel_examples():
    assert fresnel_reflection(None, 0.3) == -1
    assert fresnel_reflection(4 + 0j, 1.0) == pytest.approx(-1 / 3, abs=1e-15)
    with pytest.raises(ContractError):
        fresnel_reflection(4 + 0j, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(1.0, 80.0), st.floats(0.0, 50.0), st.floats(1e-6, 1.0))
def test_fresnel_passive_magnitude_bound(eta_re, loss, cos_i):
    assert abs(fresnel_reflection(complex(eta_re, -loss), cos_i)) <= 1.0 + 1e-12


def test_material_validation():
    with pytest.raises(ContractError):
        Material("bad", 0.0, 0.0, 0.1, 0.0)
    with pytest.raises(ContractError):
        Material("bad", 1.0, 0.0, -0.1, 0.0)


def test_surface_rejects_non_planar_and_non_convex():
    with pytest.raises(ContractError):
        Surface(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0.5], [0, 1, 0]]), WOOD, "wall")
    with pytest.raises(ContractError):
        Surface(np.array([[0, 0, 0], [2, 0, 0], [1, 0.2, 0], [2, 2, 0], [0, 2, 0]]), WOOD, "wall")
    with pytest.raises(ContractError):
        Surface(np.array([[0, 0, 0], [1, 0, 0]]), WOOD, "wall")


def test_default_hallway_matches_published_setup():
    scene = build_l_hallway()
    np.testing.assert_allclose(scene.ap_position, [9.5, -1.5, 2.5])
    assert scene.ap_power_dbm == 5.0
    assert scene.frequency_hz == 60e9
    np.testing.assert_allclose(scene.user_region.lo[:2], [-6.0, -6.2])
    np.testing.assert_allclose(scene.user_region.hi[:2], [2.0, -4.25])
    obstacle = scene.surfaces_of("obstacle")
    top = [s for s in obstacle if s.name == "obstacle_top"][0]
    np.testing.assert_allclose(top.centroid, [3.0, -5.5, 1.8], atol=1e-12)


def test_hallway_materials_and_open_ends():
    scene = build_l_hallway()
    assert all(s.material is PLASTERBOARD for s in scene.surfaces_of("wall"))
    assert all(s.material is CONCRETE for s in scene.surfaces_of("floor"))
    assert all(s.material.name == "ceiling_board" for s in scene.surfaces_of("ceiling"))
    assert len(scene.surfaces_of("wall")) == 4  # no end caps
    assert not scene.surfaces_of("tile")


def test_leg_lengths():
    ext = SceneConfig().hallway_extent()
    assert ext["x_outer"] - ext["x_end"] == pytest.approx(20.0)
    assert ext["y_end"] - ext["y_lo"] == pytest.approx(15.0)


def test_obstacle_blocks_direct_path_for_canonical_user():
    scene = build_l_hallway()
    obstacle = Tracer(scene.surfaces_of("obstacle"), scene.frequency_hz, 0)
    user = np.array([1.5, -6.0, 1.5])
    assert obstacle.blocked(scene.ap_position[None], user[None])[0]
    assert scene.user_region.contains(user)


def test_topology_errors():
    with pytest.raises(ContractError):
        build_l_hallway(SceneConfig(ap_x=0.0))
    with pytest.raises(ContractError):
        build_l_hallway(SceneConfig(ue_y_min=-9.0))
    with pytest.raises(ContractError):
        build_l_hallway(users=[np.array([50.0, 0.0, 1.5])])


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "scene.ini"
    path.write_text("[scene]\nreflector_rows = 5\nfrequency_ghz = 28\n")
    cfg = load_scene_config(path)
    assert cfg.reflector_rows == 5 and isinstance(cfg.reflector_rows, int)
    assert cfg.frequency_hz == 28e9
    with pytest.raises(ContractError):
        scene_config_from_mapping({"bogus": "1"})


def test_box_sampling_stays_inside():
    box = SceneConfig().user_region
    pts = box.sample(np.random.default_rng(0), 1000)
    assert all(box.contains(p) for p in pts)
    with pytest.raises(ContractError):
        Box((1, 0, 0), (0, 0, 0))


def test_metal_is_pec():
    assert METAL.pec
    wall = rectangle((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1), METAL, "tile")
    assert wall.material.pec
