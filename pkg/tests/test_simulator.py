import math

import numpy as np
import pytest

from orthosonar.geometry import RigidTransform, SonarExtrinsics
from orthosonar.simulator import (
    GHOST_FACTOR,
    Box,
    Cylinder,
    NoiseModel,
    Scene,
    SceneError,
    ground_truth_cloud,
    orbit_poses,
    render_image,
    render_pair,
    scene_from_dict,
    scene_to_dict,
    trajectory_from_dict,
)
from orthosonar.sonar_image import SonarIntrinsics

IDENTITY = RigidTransform.identity()


def plate(front_x, reflectivity=1.0):
    """Thin wall facing the sonar with its front face at x = front_x."""
    return Box(0.02, 6.0, 6.0, RigidTransform(translation=(front_x + 0.01, 0, 0)), reflectivity)


def test_empty_scene_is_silent():
    pair = render_pair(Scene(), SonarIntrinsics(), SonarIntrinsics(), SonarExtrinsics(), IDENTITY)
    assert not pair.horizontal.intensities.any()
    assert not pair.vertical.intensities.any()
    assert pair.horizontal.orientation == "horizontal"
    assert pair.vertical.orientation == "vertical"


def test_plate_lands_in_expected_bin():
    k = SonarIntrinsics(2.5, 7.5, 100, 64, math.radians(60), math.radians(20))
    img = render_image(Scene((plate(5.0),)), k, IDENTITY).intensities
    expected = math.floor((5.0 - k.min_range) / k.range_resolution)
    assert expected == 50
    central = np.argsort(np.abs(k.beam_angles()))[:6]
    for j in central:
        assert int(np.argmax(img[:, j])) == expected
        assert img[expected, j] > 0.99
    # nothing in front of the plate
    assert not img[:expected].any()


def cylinder_bins_oracle(k, radius, dist, rays):
    """Cells hit by rays meeting an upright cylinder of given radius whose axis is ``dist`` ahead."""
    hits = set()
    for j, theta in enumerate(k.beam_angles()):
        disc = radius**2 - (dist * math.sin(theta)) ** 2
        if disc < 0:
            continue
        s = dist * math.cos(theta) - math.sqrt(disc)  # horizontal distance to the near wall
        for m in range(rays):
            phi = -0.5 * k.vertical_aperture + (m + 0.5) * k.vertical_aperture / rays
            t = s / math.cos(phi)
            i = math.floor((t - k.min_range) / k.range_resolution)
            if 0 <= i < k.num_range_bins:
                hits.add((i, j))
    return hits


def test_cylinder_matches_analytic_intersections():
    k = SonarIntrinsics(2.5, 7.5, 200, 128, math.radians(30), math.radians(20))
    scene = Scene((Cylinder(0.3, 4.0, RigidTransform(translation=(5.0, 0, 0))),))
    img = render_image(scene, k, IDENTITY, rays_per_beam=32).intensities
    got = set(zip(*map(lambda a: a.tolist(), np.nonzero(img))))
    assert got == cylinder_bins_oracle(k, 0.3, 5.0, 32)


def test_occluded_primitive_contributes_nothing():
    k = SonarIntrinsics(1.0, 9.0, 128, 64)
    wall = plate(3.0)
    hidden = Cylinder(0.2, 1.0, RigidTransform(translation=(6.0, 0.0, 0.0)))
    alone = render_image(Scene((wall,)), k, IDENTITY).intensities
    both = render_image(Scene((wall, hidden)), k, IDENTITY).intensities
    assert np.array_equal(alone, both)


def test_first_return_only():
    k = SonarIntrinsics(1.0, 9.0, 128, 16, math.radians(10), math.radians(4))
    img = render_image(Scene((plate(3.0), plate(6.0))), k, IDENTITY).intensities
    far_bin = math.floor((6.0 - 1.0) / k.range_resolution)
    assert not img[far_bin - 2 :].any()


def test_intensity_follows_incidence():
    k = SonarIntrinsics(2.0, 8.0, 256, 64, math.radians(60), math.radians(2))
    tilted = Box(0.02, 6.0, 6.0, RigidTransform.from_rpy(0, 0, math.radians(40), translation=(5, 0, 0)))
    img = render_image(Scene((tilted,)), k, IDENTITY, rays_per_beam=8).intensities
    centre = int(np.argmin(np.abs(k.beam_angles())))
    assert img[:, centre].max() == pytest.approx(math.cos(math.radians(40)), abs=0.02)
    dim = render_image(Scene((plate(5.0, 0.5),)), k, IDENTITY, rays_per_beam=8).intensities
    assert dim.max() == pytest.approx(0.5, abs=1e-3)


def test_ghost_echo():
    k = SonarIntrinsics(1.0, 9.0, 160, 16, math.radians(10), math.radians(4))
    img = render_image(Scene((plate(3.0),)), k, IDENTITY, ghost_echo=True).intensities
    near = math.floor((3.0 - 1.0) / k.range_resolution)
    ghost = math.floor((6.0 - 1.0) / k.range_resolution)
    col = img[:, 8]
    assert col[near] > 0.99
    assert col[ghost] == pytest.approx(GHOST_FACTOR * col[near], rel=1e-3)
    assert not img[near + 2 : ghost - 1].any()


def test_noise_is_seeded():
    k = SonarIntrinsics(1.0, 9.0, 64, 32)
    scene = Scene((plate(5.0),))
    n1 = NoiseModel(0.1, 0.3, seed=1)
    a = render_image(scene, k, IDENTITY, noise=n1).intensities
    b = render_image(scene, k, IDENTITY, noise=n1).intensities
    c = render_image(scene, k, IDENTITY, noise=NoiseModel(0.1, 0.3, seed=2)).intensities
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    clean = render_image(scene, k, IDENTITY).intensities
    assert np.array_equal(clean, render_image(scene, k, IDENTITY).intensities)
    assert np.all(a >= 0)


def test_background_noise_statistics():
    k = SonarIntrinsics(1.0, 9.0, 512, 256)
    img = render_image(Scene(), k, IDENTITY, noise=NoiseModel(2.0, 0.0, seed=4), rays_per_beam=1)
    assert img.intensities.mean() == pytest.approx(2.0, rel=0.02)


def test_sonar_inside_primitive():
    scene = Scene((Box(1, 1, 1),))
    with pytest.raises(SceneError):
        render_image(scene, SonarIntrinsics(), IDENTITY)


def test_vertical_sonar_sees_elevation_structure():
    # a short cylinder above the horizontal plane shows up at positive swept angle
    scene = Scene((Cylinder(0.2, 0.3, RigidTransform(translation=(5.0, 0.0, 0.6))),))
    k = SonarIntrinsics(2.5, 7.5, 256, 128, math.radians(30), math.radians(20))
    pair = render_pair(scene, k, k, SonarExtrinsics(), IDENTITY, rays_per_beam=64)
    rows, cols = np.nonzero(pair.vertical.intensities)
    swept = k.beam_angles()[cols]
    assert len(cols) and np.all(swept > 0)
    assert np.degrees(np.median(swept)) == pytest.approx(math.degrees(math.atan2(0.5, 4.8)), abs=2.0)


def test_ground_truth_on_cylinder():
    c = Cylinder(1.0, 1.0, RigidTransform.from_rpy(0.3, 0.2, 0.1, translation=(1, 2, 3)))
    pts = ground_truth_cloud(Scene((c,)), 500.0, seed=2)
    local = c.pose.inverse().apply(pts)
    assert np.max(np.abs(np.hypot(local[:, 0], local[:, 1]) - 1.0)) < 1e-9
    assert np.all(np.abs(local[:, 2]) <= 0.5 + 1e-9)
    assert len(pts) == pytest.approx(c.lateral_area * 500.0, rel=0.05)


def test_ground_truth_on_box():
    b = Box(0.8, 0.6, 0.4, RigidTransform(translation=(0, 0, 1)))
    pts = ground_truth_cloud(Scene((b,)), 2000.0)
    local = b.pose.inverse().apply(pts)
    on_face = np.isclose(np.abs(local), b.half_extents, atol=1e-9)
    assert np.all(on_face.any(axis=1))
    assert np.all(np.abs(local) <= b.half_extents + 1e-9)
    assert len(pts) == pytest.approx(b.area * 2000.0, rel=0.05)


def test_orbit_faces_centre():
    for pose in orbit_poses((1.0, 2.0, 0.0), radius=4.0, count=5):
        forward = pose.rotation[:, 0]
        to_centre = np.array([1.0, 2.0, 0.0]) - pose.translation
        assert np.linalg.norm(to_centre) == pytest.approx(4.0)
        np.testing.assert_allclose(forward, to_centre / 4.0, atol=1e-12)


def test_scene_json_round_trip():
    scene = Scene((Cylinder(0.1, 2.0), Box(1, 2, 3, RigidTransform.from_rpy(0, 0, 0.5), 0.7)))
    back = scene_from_dict(scene_to_dict(scene))
    assert len(back.primitives) == 2
    assert back.primitives[1].reflectivity == 0.7
    np.testing.assert_allclose(back.primitives[1].pose.rotation, scene.primitives[1].pose.rotation, atol=1e-12)
    with pytest.raises(ValueError):
        scene_from_dict({"primitives": [{"kind": "cone"}]})


def test_trajectory_from_dict():
    poses = trajectory_from_dict({"orbit": {"radius": 3, "count": 4, "arc_deg": 30}})
    assert len(poses) == 4
    explicit = trajectory_from_dict({"poses": [{"translation": [1, 0, 0]}]})
    assert explicit[0].translation.tolist() == [1, 0, 0]
