import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from treeproj import (NormalParams, PointCloud, TrunkEstimate,
                      estimate_normals, orient_outward, plane_fit_normals)
from synth import cylinder_cloud, plane_cloud, random_cloud, sphere_cloud


def angle_errors_deg(estimated, true):
    dots = np.abs((estimated * true).sum(axis=1))
    return np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))


def test_plane_normals_are_z():
    xyz, true = plane_cloud(6000, seed=0)
    normals, degenerate = plane_fit_normals(xyz, 20)
    assert not degenerate.any()
    assert np.abs(np.abs(normals[:, 2]) - 1.0).max() <= 1e-6
    assert np.abs(normals[:, :2]).max() <= 1e-6
    assert angle_errors_deg(normals, true).max() <= 2.0


def test_cylinder_normals_radial_within_two_degrees():
    xyz, true = cylinder_cloud(12_000, seed=1, half_height=1.0)
    normals, _ = plane_fit_normals(xyz, 20)
    errors = angle_errors_deg(normals, true)
    assert (errors <= 2.0).mean() >= 0.99


def test_sphere_normals_radial_within_two_degrees():
    xyz, true = sphere_cloud(10_000, seed=2)
    normals, _ = plane_fit_normals(xyz, 20)
    errors = angle_errors_deg(normals, true)
    assert (errors <= 2.0).mean() >= 0.99


def test_emitted_normals_unit_length():
    cloud = random_cloud(2000, seed=3)
    result = estimate_normals(cloud, NormalParams(n_neighbors=20))
    norms = np.linalg.norm(result.normals, axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-6


def test_requires_enough_points():
    with pytest.raises(ValueError, match="points"):
        plane_fit_normals(np.zeros((20, 3)), 20)


def test_coincident_neighborhood_flagged_plus_z():
    # 25 coincident points plus a far-away helper: degenerate neighborhoods.
    xyz = np.vstack([np.zeros((25, 3)), [[10.0, 0.0, 0.0]]])
    normals, degenerate = plane_fit_normals(xyz, 20)
    assert degenerate[:25].all()
    np.testing.assert_allclose(normals[:25], np.tile([0, 0, 1.0], (25, 1)),
                               atol=1e-12)


def test_normals_rotation_equivariant_up_to_sign():
    xyz, _ = cylinder_cloud(4000, seed=4, half_height=1.0)
    rotation = Rotation.random(random_state=11).as_matrix()
    base, _ = plane_fit_normals(xyz, 20)
    rotated, _ = plane_fit_normals(xyz @ rotation.T, 20)
    mapped = base @ rotation.T
    mismatch = np.minimum(np.abs(rotated - mapped).max(axis=1),
                          np.abs(rotated + mapped).max(axis=1))
    assert mismatch.max() <= 1e-4


# --- outward orientation ------------------------------------------------------------


def _oriented_cylinder(seed=5):
    xyz, _ = cylinder_cloud(3000, seed=seed, half_height=1.0)
    cloud = estimate_normals(PointCloud(xyz=xyz), NormalParams(20))
    return orient_outward(cloud, TrunkEstimate(t_x=0.0, t_y=0.0))


def test_orient_outward_cylinder_brute_force():
    oriented = _oriented_cylinder()
    to_trunk = np.column_stack([
        -oriented.xyz[:, 0], -oriented.xyz[:, 1], np.zeros(len(oriented.xyz))])
    dots = (oriented.normals * to_trunk).sum(axis=1)
    assert (dots <= 0.0).all()


def test_orient_outward_idempotent():
    oriented = _oriented_cylinder(seed=6)
    again = orient_outward(oriented, TrunkEstimate(t_x=0.0, t_y=0.0))
    np.testing.assert_array_equal(again.normals, oriented.normals)


def test_orient_outward_keeps_on_axis_points():
    xyz = np.vstack([np.column_stack([np.zeros(30), np.zeros(30),
                                      np.linspace(0, 3, 30)]),
                     random_cloud(100, seed=7, low=0.5, high=2.0).xyz])
    inward = np.tile([1.0, 0.0, 0.0], (130, 1))
    cloud = PointCloud(xyz=xyz, normals=inward)
    oriented = orient_outward(cloud, TrunkEstimate(t_x=0.0, t_y=0.0))
    # the first 30 points sit on the trunk axis: sign untouched
    np.testing.assert_array_equal(oriented.normals[:30], inward[:30])


def test_orient_outward_requires_normals():
    with pytest.raises(ValueError, match="normals"):
        orient_outward(random_cloud(10, seed=0), TrunkEstimate(0.0, 0.0))
