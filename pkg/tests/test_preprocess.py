import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from treeproj import (PointCloud, SorParams, TrunkEstimate, estimate_trunk,
                      min_spacing_subsample, sor_filter)
from synth import random_cloud, unit_cube_corners


# --- statistical outlier removal: brute-force oracle ------------------------------


def sor_keep_mask_oracle(xyz, k, n_sigma):
    """Independent O(n^2) implementation of the documented keep rule."""
    n = len(xyz)
    means = np.empty(n)
    for i in range(n):
        dists = np.linalg.norm(xyz - xyz[i], axis=1)
        dists = np.sort(dists)[1:k + 1]          # drop self, take k nearest
        means[i] = dists.mean()
    return means <= means.mean() + n_sigma * means.std()


def test_sor_unit_cube_all_survive():
    cloud = PointCloud(xyz=unit_cube_corners())
    kept = sor_filter(cloud, SorParams(k_neighbors=3, n_sigma=1.0))
    assert kept.n_points == 8


def test_sor_cube_plus_outlier_removes_exactly_it():
    xyz = np.vstack([unit_cube_corners(), [[100.0, 100.0, 100.0]]])
    cloud = PointCloud(xyz=xyz)
    kept = sor_filter(cloud, SorParams(k_neighbors=3, n_sigma=1.0))
    np.testing.assert_array_equal(kept.xyz, unit_cube_corners())
    # agreement with the oracle on the same instance
    mask = sor_keep_mask_oracle(xyz, 3, 1.0)
    assert mask.tolist() == [True] * 8 + [False]


def test_sor_huge_n_sigma_is_identity():
    cloud = random_cloud(300, seed=1)
    kept = sor_filter(cloud, SorParams(k_neighbors=5, n_sigma=1e12))
    np.testing.assert_array_equal(kept.xyz, cloud.xyz)


def test_sor_matches_oracle_on_random_clouds():
    for seed in range(5):
        cloud = random_cloud(120, seed=seed, low=0.0, high=4.0)
        params = SorParams(k_neighbors=6, n_sigma=0.8)
        kept = sor_filter(cloud, params)
        mask = sor_keep_mask_oracle(cloud.xyz, 6, 0.8)
        np.testing.assert_array_equal(kept.xyz, cloud.xyz[mask])


def test_sor_preserves_order():
    cloud = random_cloud(200, seed=7)
    kept = sor_filter(cloud, SorParams(k_neighbors=4, n_sigma=0.5))
    idx = [np.nonzero((cloud.xyz == p).all(axis=1))[0][0] for p in kept.xyz]
    assert idx == sorted(idx)


def test_sor_requires_enough_points():
    cloud = random_cloud(5, seed=0)
    with pytest.raises(ValueError, match="points"):
        sor_filter(cloud, SorParams(k_neighbors=5))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000),
       n1=st.floats(0.0, 2.0), n2=st.floats(0.0, 2.0))
def test_sor_output_monotone_in_n_sigma(seed, n1, n2):
    lo, hi = sorted([n1, n2])
    cloud = random_cloud(60, seed=seed, low=0.0, high=3.0)
    small = sor_filter(cloud, SorParams(k_neighbors=4, n_sigma=lo))
    large = sor_filter(cloud, SorParams(k_neighbors=4, n_sigma=hi))
    rows_small = {tuple(p) for p in small.xyz}
    rows_large = {tuple(p) for p in large.xyz}
    assert rows_small <= rows_large


# --- minimum-spacing subsample ------------------------------------------------------


def test_subsample_pair_too_close_keeps_one():
    cloud = PointCloud(xyz=np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]]))
    out = min_spacing_subsample(cloud, spacing=0.02, seed=0)
    assert out.n_points == 1


def test_subsample_coarse_grid_is_identity():
    grid = np.stack(np.meshgrid(*[np.arange(0, 1, 0.1)] * 3),
                    axis=-1).reshape(-1, 3)
    cloud = PointCloud(xyz=grid)
    out = min_spacing_subsample(cloud, spacing=0.02, seed=3)
    np.testing.assert_array_equal(out.xyz, grid)


def test_subsample_min_distance_brute_force():
    cloud = random_cloud(10_000, seed=11, low=0.0, high=1.0)
    out = min_spacing_subsample(cloud, spacing=0.02, seed=42)
    xyz = out.xyz
    min_sq = np.inf
    for start in range(0, len(xyz), 512):        # chunked O(n^2) check
        chunk = xyz[start:start + 512]
        d = ((chunk[:, None, :] - xyz[None, :, :]) ** 2).sum(axis=2)
        rows = np.arange(len(chunk))
        d[rows, start + rows] = np.inf
        min_sq = min(min_sq, d.min())
    assert np.sqrt(min_sq) >= 0.02


def test_subsample_maximality_and_determinism():
    cloud = random_cloud(3000, seed=2, low=0.0, high=0.5)
    out = min_spacing_subsample(cloud, spacing=0.02, seed=5)
    again = min_spacing_subsample(cloud, spacing=0.02, seed=5)
    np.testing.assert_array_equal(out.xyz, again.xyz)

    # every rejected point lies within `spacing` of an accepted one
    accepted = cKDTree(out.xyz)
    kept_rows = {tuple(p) for p in out.xyz}
    rejected = np.array([p for p in cloud.xyz if tuple(p) not in kept_rows])
    if len(rejected):
        nearest, _ = accepted.query(rejected, k=1)
        assert nearest.max() < 0.02


@pytest.mark.parametrize("seed", [0, 1, 99])
def test_subsample_spacing_property_any_seed(seed):
    cloud = random_cloud(800, seed=8, low=0.0, high=0.3)
    out = min_spacing_subsample(cloud, spacing=0.05, seed=seed)
    d = np.sqrt(((out.xyz[:, None] - out.xyz[None, :]) ** 2).sum(axis=2))
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 0.05


def test_subsample_requires_positive_spacing():
    with pytest.raises(ValueError):
        min_spacing_subsample(random_cloud(5, seed=0), spacing=0.0, seed=0)


# --- trunk estimate ---------------------------------------------------------------


def test_trunk_vertical_line():
    z = np.linspace(0, 10, 50)
    cloud = PointCloud(xyz=np.column_stack([np.full(50, 1.0),
                                            np.full(50, 2.0), z]))
    trunk = estimate_trunk(cloud)
    assert trunk == TrunkEstimate(t_x=1.0, t_y=2.0)


def test_trunk_cone_with_symmetric_base_rings():
    # Basal slab: rings at exactly symmetric angles, so the slab median is
    # (0, 0) by symmetry. An off-center blob above the slab must not move it.
    rings = []
    for radius, z in [(2.0, 0.0), (1.8, 0.2), (1.6, 0.4)]:
        phi = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
        rings.append(np.column_stack([radius * np.cos(phi),
                                      radius * np.sin(phi),
                                      np.full(64, z)]))
    blob = np.tile([5.0, -3.0, 6.0], (300, 1))
    cloud = PointCloud(xyz=np.vstack(rings + [blob]))
    slab = cloud.xyz[cloud.xyz[:, 2] <= cloud.xyz[:, 2].min() + 0.5]
    oracle = np.median(slab[:, :2], axis=0)
    np.testing.assert_allclose(oracle, [0.0, 0.0], atol=1e-12)

    trunk = estimate_trunk(cloud)
    assert abs(trunk.t_x) <= 1e-3 and abs(trunk.t_y) <= 1e-3


def test_trunk_flat_slab_falls_back_to_whole_cloud():
    xyz = np.array([[i, 2.0 * i, 10.0] for i in range(5)], dtype=float)
    trunk = estimate_trunk(PointCloud(xyz=xyz))
    assert trunk == TrunkEstimate(t_x=2.0, t_y=4.0)  # whole-cloud median


def test_trunk_low_fraction_fallback():
    # 250 points spread over 30 m of height, only ~10 in any 0.5 m slab:
    # falls through to the lowest-10% rule (25 points >= 20).
    rng = np.random.default_rng(0)
    z = np.linspace(0.0, 30.0, 250)
    xyz = np.column_stack([rng.normal(3.0, 0.01, 250),
                           rng.normal(-1.0, 0.01, 250), z])
    slab_count = (z <= z.min() + 0.5).sum()
    assert slab_count < 20
    trunk = estimate_trunk(PointCloud(xyz=xyz))
    lowest = xyz[np.argsort(z)[:25]]
    assert trunk.t_x == pytest.approx(np.median(lowest[:, 0]))
    assert trunk.t_y == pytest.approx(np.median(lowest[:, 1]))


@pytest.mark.parametrize("angle", [90.0, 180.0, 270.0])
def test_trunk_equivariant_under_quarter_turns(angle):
    from treeproj import rotate_trunk, rotate_z
    cloud = random_cloud(400, seed=13)
    direct = estimate_trunk(rotate_z(cloud, angle))
    rotated = rotate_trunk(estimate_trunk(cloud), angle)
    assert abs(direct.t_x - rotated.t_x) <= 1e-9
    assert abs(direct.t_y - rotated.t_y) <= 1e-9
