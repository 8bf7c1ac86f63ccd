import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from treeproj import (MatchResult, PointCloud, RigidTransform, apply_transform,
                      fit_rigid, mutual_nn_match)
from synth import random_cloud


def rotation_error_rad(r_est, r_true):
    cos = (np.trace(r_est @ r_true.T) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def test_identity_fit():
    points = np.random.default_rng(0).uniform(-5, 5, (6, 3))
    transform, residual = fit_rigid(points, points)
    assert np.abs(transform.rotation - np.eye(3)).max() <= 1e-12
    assert np.abs(transform.translation).max() <= 1e-12
    assert residual <= 1e-12


def test_recovers_known_rotation_translation():
    rng = np.random.default_rng(1)
    local = rng.uniform(-10, 10, (4, 3))
    true_rot = Rotation.from_euler("z", 37.0, degrees=True).as_matrix()
    true_t = np.array([5.0, -2.0, 1.0])
    glob = local @ true_rot.T + true_t
    transform, residual = fit_rigid(local, glob)
    assert rotation_error_rad(transform.rotation, true_rot) <= 1e-9
    assert np.abs(transform.translation - true_t).max() <= 1e-9
    assert residual <= 1e-9


def test_noisy_anchors_residual_scale():
    # Monte-Carlo: mean residual RMS over 100 trials stays within [0.5, 2] sigma.
    sigma = 0.01
    rng = np.random.default_rng(2)
    residuals = []
    for _ in range(100):
        local = rng.uniform(-50, 50, (10, 3))
        rot = Rotation.random(random_state=rng.integers(2**31)).as_matrix()
        t = rng.uniform(-100, 100, 3)
        glob = local @ rot.T + t + rng.normal(scale=sigma, size=local.shape)
        _, residual = fit_rigid(local, glob)
        residuals.append(residual)
    mean = float(np.mean(residuals))
    assert 0.5 * sigma <= mean <= 2.0 * sigma


def test_too_few_or_collinear_anchors():
    with pytest.raises(ValueError, match="3 anchor"):
        fit_rigid(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="collinear"):
        fit_rigid(line, line)


def test_rotation_invariants_on_random_fits():
    rng = np.random.default_rng(3)
    for _ in range(20):
        local = rng.uniform(-5, 5, (5, 3))
        glob = rng.uniform(-5, 5, (5, 3))
        transform, _ = fit_rigid(local, glob)
        rot = transform.rotation
        assert np.abs(rot.T @ rot - np.eye(3)).max() <= 1e-9
        assert abs(np.linalg.det(rot) - 1.0) <= 1e-9


def test_residual_invariant_under_common_rigid_motion():
    rng = np.random.default_rng(4)
    local = rng.uniform(-5, 5, (8, 3))
    glob = local + rng.normal(scale=0.05, size=local.shape)
    _, residual = fit_rigid(local, glob)
    common = Rotation.random(random_state=7).as_matrix()
    shift = np.array([3.0, -4.0, 10.0])
    _, moved = fit_rigid(local @ common.T + shift, glob @ common.T + shift)
    assert abs(residual - moved) <= 1e-9


def test_transform_validation():
    with pytest.raises(ValueError, match="orthonormal"):
        RigidTransform(rotation=np.eye(3) * 1.001, translation=np.zeros(3))
    reflection = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError, match="determinant"):
        RigidTransform(rotation=reflection, translation=np.zeros(3))


def test_apply_transform_identity_and_inverse():
    cloud = random_cloud(100, seed=5, channels=1)
    identity = RigidTransform.identity()
    same = apply_transform(cloud, identity)
    np.testing.assert_array_equal(same.xyz, cloud.xyz)

    rot = Rotation.from_euler("xyz", [10, 20, 30], degrees=True).as_matrix()
    transform = RigidTransform(rotation=rot, translation=np.array([1.0, 2, 3]))
    round_trip = transform.inverse().compose(transform)
    assert np.abs(round_trip.rotation - np.eye(3)).max() <= 1e-9
    assert np.abs(round_trip.translation).max() <= 1e-9
    back = apply_transform(apply_transform(cloud, transform),
                           transform.inverse())
    assert np.abs(back.xyz - cloud.xyz).max() <= 1e-9
    np.testing.assert_array_equal(back.intensity, cloud.intensity)


def test_apply_transform_preserves_distances_and_rotates_normals():
    rng = np.random.default_rng(6)
    normals = rng.normal(size=(50, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    cloud = PointCloud(xyz=rng.uniform(-5, 5, (50, 3)), normals=normals)
    rot = Rotation.random(random_state=8).as_matrix()
    transform = RigidTransform(rotation=rot, translation=np.array([4.0, 0, -2]))
    moved = apply_transform(cloud, transform)

    def pairwise(xyz):
        return np.sqrt(((xyz[:, None] - xyz[None, :]) ** 2).sum(axis=2))

    assert np.abs(pairwise(moved.xyz) - pairwise(cloud.xyz)).max() <= 1e-9
    np.testing.assert_allclose(moved.normals, normals @ rot.T, atol=1e-12)


# --- mutual nearest-neighbour matching ------------------------------------------


def mutual_pairs_oracle(a, b, threshold):
    """Literal double-loop definition of the matching rule."""
    pairs = []
    for i in range(len(a)):
        dist_i = np.linalg.norm(b - a[i], axis=1)
        j = int(np.argmin(dist_i))
        dist_back = np.linalg.norm(a - b[j], axis=1)
        if int(np.argmin(dist_back)) == i and dist_i[j] < threshold:
            pairs.append((i, j))
    return pairs


def test_single_identical_point():
    result = mutual_nn_match([(0.0, 0.0)], [(0.0, 0.0)], threshold=3.0)
    assert len(result.pairs) == 1
    assert result.pairs[0][:2] == (0, 0)
    assert result.pairs[0][2] == 0.0
    assert result.unmatched_a == () and result.unmatched_b == ()


def test_hand_enumerated_example():
    a = [(0.0, 0.0), (10.0, 0.0)]
    b = [(0.5, 0.0), (10.0, 4.0)]
    result = mutual_nn_match(a, b, threshold=3.0)
    # (1, 1) is mutual-NN but 4 m away: rejected by the threshold.
    assert [p[:2] for p in result.pairs] == [(0, 0)]
    assert result.pairs[0][2] == pytest.approx(0.5)
    assert result.unmatched_a == (1,) and result.unmatched_b == (1,)


def test_jittered_copy_matches_perfectly():
    rng = np.random.default_rng(9)
    cells = rng.choice(15 * 15, size=200, replace=False)
    base = np.column_stack([cells // 15, cells % 15]) * 5.0
    jitter = rng.uniform(-0.5, 0.5, (200, 2))
    order = rng.permutation(200)
    shuffled = (base + jitter)[order]
    result = mutual_nn_match(base, shuffled, threshold=3.0)
    assert len(result.pairs) == 200
    inverse = np.argsort(order)   # shuffled[inverse[i]] is base[i]'s copy
    assert {(i, j) for i, j, _ in result.pairs} == \
        {(i, int(inverse[i])) for i in range(200)}
    assert set(mutual_pairs_oracle(base, shuffled, 3.0)) == \
        {(i, j) for i, j, _ in result.pairs}


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 60), m=st.integers(1, 60))
def test_matches_brute_force_definition(seed, n, m):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 20, (n, 2))
    b = rng.uniform(0, 20, (m, 2))
    result = mutual_nn_match(a, b, threshold=3.0)
    assert [(i, j) for i, j, _ in result.pairs] == mutual_pairs_oracle(a, b, 3.0)


def test_swap_transposes_pairs():
    rng = np.random.default_rng(10)
    a = rng.uniform(0, 10, (40, 2))
    b = rng.uniform(0, 10, (35, 2))
    fwd = mutual_nn_match(a, b, threshold=2.0)
    rev = mutual_nn_match(b, a, threshold=2.0)
    assert {(i, j) for i, j, _ in fwd.pairs} == \
        {(j, i) for i, j, _ in rev.pairs}
    assert fwd.unmatched_a == rev.unmatched_b
    assert fwd.unmatched_b == rev.unmatched_a


def test_empty_sides():
    result = mutual_nn_match(np.zeros((0, 2)), [(1.0, 1.0)], threshold=1.0)
    assert result == MatchResult(pairs=(), unmatched_a=(), unmatched_b=(0,))


def test_three_dimensional_positions():
    a = [(0.0, 0.0, 0.0), (5.0, 0.0, 0.0)]
    b = [(0.0, 0.0, 2.9), (5.0, 0.0, 3.1)]
    result = mutual_nn_match(a, b, threshold=3.0)
    assert [p[:2] for p in result.pairs] == [(0, 0)]
