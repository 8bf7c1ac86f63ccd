"""Cloud denoising, thinning and trunk position estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, as_cloud


@dataclass(frozen=True)
class SorParams:
    """Statistical outlier removal parameters.

    A point survives when its mean distance to the k nearest neighbours is
    at most the global mean of those per-point means plus n_sigma times
    their (population) standard deviation.
    """

    k_neighbors: int = 8
    n_sigma: float = 1.0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.n_sigma < 0:
            raise ValueError("n_sigma must be non-negative")


@dataclass(frozen=True)
class TrunkEstimate:
    """Planimetric trunk axis position in the cloud's current frame."""

    t_x: float
    t_y: float


def sor_mean_knn_distances(xyz: np.ndarray, k_neighbors: int) -> np.ndarray:
    """Per-point mean distance to the k nearest neighbours (query excluded)."""
    tree = cKDTree(xyz)
    dist, _ = tree.query(xyz, k=k_neighbors + 1)
    return dist[:, 1:].mean(axis=1)


def sor_filter(cloud: PointCloud, params: SorParams = SorParams()) -> PointCloud:
    """Drop statistical outliers; input order is preserved."""
    n = cloud.n_points
    if n <= params.k_neighbors:
        raise ValueError(
            f"SOR needs more than k_neighbors={params.k_neighbors} points, "
            f"got {n}"
        )
    mean_dist = sor_mean_knn_distances(cloud.xyz, params.k_neighbors)
    threshold = mean_dist.mean() + params.n_sigma * mean_dist.std()
    return cloud.select(mean_dist <= threshold)


def min_spacing_subsample(cloud: PointCloud, spacing: float,
                          seed: int) -> PointCloud:
    """Random thinning to a minimum pairwise spacing.

    Greedy accept/reject over a seeded random permutation: a candidate is
    accepted iff it lies at least `spacing` from every point accepted so far,
    so every rejected point sits within `spacing` of some accepted one
    (maximality). Output keeps the original point order.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    n = cloud.n_points
    if n == 0:
        return cloud
    order = np.random.default_rng(seed).permutation(n).tolist()
    # Cell edge = spacing, so any point within `spacing` of a candidate lies
    # in one of the 27 cells around it. Plain-float inner loop: buckets are
    # tiny and numpy per-call overhead would dominate.
    cells = np.floor(cloud.xyz / spacing).astype(np.int64)
    xs, ys, zs = (cloud.xyz[:, 0].tolist(), cloud.xyz[:, 1].tolist(),
                  cloud.xyz[:, 2].tolist())
    cell_keys = list(map(tuple, cells.tolist()))
    spacing_sq = spacing * spacing
    neighborhood = [(dx, dy, dz)
                    for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                    for dz in (-1, 0, 1)]

    grid: dict[tuple[int, int, int], list[int]] = {}
    accepted: list[int] = []
    for idx in order:
        cx, cy, cz = cell_keys[idx]
        px, py, pz = xs[idx], ys[idx], zs[idx]
        ok = True
        for dx, dy, dz in neighborhood:
            bucket = grid.get((cx + dx, cy + dy, cz + dz))
            if not bucket:
                continue
            for j in bucket:
                ex, ey, ez = xs[j] - px, ys[j] - py, zs[j] - pz
                if ex * ex + ey * ey + ez * ez < spacing_sq:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            grid.setdefault((cx, cy, cz), []).append(idx)
            accepted.append(idx)
    accepted.sort()
    return cloud.select(np.asarray(accepted, dtype=np.intp))


_BASAL_SLAB_HEIGHT = 0.5   # meters above the lowest point
_MIN_SLAB_POINTS = 20
_LOW_FRACTION = 0.1


def estimate_trunk(segment) -> TrunkEstimate:
    """Median xy of the basal slab, with fallbacks for flat or tiny clouds.

    Uses points within 0.5 m of the lowest point; if fewer than 20, the
    lowest 10 % of points by z; if still fewer than 20, the whole cloud.
    """
    cloud = as_cloud(segment)
    if cloud.n_points == 0:
        raise ValueError("cannot estimate a trunk for an empty cloud")
    xyz = cloud.xyz
    z = xyz[:, 2]
    slab = xyz[z <= z.min() + _BASAL_SLAB_HEIGHT]
    if len(slab) < _MIN_SLAB_POINTS:
        n_low = max(1, int(np.ceil(_LOW_FRACTION * len(xyz))))
        lowest = xyz[np.argsort(z, kind="stable")[:n_low]]
        slab = lowest if len(lowest) >= _MIN_SLAB_POINTS else xyz
    return TrunkEstimate(
        t_x=float(np.median(slab[:, 0])),
        t_y=float(np.median(slab[:, 1])),
    )
