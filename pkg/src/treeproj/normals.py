"""Per-point surface normals from kNN plane fits, oriented away from the trunk."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloud import as_cloud
from .preprocess import TrunkEstimate

_EIGENVALUE_TIE_REL = 1e-12
_ON_AXIS_TOL = 1e-9


@dataclass(frozen=True)
class NormalParams:
    n_neighbors: int = 20

    def __post_init__(self):
        if self.n_neighbors < 3:
            raise ValueError("n_neighbors must be >= 3")


def plane_fit_normals(xyz: np.ndarray,
                      n_neighbors: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals from PCA plane fits over each point's k nearest neighbours.

    The neighbour set excludes the query point itself. The normal is the
    eigenvector of the smallest covariance eigenvalue; its sign carries no
    meaning at this stage. Degenerate neighbourhoods (two smallest
    eigenvalues within 1e-12 relative, e.g. all neighbours coincident) fall
    back to the candidate eigenvector closest to the z axis, pointing up.

    Returns (normals, degenerate) with shapes (n, 3) and (n,).
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    n = len(xyz)
    if n < n_neighbors + 1:
        raise ValueError(
            f"normal estimation needs at least {n_neighbors + 1} points, got {n}"
        )
    tree = cKDTree(xyz)
    _, idx = tree.query(xyz, k=n_neighbors + 1)
    neighbors = xyz[idx[:, 1:]]                      # (n, k, 3), query excluded
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / n_neighbors
    eigenvalues, eigenvectors = np.linalg.eigh(cov)  # ascending eigenvalues

    normals = eigenvectors[:, :, 0].copy()
    scale = np.maximum(eigenvalues[:, 2], np.finfo(np.float64).tiny)
    degenerate = (eigenvalues[:, 1] - eigenvalues[:, 0]) < _EIGENVALUE_TIE_REL * scale
    for i in np.nonzero(degenerate)[0]:
        ties = eigenvalues[i] - eigenvalues[i, 0] < _EIGENVALUE_TIE_REL * scale[i]
        candidates = eigenvectors[i][:, ties]
        best = candidates[:, np.abs(candidates[2]).argmax()]
        normals[i] = best if best[2] >= 0 else -best
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return normals, degenerate


def estimate_normals(cloud_or_segment,
                     params: NormalParams = NormalParams()):
    """Return a copy of the input with normals populated."""
    cloud = as_cloud(cloud_or_segment)
    normals, _ = plane_fit_normals(cloud.xyz, params.n_neighbors)
    result = cloud.with_normals(normals)
    if cloud_or_segment is not cloud:
        return cloud_or_segment.with_cloud(result)
    return result


def orient_outward(cloud_or_segment, trunk: TrunkEstimate):
    """Flip normals so none points horizontally toward the trunk axis.

    A normal n at point p is flipped iff dot(n, (t - p)) > 0 where t - p is
    the horizontal vector from the point to the trunk axis at the same
    height. Points on the axis itself (xy distance < 1e-9) keep their sign.
    Idempotent.
    """
    cloud = as_cloud(cloud_or_segment)
    if cloud.normals is None:
        raise ValueError("orient_outward requires normals; run estimate_normals")
    dx = trunk.t_x - cloud.xyz[:, 0]
    dy = trunk.t_y - cloud.xyz[:, 1]
    inward = cloud.normals[:, 0] * dx + cloud.normals[:, 1] * dy
    on_axis = dx * dx + dy * dy < _ON_AXIS_TOL * _ON_AXIS_TOL
    flip = (inward > 0.0) & ~on_axis
    normals = cloud.normals.copy()
    normals[flip] *= -1.0
    result = cloud.with_normals(normals)
    if cloud_or_segment is not cloud:
        return cloud_or_segment.with_cloud(result)
    return result
