"""Rigid alignment from anchor pairs and mutual nearest-neighbour matching."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import PointCloud, as_cloud

_ORTHONORMAL_TOL = 1e-9
_COLLINEAR_REL = 1e-10


@dataclass(frozen=True)
class RigidTransform:
    """x_out = rotation @ x_in + translation."""

    rotation: np.ndarray      # (3, 3), orthonormal, det +1
    translation: np.ndarray   # (3,)

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if np.abs(rot.T @ rot - np.eye(3)).max() > _ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHONORMAL_TOL:
            raise ValueError("rotation determinant must be +1 within 1e-9")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def apply_points(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then self."""
        return RigidTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(
            rotation=self.rotation.T,
            translation=-(self.rotation.T @ self.translation),
        )

    def to_json_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RigidTransform":
        return cls(rotation=np.asarray(data["rotation"]),
                   translation=np.asarray(data["translation"]))


def _check_not_collinear(points: np.ndarray, name: str) -> None:
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0.0 or s[1] <= _COLLINEAR_REL * s[0]:
        raise ValueError(f"{name} anchors are collinear; cannot fix a rotation")


def fit_rigid(anchors_local: np.ndarray,
              anchors_global: np.ndarray) -> tuple[RigidTransform, float]:
    """Least-squares rigid transform mapping local anchors onto global ones.

    Kabsch/Procrustes: subtract centroids, SVD of the cross-covariance, sign
    correction so det(R) = +1. Returns the transform and the residual RMS in
    meters.
    """
    local = np.asarray(anchors_local, dtype=np.float64)
    glob = np.asarray(anchors_global, dtype=np.float64)
    if local.ndim != 2 or local.shape[1] != 3 or local.shape != glob.shape:
        raise ValueError("anchor arrays must both be (n, 3)")
    if len(local) < 3:
        raise ValueError(f"need at least 3 anchor pairs, got {len(local)}")
    _check_not_collinear(local, "local")
    _check_not_collinear(glob, "global")

    centroid_local = local.mean(axis=0)
    centroid_global = glob.mean(axis=0)
    cross = (local - centroid_local).T @ (glob - centroid_global)
    u, _, vt = np.linalg.svd(cross)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    translation = centroid_global - rotation @ centroid_local
    transform = RigidTransform(rotation=rotation, translation=translation)
    residuals = transform.apply_points(local) - glob
    rms = float(np.sqrt((residuals ** 2).sum(axis=1).mean()))
    return transform, rms


def apply_transform(cloud_or_segment, transform: RigidTransform):
    """Map coordinates; intensities carried over, normals rotated."""
    cloud = as_cloud(cloud_or_segment)
    normals = cloud.normals
    if normals is not None:
        normals = normals @ transform.rotation.T
    result = PointCloud(
        xyz=transform.apply_points(cloud.xyz),
        intensity=cloud.intensity,
        normals=normals,
    )
    if cloud_or_segment is not cloud:
        return cloud_or_segment.with_cloud(result)
    return result


# --- mutual nearest-neighbour matching ---------------------------------------


@dataclass(frozen=True)
class MatchResult:
    """Index pairs (a, b, distance) plus unmatched indices on both sides."""

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_a: tuple[int, ...]
    unmatched_b: tuple[int, ...]


def mutual_nn_match(positions_a, positions_b, threshold: float) -> MatchResult:
    """Pair points that are each other's nearest neighbour within a threshold.

    Positions are (n, 2) or (n, 3); both sides must share the dimension.
    Nearest-neighbour ties are broken by the lowest index. A pair is kept
    only when its distance is strictly below `threshold`.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    a = np.atleast_2d(np.asarray(positions_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(positions_b, dtype=np.float64))
    if a.size == 0:
        a = a.reshape(0, b.shape[1] if b.size else 2)
    if b.size == 0:
        b = b.reshape(0, a.shape[1])
    if a.shape[1] != b.shape[1] or a.shape[1] not in (2, 3):
        raise ValueError("positions must share a dimension of 2 or 3")
    if len(a) == 0 or len(b) == 0:
        return MatchResult(pairs=(),
                           unmatched_a=tuple(range(len(a))),
                           unmatched_b=tuple(range(len(b))))

    delta = a[:, None, :] - b[None, :, :]
    dist = np.sqrt((delta ** 2).sum(axis=2))
    nn_of_a = dist.argmin(axis=1)   # argmin takes the lowest index on ties
    nn_of_b = dist.argmin(axis=0)

    pairs = []
    matched_a = np.zeros(len(a), dtype=bool)
    matched_b = np.zeros(len(b), dtype=bool)
    for i in range(len(a)):
        j = nn_of_a[i]
        if nn_of_b[j] == i and dist[i, j] < threshold:
            pairs.append((i, int(j), float(dist[i, j])))
            matched_a[i] = True
            matched_b[j] = True
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_a=tuple(np.nonzero(~matched_a)[0].tolist()),
        unmatched_b=tuple(np.nonzero(~matched_b)[0].tolist()),
    )


# --- CSV serialization --------------------------------------------------------


def read_positions_csv(path) -> tuple[list[str], np.ndarray]:
    """Read `id,x,y[,z]` rows; returns ids and an (n, 2|3) array."""
    ids, rows = [], []
    with open(path, "r", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or header[0] != "id" or len(header) not in (3, 4):
            raise ValueError(f"{path}: expected header id,x,y[,z]")
        for row in reader:
            if len(row) != len(header):
                raise ValueError(f"{path}: malformed row {row}")
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return ids, np.asarray(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)


def write_match_csv(result: MatchResult, ids_a: list[str], ids_b: list[str],
                    path) -> None:
    """Match report: `id_A,id_B,distance_m` rows plus unmatched sections."""
    path = Path(path)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["id_A", "id_B", "distance_m"])
        for i, j, d in result.pairs:
            writer.writerow([ids_a[i], ids_b[j], f"{d:.6f}"])
        handle.write("# unmatched_A\n")
        for i in result.unmatched_a:
            writer.writerow([ids_a[i]])
        handle.write("# unmatched_B\n")
        for j in result.unmatched_b:
            writer.writerow([ids_b[j]])
