"""Core point-cloud and tree-segment containers.

Clouds are stored column-wise as numpy arrays: an (n, 3) coordinate block
plus optional per-point intensity channels and unit normals. All operations
in this package treat clouds as immutable and return new instances.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

#: Closed label set. "unknown" is reserved for unlabeled segments.
SPECIES_LABELS = (
    "pine",
    "spruce",
    "birch",
    "maple",
    "aspen",
    "rowan",
    "oak",
    "lime",
    "alder",
    "unknown",
)

#: Raw scanner intensities live in [0, INTENSITY_MAX].
INTENSITY_MAX = 65536.0

#: Normals must be unit length within this tolerance.
UNIT_NORMAL_TOL = 1e-6


@dataclass(frozen=True)
class PointCloud:
    """Columnar cloud: xyz in meters, optional intensities and normals.

    xyz:       (n, 3) float64
    intensity: (n, c) float64 with c in {1, 3}, raw values in [0, 65536]
    normals:   (n, 3) float64, unit length
    """

    xyz: np.ndarray
    intensity: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        xyz = np.ascontiguousarray(self.xyz, dtype=np.float64)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must be (n, 3), got {xyz.shape}")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("xyz contains non-finite coordinates")
        object.__setattr__(self, "xyz", xyz)

        if self.intensity is not None:
            inten = np.ascontiguousarray(self.intensity, dtype=np.float64)
            if inten.ndim == 1:
                inten = inten[:, None]
            if inten.shape[0] != len(xyz) or inten.shape[1] not in (1, 3):
                raise ValueError(
                    f"intensity must be (n, 1) or (n, 3), got {inten.shape}"
                )
            if inten.size and (inten.min() < 0.0 or inten.max() > INTENSITY_MAX):
                raise ValueError(
                    f"intensity values must lie in [0, {INTENSITY_MAX:.0f}]"
                )
            object.__setattr__(self, "intensity", inten)

        if self.normals is not None:
            normals = np.ascontiguousarray(self.normals, dtype=np.float64)
            if normals.shape != xyz.shape:
                raise ValueError(f"normals must match xyz shape, got {normals.shape}")
            norms = np.linalg.norm(normals, axis=1)
            if normals.size and np.any(np.abs(norms - 1.0) > UNIT_NORMAL_TOL):
                raise ValueError("normals must be unit length within 1e-6")
            object.__setattr__(self, "normals", normals)

    @property
    def n_points(self) -> int:
        return self.xyz.shape[0]

    @property
    def channel_count(self) -> int:
        return 0 if self.intensity is None else self.intensity.shape[1]

    def __len__(self) -> int:
        return self.n_points

    def select(self, index: np.ndarray) -> "PointCloud":
        """Row subset (boolean mask or integer indices); order preserved."""
        return PointCloud(
            xyz=self.xyz[index],
            intensity=None if self.intensity is None else self.intensity[index],
            normals=None if self.normals is None else self.normals[index],
        )

    def with_normals(self, normals: np.ndarray) -> "PointCloud":
        return PointCloud(xyz=self.xyz, intensity=self.intensity, normals=normals)

    def with_xyz(self, xyz: np.ndarray) -> "PointCloud":
        return PointCloud(xyz=xyz, intensity=self.intensity, normals=self.normals)


@dataclass(frozen=True)
class TreeSegment:
    """One segmented tree: a non-empty cloud plus identity and label."""

    tree_id: str
    scan_id: str
    species: str
    cloud: PointCloud

    def __post_init__(self):
        if self.species not in SPECIES_LABELS:
            raise ValueError(f"unknown species label {self.species!r}")
        if self.cloud.n_points == 0:
            raise ValueError("tree segment must contain at least one point")

    @property
    def channel_count(self) -> int:
        return self.cloud.channel_count

    def with_cloud(self, cloud: PointCloud) -> "TreeSegment":
        return dataclasses.replace(self, cloud=cloud)


def as_cloud(obj) -> PointCloud:
    """Accept either a PointCloud or a TreeSegment where both make sense."""
    return obj.cloud if isinstance(obj, TreeSegment) else obj
