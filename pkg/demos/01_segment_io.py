"""Round-trip a point-cloud segment through the three on-disk formats.

xyz-text is the plainest carrier (and the only one that keeps fractional
intensities exactly); PLY can also carry normals; LAS follows the common
lidar exchange layout with XYZ + intensity.
"""

import tempfile
from pathlib import Path

import numpy as np

from treeproj import PointCloud, TreeSegment, read_segment, write_segment

rng = np.random.default_rng(0)
cloud = PointCloud(
    xyz=rng.uniform(-8.0, 8.0, (2000, 3)),
    intensity=np.floor(rng.uniform(0, 60000, (2000, 1))),
)
segment = TreeSegment(tree_id="demo", scan_id="s0", species="pine", cloud=cloud)

with tempfile.TemporaryDirectory() as tmp:
    for name in ("s0__demo.xyz", "s0__demo.ply", "s0__demo.las"):
        path = Path(tmp) / name
        write_segment(segment, path)
        back = read_segment(path)
        coord_err = np.abs(back.cloud.xyz - cloud.xyz).max()
        inten_err = np.abs(back.cloud.intensity - cloud.intensity).max()
        print(f"{path.suffix:>5}: {path.stat().st_size:>9} bytes, "
              f"max coordinate error {coord_err:.2e} m, "
              f"max intensity error {inten_err:g}")
