"""Render one synthetic tree into the three image colorings.

Writes PNGs under demos/output/: full and sliced views per angle, as a
white-on-black silhouette (WOP), intensity greyscale (OP) and
normal-colored (NV) images.
"""

from pathlib import Path

import numpy as np

from treeproj import (NormalParams, PointCloud, RenderConfig, TreeSegment,
                      empty_pixel_ratio, estimate_normals, estimate_trunk,
                      image_filename, orient_outward, pixel_ground_size,
                      render_tree, save_png)

rng = np.random.default_rng(3)
n = 12_000
height, base_radius = 11.0, 2.4
t = 1.0 - np.sqrt(rng.uniform(0, 1, n))
phi = rng.uniform(0, 2 * np.pi, n)
xyz = np.column_stack([
    base_radius * (1 - t) * np.cos(phi),
    base_radius * (1 - t) * np.sin(phi),
    t * height,
]) + rng.normal(scale=0.02, size=(n, 3))
intensity = np.clip(rng.normal(30000, 8000, (n, 1)), 0, 65535)

segment = TreeSegment(
    tree_id="demo", scan_id="s0", species="spruce",
    cloud=PointCloud(xyz=xyz, intensity=intensity),
)
trunk = estimate_trunk(segment)
segment = orient_outward(estimate_normals(segment, NormalParams(20)), trunk)

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)
for coloring in ("wop", "op", "nv"):
    cfg = RenderConfig(image_size=512, coloring=coloring, channels=(1,),
                       angles_deg=(0.0, 72.0))
    for image in render_tree(segment, cfg, trunk=trunk):
        path = out / f"{coloring}_{image_filename(image.meta)}"
        save_png(image, path)
        print(f"{path.name:<34} empty pixels: "
              f"{empty_pixel_ratio(image) * 100:5.1f}%")
    print(f"  ({coloring}: one pixel covers "
          f"{pixel_ground_size(segment.cloud, cfg) * 100:.2f} cm)")
