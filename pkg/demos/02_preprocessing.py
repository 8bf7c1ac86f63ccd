"""Denoise and thin a synthetic scan: SOR filter, 2 cm subsampling, trunk.

A dense vertical cylinder stands in for a trunk scan; a sprinkle of far-off
points plays the role of sensor noise.
"""

import numpy as np

from treeproj import (PointCloud, SorParams, estimate_trunk,
                      min_spacing_subsample, sor_filter)

rng = np.random.default_rng(1)

phi = rng.uniform(0, 2 * np.pi, 30_000)
trunk = np.column_stack([
    0.3 * np.cos(phi) + 2.0,
    0.3 * np.sin(phi) - 1.0,
    rng.uniform(0.0, 12.0, 30_000),
])
noise = rng.uniform(-30, 30, (150, 3)) + [2.0, -1.0, 6.0]
cloud = PointCloud(xyz=np.vstack([trunk, noise]))
print(f"raw points:        {cloud.n_points}")

thinned = min_spacing_subsample(cloud, spacing=0.02, seed=7)
print(f"after 2 cm thin:   {thinned.n_points}")

clean = sor_filter(thinned, SorParams(k_neighbors=8, n_sigma=1.0))
print(f"after SOR (k=8):   {clean.n_points} "
      f"({thinned.n_points - clean.n_points} outliers dropped)")

estimate = estimate_trunk(clean)
print(f"trunk estimate:    ({estimate.t_x:.3f}, {estimate.t_y:.3f}) m "
      f"(true axis at (2.000, -1.000))")
