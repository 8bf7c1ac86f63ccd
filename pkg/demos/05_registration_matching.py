"""Recover a rigid transform from anchor pairs, then match tree positions.

A scan in local coordinates is aligned to a global frame from six anchor
points; detected tree positions are then paired with reference positions
by mutual nearest neighbours under a 3 m gate.
"""

import numpy as np
from scipy.spatial.transform import Rotation

from treeproj import fit_rigid, mutual_nn_match

rng = np.random.default_rng(4)

true_rotation = Rotation.from_euler("z", 24.0, degrees=True).as_matrix()
true_translation = np.array([382000.0, 6670000.0, 12.0])   # map-frame offset
anchors_local = rng.uniform(-60, 60, (6, 3))
anchors_global = anchors_local @ true_rotation.T + true_translation
anchors_global += rng.normal(scale=0.01, size=anchors_global.shape)

transform, residual = fit_rigid(anchors_local, anchors_global)
angle_err = np.degrees(np.arccos(
    (np.trace(transform.rotation @ true_rotation.T) - 1) / 2))
print(f"recovered rotation error: {angle_err * 3600:.2f} arcsec")
print(f"translation error:        "
      f"{np.abs(transform.translation - true_translation).max() * 100:.2f} cm")
print(f"anchor residual RMS:      {residual * 100:.2f} cm")

# tree positions: reference vs. detections with jitter, dropouts, clutter
reference = rng.uniform(0, 200, (80, 2))
detected = reference[:70] + rng.normal(scale=0.4, size=(70, 2))
clutter = rng.uniform(0, 200, (5, 2))
match = mutual_nn_match(np.vstack([detected, clutter]), reference,
                        threshold=3.0)
print(f"matched {len(match.pairs)} of 80 reference trees; "
      f"{len(match.unmatched_a)} detections left over, "
      f"{len(match.unmatched_b)} references unmatched")
