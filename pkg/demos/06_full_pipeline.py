"""Miniature end-to-end run: segments to species metrics in one script.

Builds a 12-tree dataset (cones vs. ellipsoid crowns), splits it with the
grouping rule, renders silhouette images, classifies them with the
nearest-centroid baseline, aggregates the per-image probabilities per tree
and prints the metrics table.
"""

import tempfile
from pathlib import Path

import numpy as np

from treeproj import (RenderConfig, aggregate_predictions, baseline_classify,
                      compute_metrics, grouped_split, read_segment,
                      render_tree, scan_manifest, write_segment, PointCloud,
                      TreeSegment)


def cone(tree_id, seed):
    rng = np.random.default_rng(seed)
    h, r0 = rng.uniform(8, 14), rng.uniform(1.5, 3.0)
    t = 1 - np.sqrt(rng.uniform(0, 1, 2500))
    phi = rng.uniform(0, 2 * np.pi, 2500)
    xyz = np.column_stack([r0 * (1 - t) * np.cos(phi),
                           r0 * (1 - t) * np.sin(phi), t * h])
    return TreeSegment(tree_id, "s0", "pine",
                       PointCloud(xyz + rng.normal(scale=0.02, size=xyz.shape)))


def blob(tree_id, seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(2500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    xyz = d * rng.uniform(2, 4, 3) + [0, 0, 6.0]
    return TreeSegment(tree_id, "s0", "birch",
                       PointCloud(xyz + rng.normal(scale=0.02, size=xyz.shape)))


with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp) / "segments"
    for i in range(6):
        seg = cone(f"p{i}", seed=10 + i)
        write_segment(seg, root / "pine" / f"s0__p{i}.xyz")
        seg = blob(f"b{i}", seed=20 + i)
        write_segment(seg, root / "birch" / f"s0__b{i}.xyz")

    manifest = grouped_split(scan_manifest(root), test_fraction=0.34, seed=3)
    cfg = RenderConfig(image_size=256, coloring="wop")

    train_pairs, test_images, truth = [], [], {}
    for entry in manifest.entries:
        segment = read_segment(entry.path)
        images = render_tree(segment, cfg)
        if entry.split == "train":
            train_pairs.extend((img, entry.species) for img in images)
        else:
            test_images.extend(images)
            truth[(entry.tree_id, entry.scan_id)] = entry.species

    print(f"train images: {len(train_pairs)}, test images: {len(test_images)}")
    table = baseline_classify(train_pairs, test_images, downsample=24)
    predictions = aggregate_predictions(table)
    report = compute_metrics(
        [truth[(p.tree_id, p.scan_id)] for p in predictions],
        [p.species for p in predictions],
        table.species,
    )
    print()
    print(report.format_table())
