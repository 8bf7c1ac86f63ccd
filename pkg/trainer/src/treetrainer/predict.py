"""Per-image probability export in the evaluation CSV contract.

Rows are ``tree_id,scan_id,angle,slice,<species...>`` with probabilities
summing to 1, one row per image, ordered by file path so repeated runs
produce identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import torch

from .data import load_image_tensor, scan_class_tree
from .model import build_backbone, predict_probabilities


def load_checkpoint(path) -> tuple[torch.nn.Module, list[str], int]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model = build_backbone(payload["backbone"], len(payload["classes"]),
                           payload["dropout"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload["classes"], payload["image_size"]


def predict(checkpoint_path, images_root, out_csv,
            batch_size: int = 32) -> int:
    """Classify every image under a folder-per-class root; returns row count."""
    model, classes, image_size = load_checkpoint(checkpoint_path)
    records, _ = scan_class_tree(images_root)
    records = sorted(records, key=lambda r: r.path)

    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["tree_id", "scan_id", "angle", "slice", *classes])
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            batch = torch.stack([load_image_tensor(r.path, image_size)
                                 for r in chunk])
            probabilities = predict_probabilities(model, batch)
            for record, probs in zip(chunk, probabilities):
                normalized = (probs / probs.sum()).tolist()
                writer.writerow([
                    record.tree_id, record.scan_id,
                    f"{record.angle_deg:g}",
                    "slice" if record.sliced else "full",
                    *[f"{p:.9g}" for p in normalized],
                ])
    return len(records)
