"""Folder-per-class projection-image datasets.

Expects the layout written by the treeproj renderer: one directory per
species containing ``<scan>__<tree>__a<angle>__<full|slice>.png`` files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset


@dataclass(frozen=True)
class ImageRecord:
    path: str
    species: str
    tree_id: str
    scan_id: str
    angle_deg: float
    sliced: bool


def parse_image_name(name: str) -> tuple[str, str, float, bool]:
    """scan, tree, angle, sliced from the dataset file-name grammar."""
    stem = Path(name).name
    if stem.endswith(".png"):
        stem = stem[:-4]
    parts = stem.split("__")
    if len(parts) != 4 or not parts[2].startswith("a") \
            or parts[3] not in ("full", "slice"):
        raise ValueError(f"file name does not follow the dataset grammar: {name!r}")
    return parts[0], parts[1], float(int(parts[2][1:])), parts[3] == "slice"


def scan_class_tree(root) -> tuple[list[ImageRecord], list[str]]:
    """All records under ``<root>/<species>/*.png`` plus the class list."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: dataset directory not found")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"{root}: no class directories")
    records = []
    for class_dir in class_dirs:
        files = sorted(class_dir.glob("*.png"))
        if not files:
            raise ValueError(f"{class_dir}: empty class directory")
        for path in files:
            scan_id, tree_id, angle, sliced = parse_image_name(path.name)
            records.append(ImageRecord(
                path=str(path), species=class_dir.name, tree_id=tree_id,
                scan_id=scan_id, angle_deg=angle, sliced=sliced,
            ))
    return records, [p.name for p in class_dirs]


def train_val_split(records: list[ImageRecord], val_fraction: float,
                    seed: int) -> tuple[list[ImageRecord], list[ImageRecord]]:
    """Seeded per-class carve-out of validation images for early stopping."""
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[ImageRecord]] = {}
    for record in records:
        by_class.setdefault(record.species, []).append(record)
    train, val = [], []
    for species in sorted(by_class):
        group = by_class[species]
        n_val = max(1, int(round(val_fraction * len(group))))
        order = rng.permutation(len(group))
        chosen = {int(i) for i in order[:n_val]}
        for i, record in enumerate(group):
            (val if i in chosen else train).append(record)
    return train, val


def load_image_tensor(path, image_size: int) -> torch.Tensor:
    """RGB float tensor in [0, 1], bilinearly resized to the training size."""
    with Image.open(path) as img:
        array = np.array(img.convert("RGB"), dtype=np.uint8)
    tensor = torch.from_numpy(array).permute(2, 0, 1).float() / 255.0
    if tensor.shape[1] != image_size:
        tensor = torch.nn.functional.interpolate(
            tensor[None], size=(image_size, image_size), mode="bilinear",
            align_corners=False)[0]
    return tensor


class ProjectionImageDataset(Dataset):
    """Torch dataset over image records; `augment` is applied on uint8 CHW.

    `cache=True` keeps the decoded, resized tensors in memory: worthwhile
    for desk-scale datasets, prohibitive for datasets that do not fit RAM.
    """

    def __init__(self, records: list[ImageRecord], classes: list[str],
                 image_size: int, augment=None, cache: bool = False):
        self.records = records
        self.class_index = {c: i for i, c in enumerate(classes)}
        self.image_size = image_size
        self.augment = augment
        self._cache: dict[int, torch.Tensor] | None = {} if cache else None

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int):
        if self._cache is not None and idx in self._cache:
            tensor = self._cache[idx]
        else:
            tensor = load_image_tensor(self.records[idx].path, self.image_size)
            if self._cache is not None:
                self._cache[idx] = tensor
        if self.augment is not None:
            as_bytes = (tensor * 255.0).round().clamp(0, 255).to(torch.uint8)
            tensor = self.augment(as_bytes).float() / 255.0
        return tensor, self.class_index[self.records[idx].species]
