import numpy as np
import pytest
from PIL import Image

from treetrainer import (ProjectionImageDataset, parse_image_name,
                         scan_class_tree, train_val_split)


def make_png(path, seed=0, bright_top=True, size=32):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 40, (size, size, 3)).astype(np.uint8)
    half = size // 2
    if bright_top:
        pixels[:half] += 180
    else:
        pixels[half:] += 180
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path)


@pytest.fixture
def dataset_root(tmp_path):
    root = tmp_path / "train"
    for i in range(6):
        make_png(root / "pine" / f"s0__p{i}__a{i * 72 % 360:03d}__full.png",
                 seed=i, bright_top=True)
        make_png(root / "birch" / f"s0__b{i}__a000__slice.png",
                 seed=100 + i, bright_top=False)
    return root


def test_parse_image_name():
    scan, tree, angle, sliced = parse_image_name("s3__t17__a216__slice.png")
    assert (scan, tree, angle, sliced) == ("s3", "t17", 216.0, True)
    with pytest.raises(ValueError, match="grammar"):
        parse_image_name("t17_a216_full.png")


def test_scan_class_tree(dataset_root):
    records, classes = scan_class_tree(dataset_root)
    assert classes == ["birch", "pine"]
    assert len(records) == 12
    sliced = [r for r in records if r.sliced]
    assert len(sliced) == 6 and all(r.species == "birch" for r in sliced)


def test_scan_class_tree_errors(tmp_path, dataset_root):
    with pytest.raises(FileNotFoundError):
        scan_class_tree(tmp_path / "nope")
    empty = dataset_root / "lime"
    empty.mkdir()
    with pytest.raises(ValueError, match="lime"):
        scan_class_tree(dataset_root)


def test_train_val_split_deterministic(dataset_root):
    records, _ = scan_class_tree(dataset_root)
    train_a, val_a = train_val_split(records, 0.2, seed=1)
    train_b, val_b = train_val_split(records, 0.2, seed=1)
    assert [r.path for r in train_a] == [r.path for r in train_b]
    assert [r.path for r in val_a] == [r.path for r in val_b]
    assert len(val_a) == 2            # one per class at 20% of 6
    assert len(train_a) + len(val_a) == len(records)
    species = {r.species for r in val_a}
    assert species == {"pine", "birch"}


def test_dataset_tensors(dataset_root):
    records, classes = scan_class_tree(dataset_root)
    data = ProjectionImageDataset(records, classes, image_size=32, cache=True)
    tensor, label = data[0]
    assert tensor.shape == (3, 32, 32)
    assert 0.0 <= float(tensor.min()) and float(tensor.max()) <= 1.0
    assert label in (0, 1)
    again, _ = data[0]                # cached path returns identical values
    assert bool((tensor == again).all())
