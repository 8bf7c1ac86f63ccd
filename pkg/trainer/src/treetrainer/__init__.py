"""Training harness: fine-tune an image classifier on projection datasets
and export per-image probability CSVs for the evaluation toolkit."""

from .config import TrainConfig
from .data import (ImageRecord, ProjectionImageDataset, parse_image_name,
                   scan_class_tree, train_val_split)
from .model import BACKBONES, build_backbone, register_backbone
from .predict import load_checkpoint, predict
from .train import train

__version__ = "0.1.0"
