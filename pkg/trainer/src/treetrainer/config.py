"""Training hyperparameters.

Defaults follow the reference recipe: AdamW with beta1 0.8, initial
learning rate 5e-4, cosine schedule, dropout 0.15, early-stopping patience
30, RandAugment on the training images, 400 epoch cap. Image size 512
suits dense mobile-scan datasets; 256 suits sparser airborne ones.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    image_size: int = 512
    batch_size: int = 5
    lr0: float = 0.0005
    dropout: float = 0.15
    patience: int = 30
    momentum_beta1: float = 0.8
    cosine_schedule: bool = True
    randaugment: bool = True
    backbone: str = "tiny-cnn"
    val_fraction: float = 0.1
    cache_images: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if not 32 <= self.image_size <= 1024:
            raise ValueError("image_size must lie in [32, 1024]")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")
