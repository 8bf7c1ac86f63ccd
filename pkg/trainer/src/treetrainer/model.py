"""Pluggable classification backbones.

The default is a small CNN that trains quickly on CPU. Any callable
``builder(n_classes, dropout) -> nn.Module`` can be registered, so a
heavier pretrained classifier (e.g. a YOLO classification variant) can be
slotted in behind the same train/predict interface.
"""

from __future__ import annotations

import torch
from torch import nn

BACKBONES = {}


def register_backbone(name: str):
    def wrap(builder):
        BACKBONES[name] = builder
        return builder
    return wrap


def build_backbone(name: str, n_classes: int, dropout: float) -> nn.Module:
    try:
        builder = BACKBONES[name]
    except KeyError:
        raise ValueError(
            f"unknown backbone {name!r}; registered: {sorted(BACKBONES)}"
        ) from None
    return builder(n_classes, dropout)


@register_backbone("tiny-cnn")
def _tiny_cnn(n_classes: int, dropout: float) -> nn.Module:
    def block(c_in, c_out):
        return nn.Sequential(
            nn.Conv2d(c_in, c_out, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )

    return nn.Sequential(
        block(3, 16),
        block(16, 32),
        block(32, 64),
        block(64, 64),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
        nn.Dropout(dropout),
        nn.Linear(64, n_classes),
    )


@torch.no_grad()
def predict_probabilities(model: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    model.eval()
    return torch.softmax(model(batch), dim=1)
