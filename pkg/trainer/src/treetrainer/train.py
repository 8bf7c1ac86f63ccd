"""Training loop with cosine schedule and early stopping."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import torch
from torch.utils.data import DataLoader
from torchvision.transforms import RandAugment

from .config import TrainConfig
from .data import ProjectionImageDataset, scan_class_tree, train_val_split
from .model import build_backbone

log = logging.getLogger("treetrainer")


def _evaluate_accuracy(model, loader) -> float:
    model.eval()
    correct = total = 0
    with torch.no_grad():
        for batch, labels in loader:
            predicted = model(batch).argmax(dim=1)
            correct += int((predicted == labels).sum())
            total += len(labels)
    return correct / max(total, 1)


def train(dataset_root, config: TrainConfig, out_path) -> tuple[Path, list[dict]]:
    """Fit the backbone on a folder-per-class dataset.

    Stops early when the validation accuracy has not improved for
    `config.patience` consecutive epochs; the best-epoch weights are kept.
    Returns the checkpoint path and the per-epoch log. The log is also
    written next to the checkpoint as JSON.
    """
    records, classes = scan_class_tree(dataset_root)
    train_records, val_records = train_val_split(
        records, config.val_fraction, config.seed)
    log.info("training on %d image(s), validating on %d, classes: %s",
             len(train_records), len(val_records), classes)

    torch.manual_seed(config.seed)
    augment = RandAugment() if config.randaugment else None
    train_set = ProjectionImageDataset(train_records, classes,
                                       config.image_size, augment=augment,
                                       cache=config.cache_images)
    val_set = ProjectionImageDataset(val_records, classes, config.image_size,
                                     cache=config.cache_images)
    generator = torch.Generator().manual_seed(config.seed)
    train_loader = DataLoader(train_set, batch_size=config.batch_size,
                              shuffle=True, generator=generator)
    val_loader = DataLoader(val_set, batch_size=max(config.batch_size, 16))

    model = build_backbone(config.backbone, len(classes), config.dropout)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr0,
                                  betas=(config.momentum_beta1, 0.999))
    loss_fn = torch.nn.CrossEntropyLoss()

    best_accuracy = -1.0
    best_state = None
    best_epoch = 0
    epochs_since_best = 0
    history: list[dict] = []
    stopped_early = False

    for epoch in range(1, config.epochs + 1):
        if config.cosine_schedule:
            scale = 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / config.epochs))
            for group in optimizer.param_groups:
                group["lr"] = config.lr0 * scale
        model.train()
        total_loss = 0.0
        for batch, labels in train_loader:
            optimizer.zero_grad()
            loss = loss_fn(model(batch), labels)
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(labels)

        accuracy = _evaluate_accuracy(model, val_loader)
        history.append({
            "epoch": epoch,
            "train_loss": total_loss / max(len(train_set), 1),
            "val_accuracy": accuracy,
            "lr": optimizer.param_groups[0]["lr"],
        })
        log.info("epoch %d: loss %.4f, val accuracy %.4f",
                 epoch, history[-1]["train_loss"], accuracy)

        if accuracy > best_accuracy:
            best_accuracy = accuracy
            best_state = {k: v.detach().clone()
                          for k, v in model.state_dict().items()}
            best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                log.info("early stop at epoch %d (no improvement for %d)",
                         epoch, config.patience)
                stopped_early = True
                break

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "state_dict": best_state,
        "classes": classes,
        "backbone": config.backbone,
        "dropout": config.dropout,
        "image_size": config.image_size,
        "best_epoch": best_epoch,
        "best_val_accuracy": best_accuracy,
        "stopped_early": stopped_early,
    }, out_path)
    log_path = out_path.with_suffix(".log.json")
    with open(log_path, "w") as handle:
        json.dump({"history": history, "best_epoch": best_epoch,
                   "stopped_early": stopped_early}, handle, indent=2)
    return out_path, history
