"""Command line: `train --data <root> --imgsz <n> ...` and
`predict --ckpt <path> --data <root> --out <csv>`."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import TrainConfig
from .predict import predict
from .train import train

log = logging.getLogger("treetrainer")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeproj-trainer",
        description="Train an image classifier on a projection dataset and "
                    "export per-image probability CSVs",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a classifier on folder-per-class data")
    p.add_argument("--data", required=True,
                   help="folder-per-class image root (e.g. <dataset>/train)")
    p.add_argument("--out", required=True, help="checkpoint path (.pt)")
    p.add_argument("--imgsz", type=int, default=512)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--batch", type=int, default=5)
    p.add_argument("--lr0", type=float, default=0.0005)
    p.add_argument("--dropout", type=float, default=0.15)
    p.add_argument("--patience", type=int, default=30)
    p.add_argument("--momentum", type=float, default=0.8,
                   help="AdamW beta1")
    p.add_argument("--backbone", default="tiny-cnn")
    p.add_argument("--no-randaugment", action="store_true")
    p.add_argument("--no-cosine", action="store_true")
    p.add_argument("--cache", action="store_true",
                   help="keep decoded images in memory (desk-scale datasets)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="export per-image probabilities")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True,
                   help="folder-per-class image root (e.g. <dataset>/test)")
    p.add_argument("--out", required=True, help="probability CSV path")
    p.set_defaults(func=_cmd_predict)
    return parser


def _cmd_train(args) -> int:
    config = TrainConfig(
        epochs=args.epochs, image_size=args.imgsz, batch_size=args.batch,
        lr0=args.lr0, dropout=args.dropout, patience=args.patience,
        momentum_beta1=args.momentum, cosine_schedule=not args.no_cosine,
        randaugment=not args.no_randaugment, backbone=args.backbone,
        cache_images=args.cache, seed=args.seed,
    )
    checkpoint, history = train(args.data, config, args.out)
    print(f"checkpoint={checkpoint} epochs_run={len(history)} "
          f"best_val_accuracy={max(h['val_accuracy'] for h in history):.4f}")
    return 0


def _cmd_predict(args) -> int:
    rows = predict(args.ckpt, args.data, args.out)
    print(f"rows={rows} out={args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
