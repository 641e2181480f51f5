"""Train the reference classifier on the procedural sign dataset.

Usage:
    python scripts/train_reference.py --per-class 400 --seed 1 --out model.rpw
"""

import argparse
import time

from signadv import model, signs


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--per-class", type=int, default=400)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--out", default="model.rpw")
    args = parser.parse_args()

    t0 = time.time()
    dataset = signs.generate_dataset(args.per_class, args.seed)
    print(
        f"dataset: train={len(dataset.train)} val={len(dataset.val)} "
        f"test={len(dataset.test)} ({time.time() - t0:.1f}s)"
    )

    config = model.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed
    )
    t0 = time.time()
    params, metrics = model.train(dataset, config)
    for m in metrics:
        print(f"epoch {m.epoch:2d}  loss {m.train_loss:.4f}  val {m.val_accuracy:.4f}")
    acc = model.accuracy(params, dataset.test.images, dataset.test.labels)
    print(f"test accuracy {acc:.4f} ({time.time() - t0:.1f}s)")
    model.save_weights(params, args.out)
    print(f"weights -> {args.out}")


if __name__ == "__main__":
    main()
