"""Train the DSNN on MNIST and print per-epoch test accuracy.

    python scripts/run_mnist.py --time-steps 25 --epochs 1 --precision single
"""
import argparse
import logging

from snnbptt.data import load_dataset
from snnbptt.model import NetworkSpec
from snnbptt.train import AdamWConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--time-steps", type=int, default=25)
    ap.add_argument("--epochs", type=int, default=1)
    ap.add_argument("--hidden", type=int, default=1000)
    ap.add_argument("--neuron", default="lif", choices=["lif", "cuba", "rlif"])
    ap.add_argument("--precision", default="single", choices=["half", "single", "double"])
    ap.add_argument("--batch-size", type=int, default=128)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--subset-n", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    try:
        train = load_dataset("mnist", "train", args.data_dir, limit=args.subset_n)
        test = load_dataset("mnist", "test", args.data_dir)
    except FileNotFoundError as e:
        raise SystemExit(f"error: {e}")
    spec = NetworkSpec.dsnn(hidden=args.hidden, time_steps=args.time_steps,
                            neuron_model=args.neuron, precision=args.precision)
    _, history = fit(spec, train, args.epochs, args.batch_size, args.seed,
                     AdamWConfig(lr=args.lr), test=test)
    for h in history:
        print(f"epoch {h['epoch']}: loss {h['loss']:.4f} test accuracy {h['test_accuracy']:.4f} "
              f"({h['wallclock']:.1f}s)")


if __name__ == "__main__":
    main()
