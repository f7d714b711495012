"""Population-code accuracy trend on CIFAR-10 at T=1 against a T=25 baseline.

    python scripts/run_population_trend.py --subset-n 20000 --epochs 5
"""
import argparse
import json
import logging

import numpy as np

from snnbptt.bench import population_trend
from snnbptt.data import load_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--subset-n", type=int, default=20000)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--populations", default="10,100,500")
    ap.add_argument("--out", default=None, help="optional JSON dump of per-seed accuracies")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    try:
        train = load_dataset("cifar10", "train", args.data_dir, limit=args.subset_n)
        test = load_dataset("cifar10", "test", args.data_dir)
    except FileNotFoundError as e:
        raise SystemExit(f"error: {e}")
    res = population_trend(train, test, [int(p) for p in args.populations.split(",")],
                           [int(s) for s in args.seeds.split(",")], epochs=args.epochs)
    for p, accs in res["T1"].items():
        print(f"P={p:<4d} T=1   mean {np.mean(accs):.4f}  seeds {accs}")
    print(f"P=10   T=25  mean {np.mean(res['baseline']):.4f}  seeds {res['baseline']}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"T1": {str(k): v for k, v in res["T1"].items()},
                       "baseline": res["baseline"]}, f, indent=2)


if __name__ == "__main__":
    main()
