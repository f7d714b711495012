"""Run the throughput sweeps (batch size, width, kernels, neuron, precision, T) to CSV.

    python scripts/run_sweeps.py --out-dir results/ --repeats 5
"""
import argparse
import logging
from pathlib import Path

from snnbptt import bench
from snnbptt.bench import BenchConfig

SWEEPS = {
    "batch_size": ("dsnn", [16, 32, 64, 128, 256]),
    "hidden_width": ("dsnn", [100, 250, 500, 1000, 2000]),
    "kernel_depths": ("csnn", ["6x16", "12x32", "12x64"]),
    "neuron_model": ("dsnn", ["lif", "cuba", "rlif"]),
    "precision": ("dsnn", ["half", "single", "double"]),
    "time_steps": ("dsnn", [1, 5, 10, 25]),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--axes", default=",".join(SWEEPS))
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--time-steps", type=int, default=25)
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for axis in args.axes.split(","):
        net, values = SWEEPS[axis]
        base = BenchConfig(network=net, repeats=args.repeats, warmup=args.warmup,
                           time_steps=args.time_steps)
        records = bench.sweep(axis, values, base)
        path = bench.emit_csv(records, out_dir / f"{axis}.csv")
        print(f"{axis}: {len(records)} rows -> {path}")
        if args.plot:
            bench.plot_csv(path, out_dir / f"{axis}.png", x=axis)


if __name__ == "__main__":
    main()
