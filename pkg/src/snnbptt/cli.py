"""Command-line entry point: train, bench, sweep, gradcheck, fetch-data."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import bench, data
from .autograd import TimeSplit
from .config import KEYS, ConfigFileError, dump_config, read_config, resolve, spec_from_values
from .gradcheck import TINY_NETS, gradcheck, tiny_spec
from .model import build
from .train import AdamWConfig, AdamWState, evaluate, train_epoch

log = logging.getLogger("snnbptt")

NETWORK_FLAGS = ("net", "layers", "input-shape", "neuron", "precision", "surrogate", "time-steps",
                 "population", "hidden-width", "kernel-n1", "kernel-n2", "beta", "alpha",
                 "threshold", "detach-reset", "encoding")
DATA_FLAGS = ("dataset", "data-dir", "subset-n", "test-subset-n")
TRAIN_FLAGS = ("epochs", "batch-size", "seed", "lr", "weight-decay", "beta1", "beta2", "eps")
BENCH_FLAGS = ("repeats", "warmup", "batches-per-repeat")


class CLIError(Exception):
    pass


def _add(parser: argparse.ArgumentParser, keys: Sequence[str]) -> None:
    for key in keys:
        spec = KEYS[key]
        kw = dict(dest=key.replace("-", "_"), default=None, help=spec.help)
        if spec.choices:
            kw["choices"] = spec.choices
        parser.add_argument(f"--{key}", type=str, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snnbptt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network, append per-epoch rows to a CSV")
    p.add_argument("--config", help="key=value config file")
    _add(p, NETWORK_FLAGS + DATA_FLAGS + TRAIN_FLAGS + ("out",))

    p = sub.add_parser("bench", help="measure training throughput of one config")
    p.add_argument("--config")
    _add(p, NETWORK_FLAGS + DATA_FLAGS + TRAIN_FLAGS + BENCH_FLAGS + ("out",))

    p = sub.add_parser("sweep", help="sweep one axis, one CSV row per value")
    p.add_argument("--config")
    _add(p, NETWORK_FLAGS + DATA_FLAGS + TRAIN_FLAGS + BENCH_FLAGS + ("axis", "values", "out", "plot"))

    p = sub.add_parser("gradcheck", help="finite-difference check in smooth test mode")
    p.add_argument("--net", choices=TINY_NETS, default="dsnn-tiny")
    p.add_argument("--t", "--time-steps", dest="time_steps", type=int, default=3)
    p.add_argument("--neuron", choices=("lif", "cuba", "rlif"), default="lif")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)

    p = sub.add_parser("fetch-data", help="download and verify a dataset")
    p.add_argument("--dataset", choices=("mnist", "cifar10"), default="mnist")
    p.add_argument("--data-dir", dest="data_dir", default=None)
    return parser


def effective_config(args: argparse.Namespace) -> dict:
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    flags = {}
    for key in KEYS:
        raw = getattr(args, key.replace("-", "_"), None)
        if raw is not None:
            try:
                flags[key] = KEYS[key].parse(raw)
            except ValueError as exc:
                raise CLIError(f"--{key}: {exc}") from None
    return resolve(file_values, flags)


def _bench_config(values: dict, default_epochs: int) -> bench.BenchConfig:
    surrogate = {"fast-sigmoid": "fast_sigmoid", "ste": "straight_through",
                 "smooth": "smooth_test_mode"}[values["surrogate"]]
    return bench.BenchConfig(
        network=values["net"], neuron_model=values["neuron"], precision=values["precision"],
        batch_size=values["batch-size"], hidden_width=values["hidden-width"],
        kernel_n1=values["kernel-n1"], kernel_n2=values["kernel-n2"],
        time_steps=values["time-steps"], population=values["population"] or 10,
        epochs=default_epochs if values["epochs"] is None else values["epochs"],
        repeats=values["repeats"], seed=values["seed"], dataset=values["dataset"],
        surrogate=surrogate, warmup=values["warmup"],
        batches_per_repeat=values["batches-per-repeat"], lr=values["lr"],
        weight_decay=values["weight-decay"], beta=values["beta"], alpha=values["alpha"],
        u_thr=values["threshold"], encoding=values["encoding"])


def _echo(values: dict, out: Optional[str]) -> None:
    text = dump_config(values)
    sys.stdout.write("# effective config\n" + text + "\n")
    if out:
        Path(str(out) + ".ini").write_text(text)


def _load(values: dict, split: str, limit_key: str, required: bool = True):
    try:
        return data.load_dataset(values["dataset"], split, values["data-dir"], values[limit_key])
    except FileNotFoundError as exc:
        if required:
            raise CLIError(str(exc)) from None
        return None


def cmd_train(values: dict) -> int:
    values = dict(values)
    if values["epochs"] is None:
        values["epochs"] = 1
    spec = spec_from_values(values)
    train_set = _load(values, "train", "subset-n")
    test_set = _load(values, "test", "test-subset-n")
    cfg = _bench_config(values, 1)
    params = build(spec, values["seed"])
    state = AdamWState(AdamWConfig(values["lr"], values["beta1"], values["beta2"], values["eps"],
                                   values["weight-decay"]))
    out = values["out"]
    _echo(values, out)
    for epoch in range(values["epochs"]):
        timer = TimeSplit()
        params, m = train_epoch(params, train_set, spec, state, values["batch-size"],
                                seed=values["seed"] + epoch, timer=timer)
        acc, test_loss = evaluate(params, spec, test_set)
        walls = np.asarray(m.batch_wallclocks)
        mean = float(walls.mean())
        rec = bench.BenchRecord(
            cfg.replace(epochs=epoch + 1), mean, float(walls.std(ddof=1)) if len(walls) > 1 else 0.0,
            values["batch-size"] / mean, timer.neuronal / len(walls), timer.synaptic / len(walls),
            loss=m.loss, accuracy=acc)
        print(f"epoch {epoch + 1}: train loss {m.loss:.4f} train acc {m.accuracy:.4f} "
              f"test loss {test_loss:.4f} test acc {acc:.4f} ({m.wallclock:.1f}s, "
              f"{rec.images_per_s:.1f} img/s)")
        if out:
            bench.emit_csv([rec], out, append=True)
    return 0


def _print_records(records) -> None:
    print(f"{'config_id':12}  {'img/s':>10}  {'wall s':>9}  {'std':>9}  {'neur s':>8}  "
          f"{'syn s':>8}  {'acc':>6}")
    for r in records:
        if r.error:
            print(f"{r.config.config_id:12}  ERROR {r.error}")
            continue
        acc = "" if r.accuracy is None else f"{r.accuracy:.4f}"
        print(f"{r.config.config_id:12}  {r.images_per_s:10.1f}  {r.wallclock_mean_s:9.4f}  "
              f"{r.wallclock_std_s:9.4f}  {r.neuronal_time_s:8.4f}  {r.synaptic_time_s:8.4f}  "
              f"{acc:>6}")


def _bench_data(values: dict, cfg: bench.BenchConfig):
    needs = cfg.epochs > 0
    train_set = _load(values, "train", "subset-n", required=needs)
    test_set = _load(values, "test", "test-subset-n", required=needs) if needs else None
    if train_set is None:
        log.warning("no %s data found; timing on synthetic inputs", values["dataset"])
    return train_set, test_set


def cmd_bench(values: dict) -> int:
    cfg = _bench_config(values, 0)
    train_set, test_set = _bench_data(values, cfg)
    _echo(values, values["out"])
    rec = bench.measure_throughput(cfg, train_set, test_set)
    _print_records([rec])
    if values["out"]:
        bench.emit_csv([rec], values["out"])
    return 0


def cmd_sweep(values: dict) -> int:
    if not values["axis"]:
        raise CLIError("sweep needs --axis")
    if not values["values"]:
        raise CLIError("sweep needs --values")
    axis = values["axis"].replace("-", "_")
    points = [v.strip() for v in values["values"].split(",") if v.strip()]
    cfg = _bench_config(values, 0)
    train_set, test_set = _bench_data(values, cfg)
    _echo(values, values["out"])
    records = bench.sweep(axis, points, cfg, train_set, test_set)
    _print_records(records)
    if values["out"]:
        bench.emit_csv(records, values["out"])
        if values["plot"]:
            bench.plot_csv(values["out"], values["plot"], x=axis)
    failed = [r for r in records if r.error]
    return 1 if failed else 0


def cmd_gradcheck(args) -> int:
    res = gradcheck(tiny_spec(args.net, args.time_steps, args.neuron), seed=args.seed)
    for name, err in res.per_param.items():
        print(f"  {name:6} max rel. error {err:.3e}")
    ok = res.max_rel_error <= args.tolerance
    print(f"{args.net} T={args.time_steps} {args.neuron}: {res.n_params} parameters, "
          f"max rel. error {res.max_rel_error:.3e} ({'PASS' if ok else 'FAIL'} at {args.tolerance:g})")
    return 0 if ok else 1


def cmd_fetch(args) -> int:
    fetch = data.fetch_mnist if args.dataset == "mnist" else data.fetch_cifar10
    path = fetch(args.data_dir)
    print(f"{args.dataset} ready in {path}")
    return 0


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "fetch-data":
            return cmd_fetch(args)
        values = effective_config(args)
        return {"train": cmd_train, "bench": cmd_bench, "sweep": cmd_sweep}[args.command](values)
    except (CLIError, ConfigFileError, bench.ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
