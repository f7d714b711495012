"""Plain-text key=value config files with sections.

Keys are the long CLI flag names without the leading dashes, so every flag
has a file equivalent::

    [network]
    net = dsnn
    neuron = lif
    time-steps = 25

    [train]
    epochs = 1
    batch-size = 128

Resolution order is built-in default < config file < command-line flag.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

from .model import NetworkSpec, parse_layers


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s):
    if s is None or str(s).strip().lower() in ("", "none", "all"):
        return None
    return int(s)


def _shape(s) -> tuple[int, ...]:
    if isinstance(s, (tuple, list)):
        return tuple(int(d) for d in s)
    return tuple(int(d) for d in str(s).replace("x", ",").split(",") if d.strip())


@dataclass(frozen=True)
class Key:
    section: str
    parse: Callable[[Any], Any]
    default: Any
    choices: Optional[tuple] = None
    help: str = ""


KEYS: dict[str, Key] = {
    # network
    "net": Key("network", str, "dsnn", ("dsnn", "csnn"), "network family"),
    "layers": Key("network", str, None, None, "explicit layer notation, e.g. 5C12-MP2-5C64-MP2-10"),
    "input-shape": Key("network", _shape, None, None, "C,H,W (defaults from --dataset)"),
    "neuron": Key("network", str, "lif", ("lif", "cuba", "rlif"), "neuron model"),
    "precision": Key("network", str, "single", ("half", "single", "double"), "forward precision"),
    "surrogate": Key("network", str, "fast-sigmoid", ("fast-sigmoid", "ste", "smooth"),
                     "surrogate gradient"),
    "time-steps": Key("network", int, 25, None, "simulation steps T"),
    "population": Key("network", int, None, None, "output neurons, multiple of 10 (default 10)"),
    "hidden-width": Key("network", int, 1000, None, "DSNN hidden width"),
    "kernel-n1": Key("network", int, 12, None, "CSNN first kernel depth"),
    "kernel-n2": Key("network", int, 64, None, "CSNN second kernel depth"),
    "beta": Key("network", float, 0.9, None, "membrane decay"),
    "alpha": Key("network", float, 0.8, None, "synaptic current decay (cuba)"),
    "threshold": Key("network", float, 1.0, None, "firing threshold"),
    "detach-reset": Key("network", _bool, True, None, "no gradient through the reset term"),
    "encoding": Key("network", str, "constant_current", ("constant_current", "bernoulli_rate"),
                    "input encoding"),
    # data
    "dataset": Key("data", str, "mnist", ("mnist", "cifar10"), "dataset"),
    "data-dir": Key("data", str, None, None, "dataset cache dir (env SNN_DATA_DIR)"),
    "subset-n": Key("data", _opt_int, None, None, "cap on training samples"),
    "test-subset-n": Key("data", _opt_int, None, None, "cap on test samples"),
    # train
    "epochs": Key("train", int, None, None, "training epochs (train: 1, bench/sweep: 0)"),
    "batch-size": Key("train", int, 128, None, "minibatch size"),
    "seed": Key("train", int, 0, None, "random seed"),
    "lr": Key("train", float, 1e-3, None, "AdamW learning rate"),
    "weight-decay": Key("train", float, 0.01, None, "AdamW decoupled weight decay"),
    "beta1": Key("train", float, 0.9, None, "AdamW first-moment decay"),
    "beta2": Key("train", float, 0.999, None, "AdamW second-moment decay"),
    "eps": Key("train", float, 1e-8, None, "AdamW epsilon"),
    # bench
    "axis": Key("bench", str, None, None, "sweep axis"),
    "values": Key("bench", str, None, None, "comma-separated sweep values"),
    "repeats": Key("bench", int, 5, None, "timing repeats"),
    "warmup": Key("bench", int, 3, None, "untimed warmup batches"),
    "batches-per-repeat": Key("bench", int, 1, None, "timed batches per repeat"),
    "out": Key("bench", str, None, None, "output CSV path"),
    "plot": Key("bench", str, None, None, "optional PNG/SVG plot path"),
}


class ConfigFileError(ValueError):
    pass


def parse_value(key: str, raw):
    spec = KEYS[key]
    if raw is None:
        return None
    value = spec.parse(raw)
    if spec.choices and value not in spec.choices:
        raise ConfigFileError(f"{key}: {value!r} not in {spec.choices}")
    return value


def read_config(path) -> dict[str, Any]:
    """Parse a config file into {key: typed value}; unknown keys are errors."""
    text = Path(path).read_text()
    return parse_config_text(text, str(path))


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigFileError(str(exc)) from None
    out: dict[str, Any] = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            norm = key.strip().replace("_", "-")
            if norm not in KEYS:
                raise ConfigFileError(f"{source}: unknown key {key!r} in [{section}]")
            if KEYS[norm].section != section:
                raise ConfigFileError(f"{source}: key {key!r} belongs in [{KEYS[norm].section}]")
            try:
                out[norm] = parse_value(norm, raw)
            except ValueError as exc:
                raise ConfigFileError(f"{source}: {exc}") from None
    return out


def resolve(file_values: dict[str, Any], flag_values: dict[str, Any]) -> dict[str, Any]:
    """default < file < flags (flags left at None do not override)."""
    eff = {k: spec.default for k, spec in KEYS.items()}
    eff.update({k: v for k, v in file_values.items() if v is not None})
    eff.update({k: v for k, v in flag_values.items() if v is not None and k in KEYS})
    return eff


def dump_config(values: dict[str, Any]) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for key, spec in KEYS.items():
        if key not in values or values[key] is None:
            continue
        if not cp.has_section(spec.section):
            cp.add_section(spec.section)
        v = values[key]
        if isinstance(v, tuple):
            v = ",".join(str(d) for d in v)
        cp.set(spec.section, key, str(v).lower() if isinstance(v, bool) else str(v))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


_SURROGATE_NAMES = {"fast-sigmoid": "fast_sigmoid", "ste": "straight_through",
                    "smooth": "smooth_test_mode"}


def spec_from_values(values: dict[str, Any]) -> NetworkSpec:
    from .bench import INPUT_SHAPES

    shape = values.get("input-shape") or INPUT_SHAPES[values.get("dataset") or "mnist"]
    common = dict(
        input_shape=shape,
        neuron_model=values["neuron"], time_steps=values["time-steps"],
        precision=values["precision"],
        surrogate=_SURROGATE_NAMES.get(values["surrogate"], values["surrogate"]),
        beta=values["beta"], alpha=values["alpha"], u_thr=values["threshold"],
        detach_reset=values["detach-reset"], encoding=values["encoding"],
    )
    if values.get("layers"):
        layers = parse_layers(values["layers"], shape)
        spec = NetworkSpec(layers=layers, **common)
        if values.get("population") is not None and values["population"] != spec.population:
            spec = spec.with_population(values["population"])
        return spec
    population = values.get("population") or 10
    if values["net"] == "dsnn":
        return NetworkSpec.dsnn(hidden=values["hidden-width"], population=population, **common)
    return NetworkSpec.csnn(n1=values["kernel-n1"], n2=values["kernel-n2"],
                            population=population, **common)


def spec_to_config(spec: NetworkSpec) -> str:
    """Serialize a NetworkSpec as a [network] section."""
    inverse = {v: k for k, v in _SURROGATE_NAMES.items()}
    values = {
        "layers": spec.notation(),
        "input-shape": spec.input_shape,
        "neuron": spec.neuron_model.value,
        "precision": spec.precision.value,
        "surrogate": inverse[spec.surrogate.value],
        "time-steps": spec.time_steps,
        "population": spec.population,
        "beta": repr(spec.beta),
        "alpha": repr(spec.alpha),
        "threshold": repr(spec.u_thr),
        "detach-reset": spec.detach_reset,
        "encoding": spec.encoding,
    }
    if spec.classes != 10:
        raise ConfigFileError("config files describe 10-class networks only")
    return dump_config(values)


def spec_from_config(source) -> NetworkSpec:
    """Inverse of `spec_to_config`; `source` is a path or the file text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).exists()):
        file_values = read_config(source)
    else:
        file_values = parse_config_text(str(source))
    return spec_from_values(resolve(file_values, {}))


__all__ = ["KEYS", "ConfigFileError", "dump_config", "parse_config_text", "read_config",
           "resolve", "spec_from_config", "spec_from_values", "spec_to_config"]
