import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snnbptt import bench
from snnbptt.bench import BenchConfig, BenchRecord, ConfigError
from snnbptt.data import Dataset

FAST = dict(hidden_width=16, batch_size=8, time_steps=2, repeats=3, warmup=1)


def small_mnist_like(n=48, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((n, 1, 28, 28), dtype=np.float32), rng.integers(0, 10, n))


def test_csv_header_exact():
    assert ",".join(bench.CSV_COLUMNS) == (
        "config_id,network,neuron_model,precision,batch_size,hidden_width,kernel_n1,kernel_n2,"
        "time_steps,population,epochs,repeat_mean_wallclock_s,wallclock_std_s,images_per_s,"
        "neuronal_time_s,synaptic_time_s,loss,accuracy,seed")


def test_config_validation():
    with pytest.raises(ConfigError):
        BenchConfig(time_steps=0)
    with pytest.raises(ConfigError):
        BenchConfig(population=15)
    with pytest.raises(ConfigError):
        BenchConfig(network="resnet")
    with pytest.raises(ValueError):
        BenchConfig(precision="quad")
    assert BenchConfig(precision="fp16").precision == "half"


def test_config_id_stable_and_distinct():
    a, b = BenchConfig(), BenchConfig()
    assert a.config_id == b.config_id and len(a.config_id) == 12
    assert a.config_id != a.replace(batch_size=64).config_id


def test_measure_throughput_identity_and_std():
    rec = bench.measure_throughput(BenchConfig(**FAST))
    assert len(rec.wallclocks) == 3
    assert rec.images_per_s * rec.wallclock_mean_s == pytest.approx(8, rel=1e-12)
    assert rec.wallclock_std_s == pytest.approx(np.std(rec.wallclocks, ddof=1))
    assert rec.wallclock_std_s > 0
    assert rec.neuronal_time_s > 0 and rec.synaptic_time_s > 0
    assert rec.neuronal_time_s + rec.synaptic_time_s <= rec.wallclock_mean_s
    assert rec.accuracy is None


def test_measure_throughput_with_training():
    ds = small_mnist_like()
    rec = bench.measure_throughput(BenchConfig(epochs=1, **FAST), ds, ds)
    assert 0 <= rec.accuracy <= 1 and rec.loss > 0


def test_accuracy_run_needs_data():
    with pytest.raises(ConfigError):
        bench.measure_throughput(BenchConfig(epochs=1, **FAST))


def test_time_split_for_csnn():
    cfg = BenchConfig(network="csnn", kernel_n1=2, kernel_n2=3, batch_size=4, time_steps=2,
                      repeats=2, warmup=0, neuron_model="rlif")
    neuronal, synaptic = bench.time_split(cfg)
    assert neuronal > 0 and synaptic > 0


def test_axis_parsing():
    assert bench.parse_axis_value("kernel_depths", "12x64") == (12, 64)
    assert bench.parse_axis_value("time_steps", "5") == 5
    cfg = bench.config_at(BenchConfig(), "kernel_depths", "4x8")
    assert (cfg.kernel_n1, cfg.kernel_n2) == (4, 8)
    with pytest.raises(ConfigError):
        bench.parse_axis_value("learning_rate", "1")
    with pytest.raises(ConfigError):
        bench.parse_axis_value("kernel_depths", "12")


def test_sweep_batch_sizes():
    values = [8, 16, 32, 64, 128]
    recs = bench.sweep("batch_size", values, BenchConfig(hidden_width=8, time_steps=1, repeats=2,
                                                          warmup=0))
    assert [r.config.batch_size for r in recs] == values
    assert len({r.config.seed for r in recs}) == 1
    for r in recs:
        assert r.images_per_s * r.wallclock_mean_s == pytest.approx(r.config.batch_size, rel=1e-9)


def test_sweep_population_records_accuracy():
    ds = small_mnist_like(64)
    recs = bench.sweep("population", [10, 100, 500], BenchConfig(epochs=1, **{**FAST, "time_steps": 1}),
                       ds, ds)
    assert [r.config.population for r in recs] == [10, 100, 500]
    assert all(r.accuracy is not None and r.error is None for r in recs)


def test_sweep_records_errors_and_continues():
    # batch 4096 exceeds the 16-sample dataset, so that point fails at run time
    recs = bench.sweep("batch_size", [8, 4096], BenchConfig(**FAST), small_mnist_like(16))
    assert recs[0].error is None
    assert "ConfigError" in recs[1].error
    assert recs[1].row()["images_per_s"] == ""


def test_sweep_empty_values():
    with pytest.raises(ConfigError):
        bench.sweep("batch_size", [], BenchConfig())


def test_parallel_sweep_keeps_order():
    recs = bench.sweep("neuron_model", ["lif", "cuba", "rlif"], BenchConfig(**FAST), parallel=True,
                       workers=2)
    assert [r.config.neuron_model for r in recs] == ["lif", "cuba", "rlif"]


def fake_record(i, **kw):
    cfg = BenchConfig(batch_size=8 * (i + 1), seed=3)
    mean = 0.01 * (i + 1)
    return BenchRecord(cfg, mean, 0.001, cfg.batch_size / mean, 0.002, 0.005, **kw)


def test_emit_csv_counts(tmp_path):
    assert (bench.emit_csv([], tmp_path / "e.csv")).read_text().count("\n") == 1
    path = bench.emit_csv([fake_record(i) for i in range(3)], tmp_path / "r.csv")
    assert len(path.read_text().splitlines()) == 4
    bench.emit_csv([fake_record(3)], path, append=True)
    rows = bench.read_csv(path)
    assert len(rows) == 4 and rows[0]["loss"] == "" and rows[3]["batch_size"] == "32"
    with open(path, newline="") as f:
        assert tuple(next(csv.reader(f))) == bench.CSV_COLUMNS


def test_emit_csv_unwritable(tmp_path):
    with pytest.raises(OSError):
        bench.emit_csv([], tmp_path / "missing" / "x.csv")


@given(st.integers(1, 512), st.floats(1e-5, 10.0))
def test_row_throughput_identity(batch, mean):
    cfg = BenchConfig(batch_size=batch)
    row = BenchRecord(cfg, mean, 0.0, batch / mean, 0.0, 0.0).row()
    ips, wall = float(row["images_per_s"]), float(row["repeat_mean_wallclock_s"])
    assert abs(ips * wall - batch) <= 1e-6 * batch


def test_rerun_identical_non_timing_columns(tmp_path):
    ds = small_mnist_like(32)
    timing = {"repeat_mean_wallclock_s", "wallclock_std_s", "images_per_s", "neuronal_time_s",
              "synaptic_time_s"}
    rows = []
    for k in range(2):
        rec = bench.measure_throughput(BenchConfig(epochs=1, **FAST), ds, ds)
        rows.append(bench.read_csv(bench.emit_csv([rec], tmp_path / f"{k}.csv"))[0])
    assert {k: v for k, v in rows[0].items() if k not in timing} == \
        {k: v for k, v in rows[1].items() if k not in timing}


def test_plot_csv(tmp_path):
    path = bench.emit_csv([fake_record(i, accuracy=0.1 * i) for i in range(3)], tmp_path / "p.csv")
    for suffix in ("png", "svg"):
        out = bench.plot_csv(path, tmp_path / f"p.{suffix}", x="batch_size")
        assert out.stat().st_size > 0


def test_read_csv_rejects_foreign_header(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        bench.read_csv(tmp_path / "x.csv")
