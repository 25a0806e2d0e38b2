import csv

import numpy as np
import pytest

from trafficlens import bench
from trafficlens.errors import NoUnits, TooFewSamples
from trafficlens.forest import ForestConfig
from trafficlens.pcap import read_packets
from trafficlens.report import build_paired, render, resolve_captures, run_report, timing_table, write_report_csv
from trafficlens.synth import write_demo_corpus
from trafficlens.training import TrainConfig


def test_bench_stats_fields():
    s = bench.BenchStats([1.0, 2.0, 3.0, 10.0], 5)
    assert s.p50_ms == 2.5 and s.mean_ms == 4.0 and s.reps == 4
    assert s.p95_ms == pytest.approx(np.percentile([1, 2, 3, 10], 95))
    assert s.stdev_ms > 0
    assert "p50=" in s.format() and "unit=ms/packet" in s.format()


def test_warm_up_excluded_and_min_reps():
    calls = []

    def fn():
        calls.append(1)

    s = bench.time_passes(fn, 10, 3, "ms/packet")
    assert len(calls) == 4 and s.reps == 3
    with pytest.raises(ValueError):
        bench.time_passes(fn, 10, 2, "ms/packet")


def test_errors():
    with pytest.raises(NoUnits):
        bench.bench_extraction([], 3)
    with pytest.raises(TooFewSamples):
        bench.bench_inference(lambda i: i, 99, 3)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    manifest = write_demo_corpus(d, sessions_per_class=25, seed=5)
    return d, manifest


def test_paired_dataset_alignment(corpus):
    d, manifest = corpus
    caps = resolve_captures([str(d / "*.pcap")], manifest)
    data = build_paired(caps)
    assert len(data.units) == len(data.images) == len(data.features)
    assert data.class_names == ["benign", "synflood", "udpflood"]
    # packet indices are unique across files
    assert len({p.index for p in data.packets}) == len(data.packets)
    total = sum(len(read_packets(p)) for p, _ in caps)
    assert len(data.packets) == total


def test_unlabelled_capture_is_an_error(corpus, tmp_path):
    d, _ = corpus
    man = tmp_path / "m.tsv"
    man.write_text(f"{d}/benign.pcap\tbenign\n")
    with pytest.raises(ValueError):
        resolve_captures([str(d / "*.pcap")], man)


def test_report_end_to_end(corpus, tmp_path):
    d, manifest = corpus
    data = build_paired(resolve_captures([str(d / "*.pcap")], manifest))
    res = run_report(data, TrainConfig(epochs=2, batch_size=64), ForestConfig(n_trees=10), reps=3)
    n = len(data.units)
    assert sum(res.split_sizes) == n
    assert res.cnn_metrics.support == res.forest_metrics.support
    assert sum(res.cnn_metrics.support) == len(res.test_indices)
    text = render(res)
    for row in ("Extraction Time (ms)", "Inference Time (ms)", "Total Time (ms)", "Random Forest", "Deep Learning"):
        assert row in text
    assert "26.001" in text and "2.9" in text
    write_report_csv(res, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    sections = {r["section"] for r in rows}
    assert {"metrics", "timing_extraction", "timing_inference", "reference_total"} <= sections
    p50 = {(r["section"], r["model"]): float(r["value"]) for r in rows if r["metric"] == "p50_ms"}
    assert p50[("timing_extraction", "cnn")] == res.timings["extraction_cnn"].p50_ms


def test_timing_table_sums():
    t = {k: bench.BenchStats([v] * 3, 10) for k, v in
         (("extraction_forest", 1.0), ("extraction_cnn", 0.5), ("inference_forest", 0.25), ("inference_cnn", 2.0))}
    table = timing_table(t)
    total = [line for line in table.splitlines() if line.startswith("Total")][0]
    assert "1.250000" in total and "2.500000" in total
