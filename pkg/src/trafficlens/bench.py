"""Wall-clock timing of feature extraction, image conversion and inference.

Each benchmark runs one untimed warm-up pass, then ``reps`` timed passes;
figures are milliseconds per packet (or per sample) for each pass.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NoUnits, TooFewSamples
from .features import extract_flow_features
from .images import bytes_to_image, normalize
from .nn.model import forward
from .pcap import ParsedPacket
from .split import TrimConfig, UnitMode, split_units, trim_pad

# Published reference figures (ms); hardware-specific, printed for comparison only.
REFERENCE_TIMINGS = {
    "extraction": {"forest": 26.0, "cnn": 0.3},
    "inference": {"forest": 0.001, "cnn": 2.6},
    "total": {"forest": 26.001, "cnn": 2.9},
}


@dataclass
class BenchStats:
    per_rep_ms: list[float]
    n_items: int
    unit: str = "ms/packet"
    mean_ms: float = field(init=False)
    p50_ms: float = field(init=False)
    p95_ms: float = field(init=False)
    stdev_ms: float = field(init=False)

    def __post_init__(self):
        arr = np.asarray(self.per_rep_ms, dtype=np.float64)
        self.mean_ms = float(arr.mean())
        self.p50_ms = float(np.median(arr))
        self.p95_ms = float(np.percentile(arr, 95))
        self.stdev_ms = float(statistics.stdev(arr)) if len(arr) > 1 else 0.0

    @property
    def reps(self) -> int:
        return len(self.per_rep_ms)

    def as_dict(self) -> dict:
        return dict(unit=self.unit, n_items=self.n_items, reps=self.reps, mean_ms=self.mean_ms,
                    p50_ms=self.p50_ms, p95_ms=self.p95_ms, stdev_ms=self.stdev_ms)

    def format(self) -> str:
        return (f"mean={self.mean_ms:.6f} p50={self.p50_ms:.6f} p95={self.p95_ms:.6f} "
                f"stdev={self.stdev_ms:.6f} unit={self.unit} items={self.n_items} reps={self.reps}")


def time_passes(fn: Callable[[], object], n_items: int, reps: int, unit: str) -> BenchStats:
    if reps < 3:
        raise ValueError("at least 3 repetitions are required")
    fn()  # warm-up, excluded
    per_rep = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        per_rep.append((time.perf_counter() - t0) * 1000.0 / n_items)
    return BenchStats(per_rep, n_items, unit)


def bench_extraction(packets: Sequence[ParsedPacket], reps: int = 5, granularity: str = "session") -> BenchStats:
    """Hand-crafted path: per-flow accumulate + finalize over every packet."""
    if not packets:
        raise NoUnits("capture has no packets")
    return time_passes(lambda: extract_flow_features(packets, granularity), len(packets), reps, "ms/packet")


def convert_to_images(packets: Sequence[ParsedPacket], mode: UnitMode = UnitMode(),
                      cfg: TrimConfig = TrimConfig()) -> np.ndarray:
    """Image path: split, trim/pad, byte-to-pixel, normalize."""
    units = split_units(packets, mode)
    pixels = np.stack([bytes_to_image(trim_pad(u.bytes, cfg)).pixels for u in units])
    return normalize(pixels)


def bench_image_conversion(packets: Sequence[ParsedPacket], reps: int = 5, mode: UnitMode = UnitMode(),
                           cfg: TrimConfig = TrimConfig()) -> BenchStats:
    if not packets:
        raise NoUnits("capture has no packets")
    return time_passes(lambda: convert_to_images(packets, mode, cfg), len(packets), reps, "ms/packet")


def bench_inference(predict_one: Callable[[int], object], n_samples: int, reps: int = 5) -> BenchStats:
    """Single-sample latency: ``predict_one(i)`` is called for every sample i in each pass."""
    if n_samples < 100:
        raise TooFewSamples(f"need >= 100 samples for stable timing, got {n_samples}")

    def run():
        for i in range(n_samples):
            predict_one(i)

    return time_passes(run, n_samples, reps, "ms/sample")


def bench_cnn_inference(state, images: np.ndarray, reps: int = 5) -> BenchStats:
    images = np.asarray(images, dtype=state.dtype)
    return bench_inference(lambda i: forward(state, images[i:i + 1])[0].argmax(), len(images), reps)


def bench_forest_inference(forest, X: np.ndarray, reps: int = 5) -> BenchStats:
    X = np.asarray(X, dtype=np.float64)
    return bench_inference(lambda i: forest.predict(X[i:i + 1]), len(X), reps)
