"""End-to-end comparison: CNN on traffic images vs random forest on flow features.

Both models see the same units and the same train/validation/test partition.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bench
from .errors import NoUnits
from .features import flow_vector
from .forest import Forest, ForestConfig, fit
from .images import ImageDataset, units_to_images
from .metrics import MetricsReport, evaluate
from .nn.model import ModelState
from .pcap import ParsedPacket, read_packets
from .split import TrimConfig, TrafficUnit, UnitMode, clean_units, expand_captures, label_for, load_manifest, split_units
from .training import TrainConfig, shuffle_split, train_cnn

log = logging.getLogger(__name__)


@dataclass
class PairedDataset:
    images: ImageDataset
    features: np.ndarray
    units: list[TrafficUnit]
    packets: list[ParsedPacket]

    @property
    def labels(self) -> np.ndarray:
        return self.images.labels()

    @property
    def class_names(self) -> list[str]:
        return self.images.class_names


def resolve_captures(patterns: Sequence[str], manifest_path: str | Path) -> list[tuple[Path, str]]:
    """Expand capture globs and attach manifest labels; unlabeled files are an error."""
    manifest = load_manifest(manifest_path)
    out = []
    for pattern in patterns:
        for path in expand_captures(pattern):
            label = label_for(path, manifest)
            if label is None:
                raise ValueError(f"{path}: no label in manifest {manifest_path}")
            out.append((path, label))
    if not out:
        raise NoUnits(f"no capture files match {list(patterns)}")
    return out


def build_paired(captures: Sequence[tuple[str | Path, str]], mode: UnitMode = UnitMode(), *,
                 cfg: TrimConfig = TrimConfig(), anonymize: bool = False, dedup: bool = True) -> PairedDataset:
    """One image and one feature vector per surviving unit, in the same order."""
    units, all_packets, vectors = [], [], []
    for path, label in captures:
        packets = read_packets(path)
        # renumber so packet-mode keys stay unique across files when timing
        offset = len(all_packets)
        all_packets += [replace(p, index=offset + p.index) for p in packets]
        file_units = split_units(packets, mode, label, str(path), anonymize=anonymize, allow_empty=True)
        units += file_units
        by_index = {p.index: p for p in packets}
        vectors += [flow_vector([by_index[i] for i in u.members]) for u in file_units]
    kept = clean_units(units, cfg, dedup=dedup)
    if not kept:
        raise NoUnits("no units survived splitting and cleaning")
    vec_of = {id(u): v for u, v in zip(units, vectors)}
    names = sorted({u.label for u in kept})
    images = ImageDataset(units_to_images(kept, names, cfg), names)
    X = np.stack([vec_of[id(u)] for u in kept])
    return PairedDataset(images, X, kept, all_packets)


@dataclass
class ReportResult:
    cnn: ModelState
    forest: Forest
    cnn_metrics: MetricsReport
    forest_metrics: MetricsReport
    timings: dict[str, bench.BenchStats]
    split_sizes: tuple[int, int, int]
    test_indices: np.ndarray
    best_epoch: int


def _latency_rows(n: int, minimum: int = 100, cap: int = 300) -> np.ndarray:
    reps = -(-minimum // n) if n < minimum else 1
    return np.tile(np.arange(n), reps)[:max(minimum, min(n, cap))]


def run_report(data: PairedDataset, train_cfg: TrainConfig = TrainConfig(), forest_cfg: ForestConfig | None = None,
               *, mode: UnitMode = UnitMode(), trim: TrimConfig = TrimConfig(), reps: int = 5) -> ReportResult:
    forest_cfg = forest_cfg or ForestConfig(seed=train_cfg.seed)
    y = data.labels
    n_classes = len(data.class_names)
    tr, va, te = shuffle_split(len(y), train_cfg)
    x = data.images.tensors()
    result = train_cnn(x[tr], y[tr], x[va], y[va], n_classes, train_cfg)
    forest = fit(data.features[tr], y[tr], forest_cfg, n_classes=n_classes, class_names=data.class_names)
    _, cnn_metrics = evaluate(result.best, x[te], y[te], data.class_names)
    _, forest_metrics = evaluate(forest, data.features[te], y[te], data.class_names)
    rows = _latency_rows(len(y))
    timings = {
        "extraction_forest": bench.bench_extraction(data.packets, reps, mode.granularity),
        "extraction_cnn": bench.bench_image_conversion(data.packets, reps, mode, trim),
        "inference_forest": bench.bench_forest_inference(forest, data.features[rows], reps),
        "inference_cnn": bench.bench_cnn_inference(result.best, x[rows], reps),
    }
    return ReportResult(result.best, forest, cnn_metrics, forest_metrics, timings, (len(tr), len(va), len(te)), te,
                        result.best_epoch)


def timing_table(timings: dict[str, bench.BenchStats]) -> str:
    """Extraction / inference / total per method, with the reference figures alongside."""
    ref = bench.REFERENCE_TIMINGS
    ext_f, ext_c = timings["extraction_forest"].p50_ms, timings["extraction_cnn"].p50_ms
    inf_f, inf_c = timings["inference_forest"].p50_ms, timings["inference_cnn"].p50_ms
    rows = [
        ("Extraction Time (ms)", ext_f, ext_c, ref["extraction"]),
        ("Inference Time (ms)", inf_f, inf_c, ref["inference"]),
        ("Total Time (ms)", ext_f + inf_f, ext_c + inf_c, ref["total"]),
    ]
    head = f"{'Methodology':<22}| {'Random Forest':>14} {'Deep Learning':>14} | {'ref RF':>8} {'ref DL':>8}"
    lines = [head, "-" * len(head)]
    for name, f, c, r in rows:
        lines.append(f"{name:<22}| {f:>14.6f} {c:>14.6f} | {r['forest']:>8g} {r['cnn']:>8g}")
    lines.append("Reference columns are the published figures (different hardware); they are not targets.")
    return "\n".join(lines)


def metrics_table(cnn: MetricsReport, forest: MetricsReport) -> str:
    head = f"{'Features':<14} {'ACC (%)':>9} {'REC (%)':>9} {'PRE (%)':>9} {'F1 (%)':>9}"
    lines = [head, "-" * len(head)]
    for name, m in (("Automatic", cnn), ("Hand-crafted", forest)):
        lines.append(f"{name:<14} {100 * m.accuracy:>9.2f} {100 * m.macro_recall:>9.2f} "
                     f"{100 * m.macro_precision:>9.2f} {100 * m.macro_f1:>9.2f}")
    lines.append("REC/PRE/F1 are macro averages over classes.")
    return "\n".join(lines)


def render(result: ReportResult) -> str:
    parts = [
        f"split train/validation/test = {result.split_sizes[0]}/{result.split_sizes[1]}/{result.split_sizes[2]}"
        f" (CNN best epoch {result.best_epoch})",
        "",
        metrics_table(result.cnn_metrics, result.forest_metrics),
        "",
        result.cnn_metrics.format("Automatic features (CNN), per class:"),
        "",
        result.forest_metrics.format("Hand-crafted features (random forest), per class:"),
        "",
        timing_table(result.timings),
    ]
    return "\n".join(parts) + "\n"


def write_report_csv(result: ReportResult, path: str | Path) -> None:
    """Long format: section, model, metric, class, value."""
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(["section", "model", "metric", "class", "value"])
        for model, m in (("cnn", result.cnn_metrics), ("forest", result.forest_metrics)):
            w.writerow(["metrics", model, "accuracy", "", repr(m.accuracy)])
            w.writerow(["metrics", model, "macro_precision", "", repr(m.macro_precision)])
            w.writerow(["metrics", model, "macro_recall", "", repr(m.macro_recall)])
            w.writerow(["metrics", model, "macro_f1", "", repr(m.macro_f1)])
            for row in m.rows():
                for metric in ("precision", "recall", "f1", "support"):
                    w.writerow(["metrics", model, metric, row["cls"], repr(row[metric])])
        for key, stats in result.timings.items():
            section, model = key.split("_")
            for stat, value in stats.as_dict().items():
                if stat != "unit":
                    w.writerow([f"timing_{section}", model, stat, "", repr(value)])
        for section, ref in bench.REFERENCE_TIMINGS.items():
            for model, value in ref.items():
                w.writerow([f"reference_{section}", model, "ms", "", repr(value)])

