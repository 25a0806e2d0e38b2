"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .errors import TrafficLensError
from .features import FEATURE_NAMES, extract_flow_features, read_features_csv, write_features_csv
from .forest import ForestConfig, fit, load_forest, save_forest
from .images import export_png, normalize, pcap_to_dataset, read_idx, read_idx_images, write_idx
from .metrics import evaluate
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .pcap import read_packets
from .report import build_paired, render, resolve_captures, run_report, write_report_csv
from .split import TrimConfig, UnitMode, expand_captures
from .training import TrainConfig, shuffle_split, train_cnn

log = logging.getLogger("trafficlens")

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off", ""}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def log_kv(event: str, **fields) -> None:
    log.info(" ".join([f"event={event}", *(f"{k}={v}" for k, v in fields.items())]))


def load_config(path: str | Path) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment. Keys use CLI flag names."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")


def _unit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("packet", "flow", "session"), default="session")
    p.add_argument("--layers", choices=("all", "l7"), default="all")
    p.add_argument("--bytes", type=int, default=784, help="trim/pad length (default 784)")
    p.add_argument("--anonymize", action="store_true", help="zero MAC and IP addresses before imaging")
    p.add_argument("--no-dedup", action="store_true", help="keep duplicate units")


def _capture_flags(p: argparse.ArgumentParser, manifest: bool = True) -> None:
    p.add_argument("--pcap", action="append", required=True, help="capture file or glob (repeatable)")
    if manifest:
        p.add_argument("--manifest", required=True, help="<glob>TAB<label> lines")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)


def _forest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-samples-split", type=int, default=2)
    p.add_argument("--features-per-split", type=int, default=None)


def build_parser() -> tuple[Parser, dict[tuple[str, ...], argparse.ArgumentParser]]:
    root = Parser(prog="trafficlens", description="Traffic-to-image CNN vs hand-crafted-feature random forest.")
    leaves: dict[tuple[str, ...], argparse.ArgumentParser] = {}
    sub = root.add_subparsers(dest="cmd", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("pcap2img", help="convert captures into an IDX image dataset")
    _capture_flags(p)
    _unit_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--png", action="store_true", help="also export every sample as PNG")
    leaves[("pcap2img",)] = p

    p = sub.add_parser("features", help="hand-crafted flow features to CSV")
    _capture_flags(p)
    p.add_argument("--mode", choices=("packet", "flow", "session"), default="session")
    p.add_argument("--out", required=True)
    leaves[("features",)] = p

    train = sub.add_parser("train", help="train a model")
    tsub = train.add_subparsers(dest="sub", metavar="MODEL")
    tsub.required = True
    p = tsub.add_parser("cnn", help="train the CNN on IDX images")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--names")
    _train_flags(p)
    p.add_argument("--out", default="model.tlnn", help="final checkpoint; best-validation goes to <out>.best")
    p.add_argument("--test-out", help="directory for the held-out test split (IDX)")
    leaves[("train", "cnn")] = p
    p = tsub.add_parser("forest", help="train the random forest on a feature CSV")
    p.add_argument("--features", required=True)
    _forest_flags(p)
    p.add_argument("--out", default="forest.tlrf")
    p.add_argument("--test-out", help="CSV path for the held-out test split")
    leaves[("train", "forest")] = p

    p = sub.add_parser("eval", help="metrics of a trained model on labelled data")
    p.add_argument("--checkpoint")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--names")
    p.add_argument("--forest")
    p.add_argument("--features")
    leaves[("eval",)] = p

    b = sub.add_parser("bench", help="timing harness")
    bsub = b.add_subparsers(dest="sub", metavar="WHAT")
    bsub.required = True
    p = bsub.add_parser("extract", help="ms/packet for feature extraction and image conversion")
    _capture_flags(p, manifest=False)
    _unit_flags(p)
    p.add_argument("--reps", type=int, default=5)
    leaves[("bench", "extract")] = p
    p = bsub.add_parser("infer", help="ms/sample single-sample inference latency")
    p.add_argument("--checkpoint")
    p.add_argument("--forest")
    p.add_argument("--images", help="IDX images to time on (default: random)")
    p.add_argument("--features", help="feature CSV to time on (default: random)")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--reps", type=int, default=5)
    leaves[("bench", "infer")] = p

    p = sub.add_parser("report", help="train both models on one split and print the comparison tables")
    _capture_flags(p)
    _unit_flags(p)
    _train_flags(p)
    _forest_flags(p)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--out-dir", required=True)
    leaves[("report",)] = p

    p = sub.add_parser("synth", help="write a small synthetic demo corpus with a manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sessions", type=int, default=120, help="sessions per class")
    leaves[("synth",)] = p

    for leaf in leaves.values():
        _common(leaf)
    return root, leaves


def _prescan(argv: list[str], leaves) -> tuple[tuple[str, ...] | None, str | None]:
    """Leaf command path and --config value, found before argparse runs."""
    words = [a for a in argv if not a.startswith("-")]
    path = None
    for depth in (2, 1):
        if tuple(words[:depth]) in leaves:
            path = tuple(words[:depth])
            break
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return path, config


def parse_args(argv: list[str]) -> argparse.Namespace:
    root, leaves = build_parser()
    path, config = _prescan(argv, leaves)
    if path is None or config is None:
        return root.parse_args(argv)
    leaf = leaves[path]
    actions = {a.dest: a for a in leaf._actions}
    defaults = {}
    for key, value in load_config(config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            leaf.error(f"unknown config key {key!r} in {config}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in TRUE_WORDS | FALSE_WORDS:
                leaf.error(f"config key {key!r} expects true/false, got {value!r}")
            defaults[key] = value.lower() in TRUE_WORDS
        elif isinstance(action, argparse._AppendAction):
            defaults[key] = [v.strip() for v in value.split(",") if v.strip()]
        else:
            try:
                defaults[key] = action.type(value) if action.type else value
            except ValueError:
                leaf.error(f"config key {key!r}: bad value {value!r}")
            if action.choices and defaults[key] not in action.choices:
                leaf.error(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
        # a required flag given in the config file is no longer required on the command line
        action.required = False
    leaf.set_defaults(**defaults)
    args = root.parse_args(argv)
    # append actions extend rather than replace defaults; command line wins
    for key, value in defaults.items():
        if isinstance(actions[key], argparse._AppendAction) and getattr(args, key) != value:
            setattr(args, key, getattr(args, key)[len(value):])
    return args


def _mode(args) -> UnitMode:
    return UnitMode(args.mode, getattr(args, "layers", "all"))


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed)


def _forest_cfg(args) -> ForestConfig:
    return ForestConfig(n_trees=args.trees, max_depth=args.max_depth, min_samples_split=args.min_samples_split,
                        features_per_split=args.features_per_split, seed=args.seed)


def cmd_pcap2img(args) -> int:
    captures = resolve_captures(args.pcap, args.manifest)
    dataset, units = pcap_to_dataset(captures, _mode(args), cfg=TrimConfig(args.bytes), anonymize=args.anonymize,
                                     dedup=not args.no_dedup)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = write_idx(dataset, out / "images.idx3", out / "labels.idx1")
    if args.png:
        (out / "png").mkdir(exist_ok=True)
        for i, s in enumerate(dataset.samples):
            export_png(s, out / "png" / f"{i:06d}_{dataset.class_names[s.label_index]}.png")
    log_kv("pcap2img", files=len(captures), samples=len(dataset), classes=len(dataset.class_names),
           mode=str(_mode(args)).replace(" ", ""), out=out)
    print(f"wrote {len(dataset)} images ({len(dataset.class_names)} classes) to {out}; names in {names.name}")
    return 0


def cmd_features(args) -> int:
    captures = resolve_captures(args.pcap, args.manifest)
    vectors, labels = [], []
    for path, label in captures:
        for _, vec in extract_flow_features(read_packets(path), args.mode):
            vectors.append(vec)
            labels.append(label)
    write_features_csv(vectors, labels, args.out)
    log_kv("features", files=len(captures), flows=len(vectors), dims=len(FEATURE_NAMES), out=args.out)
    print(f"wrote {len(vectors)} feature rows x {len(FEATURE_NAMES)} features to {args.out}")
    return 0


def cmd_train_cnn(args) -> int:
    ds = read_idx(args.images, args.labels, args.names)
    cfg = _train_cfg(args)
    tr, va, te = shuffle_split(len(ds), cfg)
    x, y = ds.tensors(), ds.labels()
    n_classes = max(len(ds.class_names), int(y.max()) + 1)
    result = train_cnn(x[tr], y[tr], x[va], y[va], n_classes, cfg)
    save_checkpoint(result.final, args.out)
    save_checkpoint(result.best, args.out + ".best")
    if args.test_out:
        d = Path(args.test_out)
        d.mkdir(parents=True, exist_ok=True)
        write_idx(ds.subset(te), d / "test.idx3", d / "test.idx1")
    log_kv("train_cnn", samples=len(ds), train=len(tr), val=len(va), test=len(te), best_epoch=result.best_epoch,
           final_loss=f"{result.history[-1].loss:.6f}", out=args.out)
    return 0


def cmd_train_forest(args) -> int:
    X, labels, names = read_features_csv(args.features)
    classes = sorted(set(labels))
    y = np.array([classes.index(l) for l in labels])
    cfg = TrainConfig(seed=args.seed)
    tr, va, te = shuffle_split(len(y), cfg)
    forest = fit(X[tr], y[tr], _forest_cfg(args), n_classes=len(classes), class_names=classes)
    save_forest(forest, args.out)
    if args.test_out:
        write_features_csv(X[te], [labels[i] for i in te], args.test_out, names)
    acc = float(np.mean(forest.predict(X[va]) == y[va])) if len(va) else float("nan")
    log_kv("train_forest", samples=len(y), train=len(tr), val_acc=f"{acc:.6f}", trees=len(forest.trees), out=args.out)
    return 0


def cmd_eval(args) -> int:
    if args.checkpoint:
        if not (args.images and args.labels):
            raise UsageError("eval --checkpoint needs --images and --labels")
        state = load_checkpoint(args.checkpoint)
        ds = read_idx(args.images, args.labels, args.names)
        cm, report = evaluate(state, ds.tensors(), ds.labels(), ds.class_names)
    elif args.forest:
        if not args.features:
            raise UsageError("eval --forest needs --features")
        forest = load_forest(args.forest)
        X, labels, _ = read_features_csv(args.features)
        names = forest.class_names
        y = np.array([names.index(l) for l in labels])
        cm, report = evaluate(forest, X, y, names)
    else:
        raise UsageError("eval needs --checkpoint or --forest")
    print(report.format("metrics"))
    print("confusion (rows = true, cols = predicted):")
    print(cm.counts)
    return 0


def cmd_bench_extract(args) -> int:
    packets = []
    for pattern in args.pcap:
        for path in expand_captures(pattern):
            packets += read_packets(path)
    mode = _mode(args)
    feats = bench.bench_extraction(packets, args.reps, mode.granularity)
    imgs = bench.bench_image_conversion(packets, args.reps, mode, TrimConfig(args.bytes))
    print(f"handcrafted_extraction {feats.format()}")
    print(f"image_conversion {imgs.format()}")
    ref = bench.REFERENCE_TIMINGS["extraction"]
    print(f"reference_ms forest={ref['forest']:g} cnn={ref['cnn']:g} (published, other hardware)")
    return 0


def cmd_bench_infer(args) -> int:
    rng = np.random.default_rng(args.seed)
    if not (args.checkpoint or args.forest):
        raise UsageError("bench infer needs --checkpoint and/or --forest")
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        if args.images:
            x = normalize(read_idx_images(args.images))
        else:
            x = rng.random((args.samples, 1, 28, 28), dtype=np.float32)
        stats = bench.bench_cnn_inference(state, _take(x, args.samples), args.reps)
        print(f"cnn_inference {stats.format()}")
    if args.forest:
        forest = load_forest(args.forest)
        X = read_features_csv(args.features)[0] if args.features else rng.random((args.samples, forest.n_features))
        stats = bench.bench_forest_inference(forest, _take(X, args.samples), args.reps)
        print(f"forest_inference {stats.format()}")
    ref = bench.REFERENCE_TIMINGS["inference"]
    print(f"reference_ms forest={ref['forest']:g} cnn={ref['cnn']:g} (published, other hardware)")
    return 0


def _take(x: np.ndarray, n: int) -> np.ndarray:
    """First n rows, cycling through x when it is shorter."""
    return x[np.arange(n) % len(x)]


def cmd_report(args) -> int:
    captures = resolve_captures(args.pcap, args.manifest)
    mode, trim = _mode(args), TrimConfig(args.bytes)
    data = build_paired(captures, mode, cfg=trim, anonymize=args.anonymize, dedup=not args.no_dedup)
    log_kv("report_data", units=len(data.units), packets=len(data.packets), classes=len(data.class_names))
    result = run_report(data, _train_cfg(args), _forest_cfg(args), mode=mode, trim=trim, reps=args.reps)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = render(result)
    (out / "report.txt").write_text(text, encoding="utf-8")
    write_report_csv(result, out / "report.csv")
    save_checkpoint(result.cnn, out / "cnn.tlnn")
    save_forest(result.forest, out / "forest.tlrf")
    print(text, end="")
    return 0


def cmd_synth(args) -> int:
    from .synth import write_demo_corpus

    manifest = write_demo_corpus(args.out_dir, sessions_per_class=args.sessions, seed=args.seed)
    print(f"wrote demo captures and {manifest}")
    return 0


COMMANDS = {
    ("pcap2img",): cmd_pcap2img,
    ("features",): cmd_features,
    ("train", "cnn"): cmd_train_cnn,
    ("train", "forest"): cmd_train_forest,
    ("eval",): cmd_eval,
    ("bench", "extract"): cmd_bench_extract,
    ("bench", "infer"): cmd_bench_infer,
    ("report",): cmd_report,
    ("synth",): cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"trafficlens: error: {e}", file=sys.stderr)
        return 1
    key = tuple(x for x in (args.cmd, getattr(args, "sub", None)) if x)
    try:
        return COMMANDS[key](args)
    except UsageError as e:
        build_parser()[1][key].print_usage(sys.stderr)
        print(f"trafficlens: error: {e}", file=sys.stderr)
        return 1
    except (TrafficLensError, OSError, ValueError) as e:
        print(f"trafficlens: data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
