"""Byte blocks to grayscale images, MNIST-style IDX containers, and normalized tensors."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BadMagic, CountMismatch, EmptyDataset, NoUnits, TooManyClasses, Truncated, WrongLength
from .pcap import read_packets
from .split import TrimConfig, TrafficUnit, UnitMode, clean_units, split_units, trim_pad

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SIDE = 28


@dataclass
class ImageSample:
    pixels: np.ndarray  # (side, side) uint8, row-major from the byte block
    label_index: int

    def __eq__(self, other) -> bool:
        return (isinstance(other, ImageSample) and self.label_index == other.label_index
                and np.array_equal(self.pixels, other.pixels))


@dataclass
class ImageDataset:
    samples: list[ImageSample] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def pixels(self) -> np.ndarray:
        """All samples stacked as (n, side, side) uint8."""
        if not self.samples:
            return np.zeros((0, SIDE, SIDE), dtype=np.uint8)
        return np.stack([s.pixels for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label_index for s in self.samples], dtype=np.int64)

    def tensors(self) -> np.ndarray:
        """(n, 1, side, side) float32 in [0, 1]."""
        return normalize(self.pixels())

    @classmethod
    def from_arrays(cls, pixels: np.ndarray, labels: Sequence[int], class_names: Sequence[str]) -> "ImageDataset":
        samples = [ImageSample(np.asarray(p, dtype=np.uint8), int(y)) for p, y in zip(pixels, labels)]
        return cls(samples, list(class_names))

    def subset(self, indices: Iterable[int]) -> "ImageDataset":
        return ImageDataset([self.samples[i] for i in indices], list(self.class_names))


def bytes_to_image(block: bytes, label_index: int = 0, side: int = SIDE) -> ImageSample:
    """Byte i becomes the pixel at row i // side, column i % side."""
    if len(block) != side * side:
        raise WrongLength(f"expected {side * side} bytes, got {len(block)}")
    pixels = np.frombuffer(bytes(block), dtype=np.uint8).reshape(side, side).copy()
    return ImageSample(pixels, int(label_index))


def image_to_bytes(sample: ImageSample) -> bytes:
    return sample.pixels.astype(np.uint8).tobytes()


def to_normalized_tensor(sample: ImageSample) -> np.ndarray:
    """1 x side x side float32 grid of pixel / 255."""
    return normalize(sample.pixels[None])[0]


def normalize(pixels: np.ndarray) -> np.ndarray:
    """Pixels (n, h, w) or (h, w) uint8 to float32 with a channel axis inserted before h."""
    arr = np.asarray(pixels)
    return (arr.astype(np.float32) / np.float32(255.0))[..., None, :, :]


def _write_names(path: Path, names: Sequence[str]) -> None:
    path.write_text("".join(f"{n}\n" for n in names), encoding="utf-8")


def names_path_for(label_path: str | Path) -> Path:
    return Path(label_path).with_name("classes.txt")


def write_idx(dataset: ImageDataset, image_path: str | Path, label_path: str | Path,
              names_path: str | Path | None = None) -> Path:
    """Write IDX3 images, IDX1 labels and a class-name sidecar; returns the sidecar path."""
    if not dataset.samples:
        raise EmptyDataset("refusing to write an empty dataset")
    if len(dataset.class_names) > 256 or max(s.label_index for s in dataset.samples) > 255:
        raise TooManyClasses(f"{len(dataset.class_names)} classes do not fit one label byte")
    pixels = dataset.pixels()
    n, rows, cols = pixels.shape
    labels = dataset.labels().astype(np.uint8)
    with open(image_path, "wb") as fp:
        fp.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fp.write(pixels.tobytes())
    with open(label_path, "wb") as fp:
        fp.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fp.write(labels.tobytes())
    names_path = Path(names_path) if names_path is not None else names_path_for(label_path)
    _write_names(names_path, dataset.class_names)
    return names_path


def read_idx_images(image_path: str | Path) -> np.ndarray:
    raw = Path(image_path).read_bytes()
    if len(raw) < 16:
        if len(raw) >= 4 and struct.unpack(">I", raw[:4])[0] != IDX_IMAGES_MAGIC:
            raise BadMagic(f"{image_path}: not an IDX3 ubyte image file")
        raise Truncated(f"{image_path}: header cut short")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagic(f"{image_path}: magic 0x{magic:08X}, expected 0x{IDX_IMAGES_MAGIC:08X}")
    need = n * rows * cols
    if len(raw) - 16 < need:
        raise Truncated(f"{image_path}: {len(raw) - 16} pixel bytes, header promises {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=16).reshape(n, rows, cols).copy()


def read_idx_labels(label_path: str | Path) -> np.ndarray:
    raw = Path(label_path).read_bytes()
    if len(raw) < 8:
        raise Truncated(f"{label_path}: header cut short")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise BadMagic(f"{label_path}: magic 0x{magic:08X}, expected 0x{IDX_LABELS_MAGIC:08X}")
    if len(raw) - 8 < n:
        raise Truncated(f"{label_path}: {len(raw) - 8} labels, header promises {n}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def read_idx(image_path: str | Path, label_path: str | Path, names_path: str | Path | None = None) -> ImageDataset:
    pixels = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if len(pixels) != len(labels):
        raise CountMismatch(f"{len(pixels)} images but {len(labels)} labels")
    names_path = Path(names_path) if names_path is not None else names_path_for(label_path)
    if names_path.exists():
        names = names_path.read_text(encoding="utf-8").splitlines()
    else:
        names = [str(i) for i in range(int(labels.max()) + 1 if len(labels) else 0)]
    return ImageDataset.from_arrays(pixels, labels, names)


def export_png(sample: ImageSample, path: str | Path) -> None:
    """8-bit grayscale PNG with the exact pixel values."""
    from PIL import Image

    Image.fromarray(sample.pixels.astype(np.uint8), mode="L").save(path)


def units_to_images(units: Sequence[TrafficUnit], class_names: Sequence[str],
                    cfg: TrimConfig = TrimConfig()) -> list[ImageSample]:
    side = math.isqrt(cfg.n)
    if side * side != cfg.n:
        raise WrongLength(f"--bytes {cfg.n} is not a perfect square; images must be square")
    index = {name: i for i, name in enumerate(class_names)}
    return [bytes_to_image(trim_pad(u.bytes, cfg), index[u.label], side) for u in units]


def pcap_to_dataset(captures: Sequence[tuple[str | Path, str]], mode: UnitMode = UnitMode(), *,
                    cfg: TrimConfig = TrimConfig(), anonymize: bool = False, dedup: bool = True,
                    class_names: Sequence[str] | None = None) -> tuple[ImageDataset, list[TrafficUnit]]:
    """PCAP files to an image dataset: split, clean, trim and convert.

    Returns the dataset and the surviving units (same order as the samples).
    Deduplication spans every input file. Class names default to sorted labels.
    """
    units: list[TrafficUnit] = []
    for path, label in captures:
        units += split_units(read_packets(path), mode, label, str(path), anonymize=anonymize, allow_empty=True)
    units = clean_units(units, cfg, dedup=dedup)
    if not units:
        raise NoUnits("no units survived splitting and cleaning")
    names = list(class_names) if class_names is not None else sorted({u.label for u in units})
    return ImageDataset(units_to_images(units, names, cfg), names), units
