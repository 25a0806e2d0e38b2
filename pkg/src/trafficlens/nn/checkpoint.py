"""Binary checkpoint container.

    magic "TLNN" | version u32 | n_classes u32 | adam step u32 | entry count u32
    entry: name length u32 | utf-8 name | rank u32 | extents u32 x rank | float32 values

All integers and values little-endian.  Entries are the parameters followed
by their Adam moments, named ``adam.m.<param>`` and ``adam.v.<param>``.
Values are stored at 32 bits; a float64 state is narrowed on save.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, ShapeMismatch, Truncated, VersionMismatch
from .model import AdamState, ModelConfig, ModelState, PARAM_NAMES

MAGIC = b"TLNN"
VERSION = 1


def _entries(state: ModelState):
    for name in PARAM_NAMES:
        yield name, state.params[name]
    for name in PARAM_NAMES:
        yield f"adam.m.{name}", state.adam.m[name]
    for name in PARAM_NAMES:
        yield f"adam.v.{name}", state.adam.v[name]


def write_entries(fp, entries) -> None:
    for name, arr in entries:
        raw = name.encode("utf-8")
        fp.write(struct.pack("<I", len(raw)) + raw)
        fp.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        fp.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Cursor:
    def __init__(self, raw: bytes, what: str):
        self.raw, self.pos, self.what = raw, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise Truncated(f"{self.what}: file ends at byte {len(self.raw)}, needed {self.pos + n}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def read_entries(cur: _Cursor, count: int) -> dict[str, np.ndarray]:
    out = {}
    for _ in range(count):
        name = cur.take(cur.u32()).decode("utf-8")
        rank = cur.u32()
        shape = tuple(cur.u32(rank)) if rank > 1 else ((cur.u32(),) if rank == 1 else ())
        n = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(cur.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    return out


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    entries = list(_entries(state))
    with open(path, "wb") as fp:
        fp.write(MAGIC + struct.pack("<IIII", VERSION, state.config.n_classes, state.adam.t, len(entries)))
        write_entries(fp, entries)


def load_checkpoint(path: str | Path) -> ModelState:
    cur = _Cursor(Path(path).read_bytes(), str(path))
    if len(cur.raw) >= 4 and cur.raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a TLNN checkpoint")
    cur.take(4)
    version, n_classes, step, count = cur.u32(4)
    if version != VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, reader supports {VERSION}")
    entries = read_entries(cur, count)
    cfg = ModelConfig(n_classes=n_classes)
    missing = [n for n in PARAM_NAMES if n not in entries]
    if missing:
        raise Truncated(f"{path}: missing entries {missing}")
    for name, shape in cfg.param_shapes().items():
        if entries[name].shape != shape:
            raise ShapeMismatch(f"{path}: {name} has shape {entries[name].shape}, expected {shape}")
    params = {n: entries[n] for n in PARAM_NAMES}
    m = {n: entries.get(f"adam.m.{n}", np.zeros_like(params[n])) for n in PARAM_NAMES}
    v = {n: entries.get(f"adam.v.{n}", np.zeros_like(params[n])) for n in PARAM_NAMES}
    return ModelState(cfg, params, AdamState(m, v, step))
