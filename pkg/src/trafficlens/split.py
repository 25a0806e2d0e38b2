"""Grouping packets into packet / flow / session units and fixing their length."""
from __future__ import annotations

import fnmatch
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

from .errors import NoUnits
from .pcap import FiveTuple, ParsedPacket

GRANULARITIES = ("packet", "flow", "session")
LAYERS = ("all", "l7")
DEFAULT_TRIM = 784


@dataclass(frozen=True)
class UnitMode:
    granularity: str = "session"
    layers: str = "all"

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}")
        if self.layers not in LAYERS:
            raise ValueError(f"layers must be one of {LAYERS}, got {self.layers!r}")

    def __str__(self) -> str:
        return f"{self.granularity.capitalize()} + {'All' if self.layers == 'all' else 'L7'}"


@dataclass(frozen=True)
class TrimConfig:
    n: int = DEFAULT_TRIM
    pad_byte: int = 0x00

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("trim length must be positive")


@dataclass
class TrafficUnit:
    key: Hashable
    bytes: bytes
    packet_count: int
    label: str = ""
    source: str = ""
    # Indices (within the source capture) of member packets, capture order.
    members: tuple[int, ...] = field(default_factory=tuple)


def canonical_key(five_tuple: FiveTuple, granularity: str) -> FiveTuple:
    """Flow keys keep direction; session keys put the smaller (ip, port) endpoint first."""
    if granularity == "flow":
        return five_tuple
    if granularity != "session":
        raise ValueError(f"no 5-tuple key for granularity {granularity!r}")
    a = (five_tuple.src_ip, five_tuple.src_port)
    b = (five_tuple.dst_ip, five_tuple.dst_port)
    return five_tuple if a <= b else five_tuple.reversed()


def anonymize_bytes(pkt: ParsedPacket) -> bytes:
    """Zero MAC addresses and IP source/destination addresses."""
    buf = bytearray(pkt.captured_bytes)
    buf[0:min(12, len(buf))] = bytes(min(12, len(buf)))
    net = pkt.network_offset
    if net is not None and pkt.five_tuple is not None:
        if pkt.ip_version == 4:
            start, stop = net + 12, net + 20
        else:
            start, stop = net + 8, net + 40
        buf[start:stop] = bytes(stop - start)
    return bytes(buf)


def packet_bytes(pkt: ParsedPacket, layers: str, anonymize: bool = False) -> bytes:
    data = anonymize_bytes(pkt) if anonymize else pkt.captured_bytes
    if layers == "all":
        return data
    if pkt.l7_offset is None:
        return b""
    end = len(data) if pkt.l7_end is None else pkt.l7_end
    return data[pkt.l7_offset:end]


def unit_key(pkt: ParsedPacket, granularity: str) -> Hashable | None:
    if granularity == "packet":
        return pkt.index
    if pkt.five_tuple is None:
        return None
    return canonical_key(pkt.five_tuple, granularity)


def split_units(packets: Iterable[ParsedPacket], mode: UnitMode, label: str = "", source: str = "",
                *, anonymize: bool = False, allow_empty: bool = False) -> list[TrafficUnit]:
    """Group decoded packets into units, in first-seen order.

    Packets without a 5-tuple (ARP, LLC, ...) only form units in packet mode.
    Raises NoUnits when nothing can be grouped, unless ``allow_empty``.
    """
    groups: dict[Hashable, list[ParsedPacket]] = {}
    for pkt in packets:
        key = unit_key(pkt, mode.granularity)
        if key is None:
            continue
        groups.setdefault(key, []).append(pkt)
    if not groups and not allow_empty:
        raise NoUnits(f"{source or 'capture'}: no {mode.granularity} units")
    units = []
    for key, members in groups.items():
        data = b"".join(packet_bytes(p, mode.layers, anonymize) for p in members)
        units.append(TrafficUnit(key, data, len(members), label, source, tuple(p.index for p in members)))
    return units


def trim_pad(data: bytes | TrafficUnit, cfg: TrimConfig = TrimConfig()) -> bytes:
    if isinstance(data, TrafficUnit):
        data = data.bytes
    if len(data) >= cfg.n:
        return bytes(data[:cfg.n])
    return bytes(data) + bytes([cfg.pad_byte]) * (cfg.n - len(data))


def clean_units(units: Sequence[TrafficUnit], cfg: TrimConfig = TrimConfig(), *,
                dedup: bool = True) -> list[TrafficUnit]:
    """Drop empty units and, unless ``dedup`` is off, units whose trimmed bytes repeat an earlier one."""
    seen: set[bytes] = set()
    out = []
    for unit in units:
        if not unit.bytes:
            continue
        if dedup:
            digest = hashlib.sha256(trim_pad(unit.bytes, cfg)).digest()
            if digest in seen:
                continue
            seen.add(digest)
        out.append(unit)
    return out


def load_manifest(path: str | Path) -> list[tuple[str, str]]:
    """Parse ``<glob>\\t<label>`` lines; relative globs resolve against the manifest's folder."""
    path = Path(path)
    base = path.resolve().parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{lineno}: expected '<glob>\\t<label>'")
        pattern, label = line.split("\t", 1)
        pattern, label = pattern.strip(), label.strip()
        if not Path(pattern).is_absolute():
            pattern = str(base / pattern)
        entries.append((pattern, label))
    return entries


def label_for(path: str | Path, manifest: list[tuple[str, str]]) -> str | None:
    target = str(Path(path).resolve())
    for pattern, label in manifest:
        if fnmatch.fnmatchcase(target, pattern):
            return label
    return None


def expand_captures(pattern: str) -> list[Path]:
    """Sorted files matching a glob (or the literal path)."""
    p = Path(pattern)
    if p.exists():
        return [p]
    anchor = Path(p.anchor) if p.is_absolute() else Path(".")
    rel = str(p.relative_to(anchor)) if p.is_absolute() else pattern
    return sorted(x for x in anchor.glob(rel) if x.is_file())
