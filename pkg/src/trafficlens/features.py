"""Hand-crafted per-flow statistics for the random-forest baseline.

Every packet updates a :class:`FlowAccumulator` in O(1) (the per-direction
size lists used for Covariance/Correlation excepted); :func:`finalize` turns
it into a vector ordered as :data:`FEATURE_NAMES`.

Packet size is the on-the-wire length (``orig_len``).  "Forward" is the
direction of the first packet seen in the flow.  docs/features.md lists every
formula.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyFlow
from .pcap import (
    ACK,
    CWR,
    ECE,
    ETHERTYPE_ARP,
    FIN,
    PROTO_ICMP,
    PROTO_ICMPV6,
    PROTO_IGMP,
    PROTO_TCP,
    PROTO_UDP,
    PSH,
    RST,
    SYN,
    URG,
    ParsedPacket,
)
from .split import unit_key

# Gaps longer than this end an active span of the flow.
IDLE_THRESHOLD = 1.0

# Names and order as listed in the source feature table (spelling kept).
FEATURE_NAMES: tuple[str, ...] = (
    "Variance", "AVG", "Flow_active_time", "Drate", "TCP", "Flow_idle_time", "Min",
    "Sequence_number", "Header_Length", "Wifi_src", "Rate", "LLC", "Max",
    "MAC", "Ack_count", "Tot_size", "SSH", "Source_port", "TNP_per_proto_tcp",
    "Syn_flag_number", "Urg_count", "Number", "Urg_flag_number", "ICMP",
    "HTTP", "Covariance", "RARP", "SMTP", "Std", "Wifi_Type", "MQTT", "Sbytes",
    "DS_status", "HTTPS", "Srate", "Ack_flag_number", "IRC", "Dst_ip_bytes",
    "Protocol_version", "UDP", "Correlation", "Rst_flag_number", "DHCP", "IAT",
    "Dpkts", "Rst_count", "IGMP", "Src_ip_bytes", "Ts", "DNS", "CoAP", "Telnet",
    "Src_pkts", "ARP", "Protocol_type", "IPv", "Magnitue", "Std_flow_duration",
    "Destination_port", "Weight", "Average_flow_duration", "Fin_count",
    "Spkts", "Dst_pkts", "Fin_flag_number", "Fragments", "Sum_flow_duration",
    "Min_flow_duration", "Cwr_flag_number", "Tot-sum", "Syn_count",
    "Ece_flag_number", "Psh_flag_number", "Max_flow_duration",
)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

# Not observable in Ethernet captures at flow scope; always 0.
CONSTANT_ZERO = ("Wifi_src", "Wifi_Type", "DS_status", "MAC", "RARP")

PORT_PROTOCOLS = {
    "HTTP": (80,), "HTTPS": (443,), "DNS": (53,), "SSH": (22,), "SMTP": (25,), "IRC": (6667,),
    "Telnet": (23,), "DHCP": (67, 68), "MQTT": (1883,), "CoAP": (5683,),
}
_FLAG_BITS = {"Syn": SYN, "Ack": ACK, "Fin": FIN, "Rst": RST, "Psh": PSH, "Urg": URG, "Ece": ECE, "Cwr": CWR}
_COUNTED_FLAGS = ("Syn", "Ack", "Fin", "Rst", "Urg")


@dataclass
class _Moments:
    """Welford running mean/variance with min and max."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    total: float = 0.0
    min: float = math.inf
    max: float = -math.inf

    def add(self, x: float) -> None:
        self.n += 1
        self.total += x
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)
        self.min = min(self.min, x)
        self.max = max(self.max, x)

    def variance(self) -> float:
        return max(self.m2 / self.n, 0.0) if self.n else 0.0

    def copy(self) -> "_Moments":
        return _Moments(self.n, self.mean, self.m2, self.total, self.min, self.max)


@dataclass
class FlowAccumulator:
    packet_count: int = 0
    first_ts: float = math.inf
    last_ts: float = -math.inf
    prev_ts: float | None = None
    sizes: _Moments = field(default_factory=_Moments)
    last_size: float = 0.0
    fwd_pkts: int = 0
    bwd_pkts: int = 0
    fwd_bytes: float = 0.0
    fwd_ip_bytes: float = 0.0
    bwd_ip_bytes: float = 0.0
    header_len: int = 0
    flag_counts: dict[str, int] = field(default_factory=lambda: {k: 0 for k in _FLAG_BITS})
    indicators: set[str] = field(default_factory=set)
    tcp_packets: int = 0
    fragments: int = 0
    fwd_sizes: list[float] = field(default_factory=list)
    bwd_sizes: list[float] = field(default_factory=list)
    # active-span bookkeeping
    span_start: float | None = None
    spans: _Moments = field(default_factory=_Moments)
    idle_time: float = 0.0
    # values taken from the first packet
    src_port: int = 0
    dst_port: int = 0
    protocol: int = 0
    ip_version: int = 0
    seq: int | None = None

    def add(self, pkt: ParsedPacket, forward: bool = True) -> None:
        ts = pkt.timestamp
        size = float(pkt.orig_len)
        ft = pkt.five_tuple
        if self.packet_count == 0:
            if ft is not None:
                self.src_port, self.dst_port, self.protocol = ft.src_port, ft.dst_port, ft.protocol
            self.ip_version = pkt.ip_version or 0
            self.span_start = ts
        elif self.prev_ts is not None and ts - self.prev_ts > IDLE_THRESHOLD:
            self.spans.add(self.prev_ts - self.span_start)
            self.idle_time += ts - self.prev_ts
            self.span_start = ts
        self.prev_ts = ts
        self.packet_count += 1
        self.first_ts = min(self.first_ts, ts)
        self.last_ts = max(self.last_ts, ts)
        self.sizes.add(size)
        self.last_size = size
        ip_bytes = size - pkt.network_offset if pkt.network_offset is not None and pkt.ip_version else 0.0
        if forward:
            self.fwd_pkts += 1
            self.fwd_bytes += size
            self.fwd_ip_bytes += ip_bytes
            self.fwd_sizes.append(size)
        else:
            self.bwd_pkts += 1
            self.bwd_ip_bytes += ip_bytes
            self.bwd_sizes.append(size)
        self.header_len += pkt.header_total_len
        if pkt.tcp_flags is not None:
            for name, bit in _FLAG_BITS.items():
                if pkt.tcp_flags & bit:
                    self.flag_counts[name] += 1
        if pkt.is_fragment:
            self.fragments += 1
        self._indicate(pkt)

    def _indicate(self, pkt: ParsedPacket) -> None:
        ind = self.indicators
        if pkt.ethertype == ETHERTYPE_ARP:
            ind.add("ARP")
        if pkt.llc:
            ind.add("LLC")
        if pkt.ip_version:
            ind.add("IPv")
        ft = pkt.five_tuple
        if ft is None:
            return
        proto = ft.protocol
        if proto == PROTO_TCP:
            ind.add("TCP")
            self.tcp_packets += 1
            if self.seq is None and pkt.tcp_seq is not None:
                self.seq = pkt.tcp_seq
        elif proto == PROTO_UDP:
            ind.add("UDP")
        elif proto in (PROTO_ICMP, PROTO_ICMPV6):
            ind.add("ICMP")
        elif proto == PROTO_IGMP:
            ind.add("IGMP")
        if proto in (PROTO_TCP, PROTO_UDP):
            for name, ports in PORT_PROTOCOLS.items():
                if ft.src_port in ports or ft.dst_port in ports:
                    ind.add(name)


def accumulate(acc: FlowAccumulator, packet: ParsedPacket, forward: bool = True) -> FlowAccumulator:
    acc.add(packet, forward)
    return acc


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def paired_cov_corr(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Population covariance and correlation over the first min(len) pairs; 0 when undefined."""
    k = min(len(a), len(b))
    if k == 0:
        return 0.0, 0.0
    x = np.asarray(a[:k], dtype=np.float64)
    y = np.asarray(b[:k], dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    cov = float(np.mean(dx * dy))
    sx, sy = math.sqrt(float(np.mean(dx * dx))), math.sqrt(float(np.mean(dy * dy)))
    corr = cov / (sx * sy) if sx > 0 and sy > 0 else 0.0
    return cov, corr


def finalize_dict(acc: FlowAccumulator) -> dict[str, float]:
    if acc.packet_count < 1:
        raise EmptyFlow("cannot finalize a flow with no packets")
    n = acc.packet_count
    duration = acc.last_ts - acc.first_ts
    spans = acc.spans.copy()
    spans.add(acc.prev_ts - acc.span_start)
    var = acc.sizes.variance()
    cov, corr = paired_cov_corr(acc.fwd_sizes, acc.bwd_sizes)
    f: dict[str, float] = {name: 0.0 for name in FEATURE_NAMES}
    f.update({
        "Number": n,
        "Ts": acc.first_ts,
        "Tot-sum": acc.sizes.total,
        "Tot_size": acc.last_size,
        "Min": acc.sizes.min,
        "Max": acc.sizes.max,
        "AVG": acc.sizes.mean,
        "Variance": var,
        "Std": math.sqrt(var),
        "IAT": duration / (n - 1) if n > 1 else 0.0,
        "Header_Length": acc.header_len,
        "Rate": n / duration if duration > 0 else 0.0,
        "Srate": acc.fwd_pkts / duration if duration > 0 else 0.0,
        "Drate": acc.bwd_pkts / duration if duration > 0 else 0.0,
        "Spkts": acc.fwd_pkts,
        "Dpkts": acc.bwd_pkts,
        "Src_pkts": acc.fwd_pkts,
        "Dst_pkts": acc.bwd_pkts,
        "Sbytes": acc.fwd_bytes,
        "Src_ip_bytes": acc.fwd_ip_bytes,
        "Dst_ip_bytes": acc.bwd_ip_bytes,
        "Magnitue": math.sqrt(_mean(acc.fwd_sizes) + _mean(acc.bwd_sizes)),
        "Weight": acc.fwd_pkts * acc.bwd_pkts,
        "Covariance": cov,
        "Correlation": corr,
        "Sequence_number": acc.seq or 0,
        "Source_port": acc.src_port,
        "Destination_port": acc.dst_port,
        "Protocol_type": acc.protocol,
        "Protocol_version": acc.ip_version,
        "TNP_per_proto_tcp": acc.tcp_packets,
        "Fragments": acc.fragments,
        "Sum_flow_duration": duration,
        "Min_flow_duration": spans.min,
        "Max_flow_duration": spans.max,
        "Average_flow_duration": spans.mean,
        "Std_flow_duration": math.sqrt(spans.variance()),
        "Flow_active_time": spans.total,
        "Flow_idle_time": acc.idle_time,
    })
    for name in _COUNTED_FLAGS:
        f[f"{name}_count"] = acc.flag_counts[name]
    for name in _FLAG_BITS:
        f[f"{name}_flag_number"] = 1.0 if acc.flag_counts[name] else 0.0
    for name in acc.indicators:
        f[name] = 1.0
    return {k: float(f[k]) for k in FEATURE_NAMES}


def finalize(acc: FlowAccumulator) -> np.ndarray:
    """Feature vector (float64) in FEATURE_NAMES order."""
    d = finalize_dict(acc)
    return np.array([d[k] for k in FEATURE_NAMES], dtype=np.float64)


def flow_vector(packets: Sequence[ParsedPacket]) -> np.ndarray:
    """Features of one flow/session given its packets in capture order."""
    if not packets:
        raise EmptyFlow("empty packet list")
    acc = FlowAccumulator()
    origin = packets[0].five_tuple
    for p in packets:
        acc.add(p, forward=origin is None or p.five_tuple == origin)
    return finalize(acc)


def extract_flow_features(packets: Iterable[ParsedPacket], granularity: str = "session"
                          ) -> list[tuple[Hashable, np.ndarray]]:
    """Stream packets into one accumulator per unit key; returns (key, vector) in first-seen order."""
    accs: dict[Hashable, tuple[FlowAccumulator, object]] = {}
    for p in packets:
        key = unit_key(p, granularity)
        if key is None:
            continue
        entry = accs.get(key)
        if entry is None:
            entry = accs[key] = (FlowAccumulator(), p.five_tuple)
        acc, origin = entry
        acc.add(p, forward=origin is None or p.five_tuple == origin)
    return [(k, finalize(acc)) for k, (acc, _) in accs.items()]


def write_features_csv(vectors: Sequence[np.ndarray] | np.ndarray, labels: Sequence[str], path: str | Path,
                       names: Sequence[str] = FEATURE_NAMES) -> None:
    """Header of feature names plus ``label``; values written with round-trip precision."""
    if len(vectors) != len(labels):
        raise DimensionMismatch(f"{len(vectors)} vectors but {len(labels)} labels")
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow([*names, "label"])
        for vec, label in zip(vectors, labels):
            if len(vec) != len(names):
                raise DimensionMismatch(f"vector of length {len(vec)}, expected {len(names)}")
            w.writerow([repr(float(v)) for v in vec] + [label])


def read_features_csv(path: str | Path) -> tuple[np.ndarray, list[str], list[str]]:
    """Returns (matrix n x d, labels, feature names)."""
    with open(path, newline="") as fp:
        rows = list(csv.reader(fp))
    if not rows or rows[0][-1] != "label":
        raise ValueError(f"{path}: missing header with trailing 'label' column")
    names = rows[0][:-1]
    body = rows[1:]
    X = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64).reshape(len(body), len(names))
    return X, [r[-1] for r in body], names
