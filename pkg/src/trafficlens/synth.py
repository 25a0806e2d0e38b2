"""Hand-assembled Ethernet frames and synthetic captures for tests and demos.

Checksums are left zero; nothing in the pipeline validates them.
"""
from __future__ import annotations

import ipaddress
import struct
from pathlib import Path

import numpy as np

from .pcap import (
    ETHERTYPE_ARP,
    ETHERTYPE_IPV4,
    ETHERTYPE_IPV6,
    PROTO_ICMP,
    PROTO_TCP,
    PROTO_UDP,
    SYN,
    ACK,
    PSH,
    FIN,
    RawRecord,
    write_capture,
)

DEFAULT_SRC_MAC = bytes.fromhex("020000000001")
DEFAULT_DST_MAC = bytes.fromhex("020000000002")


def ip_bytes(addr: str | bytes) -> bytes:
    if isinstance(addr, bytes):
        return addr
    return ipaddress.ip_address(addr).packed


def ethernet(payload: bytes, ethertype: int, *, src_mac=DEFAULT_SRC_MAC, dst_mac=DEFAULT_DST_MAC,
             vlan_ids: tuple[int, ...] = ()) -> bytes:
    head = dst_mac + src_mac
    for vid in vlan_ids:
        head += struct.pack(">HH", 0x8100, vid & 0x0FFF)
    return head + struct.pack(">H", ethertype) + payload


def ipv4(payload: bytes, proto: int, src: str | bytes, dst: str | bytes, *, ttl: int = 64,
         options: bytes = b"", ident: int = 0, flags_frag: int = 0) -> bytes:
    if len(options) % 4:
        raise ValueError("IPv4 options must be a multiple of 4 bytes")
    ihl = 5 + len(options) // 4
    total = ihl * 4 + len(payload)
    head = struct.pack(">BBHHHBBH4s4s", 0x40 | ihl, 0, total, ident, flags_frag, ttl, proto, 0,
                       ip_bytes(src), ip_bytes(dst))
    return head + options + payload


def ipv6(payload: bytes, next_header: int, src: str | bytes, dst: str | bytes, *, hop_limit: int = 64) -> bytes:
    head = struct.pack(">IHBB16s16s", 0x60000000, len(payload), next_header, hop_limit, ip_bytes(src), ip_bytes(dst))
    return head + payload


def tcp(sport: int, dport: int, *, flags: int = ACK, seq: int = 0, ack: int = 0, payload: bytes = b"",
        options: bytes = b"", window: int = 65535) -> bytes:
    if len(options) % 4:
        raise ValueError("TCP options must be a multiple of 4 bytes")
    offset = 5 + len(options) // 4
    head = struct.pack(">HHIIBBHHH", sport, dport, seq, ack, offset << 4, flags, window, 0, 0)
    return head + options + payload


def udp(sport: int, dport: int, payload: bytes = b"") -> bytes:
    return struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload


def icmp_echo(ident: int = 1, seq: int = 1, payload: bytes = b"") -> bytes:
    return struct.pack(">BBHHH", 8, 0, 0, ident, seq) + payload


def arp_request(sender_ip: str = "10.0.0.1", target_ip: str = "10.0.0.2") -> bytes:
    body = struct.pack(">HHBBH6s4s6s4s", 1, ETHERTYPE_IPV4, 6, 4, 1, DEFAULT_SRC_MAC, ip_bytes(sender_ip),
                       b"\x00" * 6, ip_bytes(target_ip))
    return ethernet(body, ETHERTYPE_ARP, dst_mac=b"\xff" * 6)


def tcp_frame(src: str, sport: int, dst: str, dport: int, *, flags: int = ACK, payload: bytes = b"",
              seq: int = 0, vlan_ids: tuple[int, ...] = ()) -> bytes:
    fam6 = ":" in src
    seg = tcp(sport, dport, flags=flags, payload=payload, seq=seq)
    if fam6:
        return ethernet(ipv6(seg, PROTO_TCP, src, dst), ETHERTYPE_IPV6, vlan_ids=vlan_ids)
    return ethernet(ipv4(seg, PROTO_TCP, src, dst), ETHERTYPE_IPV4, vlan_ids=vlan_ids)


def udp_frame(src: str, sport: int, dst: str, dport: int, *, payload: bytes = b"",
              vlan_ids: tuple[int, ...] = ()) -> bytes:
    dgram = udp(sport, dport, payload)
    if ":" in src:
        return ethernet(ipv6(dgram, PROTO_UDP, src, dst), ETHERTYPE_IPV6, vlan_ids=vlan_ids)
    return ethernet(ipv4(dgram, PROTO_UDP, src, dst), ETHERTYPE_IPV4, vlan_ids=vlan_ids)


def icmp_frame(src: str, dst: str, *, payload: bytes = b"") -> bytes:
    return ethernet(ipv4(icmp_echo(payload=payload), PROTO_ICMP, src, dst), ETHERTYPE_IPV4)


def records_from_frames(frames: list[bytes], *, start: float = 0.0, step: float = 0.001,
                        times: list[float] | None = None) -> list[RawRecord]:
    out = []
    for i, frame in enumerate(frames):
        t = times[i] if times is not None else start + i * step
        sec = int(t)
        usec = int(round((t - sec) * 1_000_000))
        if usec == 1_000_000:
            sec, usec = sec + 1, 0
        out.append(RawRecord(sec, usec, len(frame), len(frame), frame))
    return out


def random_capture_frames(rng: np.random.Generator, n_packets: int, *, n_hosts: int = 4,
                          n_ports: int = 3, p_non_ip: float = 0.05) -> list[bytes]:
    """Random mix of TCP/UDP/ICMP/ARP frames over a small address space.

    A small host/port pool makes repeated and reversed 5-tuples common,
    which is what grouping tests need.
    """
    hosts = [f"10.0.0.{i + 1}" for i in range(n_hosts)]
    ports = [80, 443, 5000, 5001, 53, 8080][:max(1, n_ports)]
    frames = []
    for _ in range(n_packets):
        r = rng.random()
        payload = bytes(rng.integers(0, 256, size=int(rng.integers(0, 40)), dtype=np.uint8))
        a, b = rng.choice(len(hosts), size=2, replace=False)
        src, dst = hosts[a], hosts[b]
        sp, dp = int(rng.choice(ports)), int(rng.choice(ports))
        if r < p_non_ip:
            frames.append(arp_request(src, dst))
        elif r < 0.55:
            frames.append(tcp_frame(src, sp, dst, dp, flags=int(rng.choice([SYN, ACK, ACK | PSH, FIN | ACK])),
                                    payload=payload))
        elif r < 0.9:
            frames.append(udp_frame(src, sp, dst, dp, payload=payload))
        else:
            frames.append(icmp_frame(src, dst, payload=payload))
    return frames


def _demo_session(rng: np.random.Generator, kind: str, client: str, server: str, t0: float) -> tuple[list[bytes], list[float]]:
    """One session of a demo traffic class."""
    frames, times = [], []
    sport = int(rng.integers(20000, 60000))
    t = t0
    if kind == "benign":
        dport = 443
        frames.append(tcp_frame(client, sport, server, dport, flags=SYN))
        frames.append(tcp_frame(server, dport, client, sport, flags=SYN | ACK))
        frames.append(tcp_frame(client, sport, server, dport, flags=ACK))
        for _ in range(int(rng.integers(3, 8))):
            body = bytes([0x17, 0x03, 0x03]) + bytes(rng.integers(0, 256, size=int(rng.integers(40, 200)), dtype=np.uint8))
            frames.append(tcp_frame(client, sport, server, dport, flags=ACK | PSH, payload=body))
            frames.append(tcp_frame(server, dport, client, sport, flags=ACK | PSH, payload=body[::-1]))
        for _ in frames:
            t += float(rng.exponential(0.05))
            times.append(t)
    elif kind == "synflood":
        dport = 80
        for _ in range(int(rng.integers(1, 3))):
            frames.append(tcp_frame(client, sport, server, dport, flags=SYN, seq=int(rng.integers(0, 2**32))))
            t += float(rng.exponential(0.0005))
            times.append(t)
    elif kind == "udpflood":
        dport = int(rng.integers(1, 1024))
        for _ in range(int(rng.integers(2, 6))):
            body = bytes(rng.integers(0, 256, size=int(rng.integers(8, 64)), dtype=np.uint8))
            frames.append(udp_frame(client, sport, server, dport, payload=body))
            t += float(rng.exponential(0.001))
            times.append(t)
    else:
        raise ValueError(f"unknown demo class {kind!r}")
    return frames, times


DEMO_CLASSES = ("benign", "synflood", "udpflood")


def write_demo_corpus(out_dir: str | Path, *, sessions_per_class: int = 120, seed: int = 0,
                      classes: tuple[str, ...] = DEMO_CLASSES) -> Path:
    """Write one capture per class plus a ``labels.tsv`` manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for kind in classes:
        frames, times = [], []
        t = 1_700_000_000.0
        for s in range(sessions_per_class):
            client = f"192.168.{int(rng.integers(1, 10))}.{int(rng.integers(2, 250))}"
            server = f"10.{int(rng.integers(0, 4))}.0.{int(rng.integers(1, 50))}"
            f, ts = _demo_session(rng, kind, client, server, t)
            frames += f
            times += ts
            t = ts[-1] + float(rng.exponential(0.2))
        order = np.argsort(times, kind="stable")
        recs = records_from_frames([frames[i] for i in order], times=[times[i] for i in order])
        path = out / f"{kind}.pcap"
        write_capture(path, recs)
        lines.append(f"{path.name}\t{kind}")
    manifest = out / "labels.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def halves_images(rng: np.random.Generator, n: int, *, noise: int = 8,
                  weights: tuple[float, float] = (0.5, 0.5)) -> tuple[np.ndarray, np.ndarray]:
    """Two-class images: class 0 has the top half at 0xFF, class 1 the bottom half.

    Every pixel gets uniform integer noise in [-noise, noise], clipped to
    [0, 255].  ``weights`` sets the class proportions (exact counts, shuffled).
    """
    n0 = int(round(weights[0] / sum(weights) * n))
    labels = np.array([0] * n0 + [1] * (n - n0))
    rng.shuffle(labels)
    base = np.zeros((n, 28, 28), dtype=np.int64)
    base[labels == 0, :14] = 255
    base[labels == 1, 14:] = 255
    base += rng.integers(-noise, noise + 1, size=base.shape)
    return np.clip(base, 0, 255).astype(np.uint8), labels


def blob_features(rng: np.random.Generator, n: int, *, n_classes: int = 3, n_features: int = 8,
                  spread: float = 1.0, label_noise: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian class blobs with centres 4 units apart on a random direction per class.

    ``label_noise`` is the fraction of labels replaced by a uniformly random class.
    """
    centres = rng.normal(size=(n_classes, n_features))
    centres *= 4.0 / np.linalg.norm(centres, axis=1, keepdims=True)
    y = rng.integers(0, n_classes, size=n)
    X = centres[y] + rng.normal(scale=spread, size=(n, n_features))
    flip = rng.random(n) < label_noise
    y = y.copy()
    y[flip] = rng.integers(0, n_classes, size=int(flip.sum()))
    return X, y
