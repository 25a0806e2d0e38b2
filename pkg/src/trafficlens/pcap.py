"""Reader and writer for classic libpcap files, plus an Ethernet/IP/TCP/UDP decoder.

Layout (https://wiki.wireshark.org/Development/LibpcapFileFormat)::

    global header (24 bytes): magic u32, version u16.u16, thiszone i32,
                              sigfigs u32, snaplen u32, linktype u32
    record header (16 bytes): ts_sec u32, ts_frac u32, incl_len u32, orig_len u32
    record data:              incl_len bytes

Both byte orders and both timestamp resolutions are accepted.
"""
from __future__ import annotations

import struct
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, NamedTuple, Optional

from .errors import BadMagic, Truncated, UnsupportedFormat, UnsupportedLinktype

LINKTYPE_ETHERNET = 1

MAGIC_MICRO = 0xA1B2C3D4
MAGIC_NANO = 0xA1B23C4D
PCAPNG_MAGIC = 0x0A0D0D0A

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

ETH_HEADER_LEN = 14
VLAN_TAG_LEN = 4
VLAN_ETHERTYPES = (0x8100, 0x88A8, 0x9100)

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_ARP = 0x0806
ETHERTYPE_RARP = 0x8035

PROTO_ICMP = 1
PROTO_IGMP = 2
PROTO_TCP = 6
PROTO_UDP = 17
PROTO_ICMPV6 = 58

# TCP flag bits, in header order.
FIN, SYN, RST, PSH, ACK, URG, ECE, CWR = (1 << i for i in range(8))
TCP_FLAG_NAMES = ("FIN", "SYN", "RST", "PSH", "ACK", "URG", "ECE", "CWR")


@dataclass(frozen=True)
class CaptureMeta:
    byte_order: str  # "little" or "big", as stored in the file
    ts_resolution: str  # "micro" or "nano"
    snaplen: int
    linktype: int
    version: tuple[int, int] = (2, 4)
    thiszone: int = 0
    sigfigs: int = 0

    @property
    def endian(self) -> str:
        return "<" if self.byte_order == "little" else ">"

    @property
    def swapped(self) -> bool:
        """True when the file byte order differs from the host's."""
        return self.byte_order != sys.byteorder

    @property
    def ts_divisor(self) -> int:
        return 1_000_000_000 if self.ts_resolution == "nano" else 1_000_000


class RawRecord(NamedTuple):
    ts_sec: int
    ts_frac: int
    incl_len: int
    orig_len: int
    data: bytes


@dataclass(frozen=True)
class FiveTuple:
    src_ip: bytes
    dst_ip: bytes
    src_port: int
    dst_port: int
    protocol: int

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.dst_ip, self.src_ip, self.dst_port, self.src_port, self.protocol)

    def __str__(self) -> str:
        return f"{format_ip(self.src_ip)}:{self.src_port}->{format_ip(self.dst_ip)}:{self.dst_port}/{self.protocol}"


@dataclass(frozen=True)
class ParsedPacket:
    """One decoded packet. Offsets index into ``captured_bytes``."""

    index: int
    timestamp: float
    captured_bytes: bytes
    orig_len: int
    five_tuple: Optional[FiveTuple] = None
    tcp_flags: Optional[int] = None
    header_total_len: int = 0
    l7_offset: Optional[int] = None
    # End of the transport payload; excludes Ethernet trailer padding.
    l7_end: Optional[int] = None
    malformed: bool = False
    ethertype: Optional[int] = None
    llc: bool = False
    vlan_tags: int = 0
    network_offset: Optional[int] = None
    ip_version: Optional[int] = None
    is_fragment: bool = False
    tcp_seq: Optional[int] = None
    ts_sec: int = 0
    ts_frac: int = 0

    @property
    def payload(self) -> bytes:
        if self.l7_offset is None:
            return b""
        end = len(self.captured_bytes) if self.l7_end is None else self.l7_end
        return self.captured_bytes[self.l7_offset:end]

    def has_flag(self, bit: int) -> bool:
        return bool(self.tcp_flags is not None and self.tcp_flags & bit)

    def flag_names(self) -> set[str]:
        if self.tcp_flags is None:
            return set()
        return {name for i, name in enumerate(TCP_FLAG_NAMES) if self.tcp_flags >> i & 1}


def format_ip(raw: bytes) -> str:
    if len(raw) == 4:
        return ".".join(str(b) for b in raw)
    return ":".join(raw[i:i + 2].hex() for i in range(0, len(raw), 2))


def _parse_global_header(head: bytes) -> CaptureMeta:
    if len(head) < 4:
        raise Truncated("file shorter than the 24-byte pcap global header")
    (magic_be,) = struct.unpack(">I", head[:4])
    if magic_be == PCAPNG_MAGIC:
        raise UnsupportedFormat("pcapng files are not supported; convert to libpcap (e.g. editcap -F pcap)")
    table = {
        MAGIC_MICRO: ("big", "micro"),
        MAGIC_NANO: ("big", "nano"),
        struct.unpack("<I", struct.pack(">I", MAGIC_MICRO))[0]: ("little", "micro"),
        struct.unpack("<I", struct.pack(">I", MAGIC_NANO))[0]: ("little", "nano"),
    }
    if magic_be not in table:
        raise BadMagic(f"unknown pcap magic 0x{magic_be:08X}")
    if len(head) < GLOBAL_HEADER_LEN:
        raise Truncated("file shorter than the 24-byte pcap global header")
    byte_order, resolution = table[magic_be]
    e = "<" if byte_order == "little" else ">"
    _, vmaj, vmin, thiszone, sigfigs, snaplen, linktype = struct.unpack(e + "IHHiIII", head)
    return CaptureMeta(byte_order, resolution, snaplen, linktype, (vmaj, vmin), thiszone, sigfigs)


class PcapReader:
    """Streams raw records from an open capture; use as a context manager or iterator."""

    def __init__(self, fp: BinaryIO, meta: CaptureMeta, *, owns_file: bool = True):
        self._fp = fp
        self.meta = meta
        self._owns = owns_file
        self._hdr = struct.Struct(meta.endian + "IIII")
        self.records_read = 0

    def next_packet(self) -> Optional[RawRecord]:
        head = self._fp.read(RECORD_HEADER_LEN)
        if not head:
            return None
        if len(head) < RECORD_HEADER_LEN:
            raise Truncated(f"record {self.records_read}: header cut short ({len(head)} of 16 bytes)")
        ts_sec, ts_frac, incl_len, orig_len = self._hdr.unpack(head)
        data = self._fp.read(incl_len)
        if len(data) < incl_len:
            raise Truncated(f"record {self.records_read}: incl_len={incl_len} but only {len(data)} bytes remain")
        self.records_read += 1
        return RawRecord(ts_sec, ts_frac, incl_len, orig_len, data)

    def __iter__(self) -> Iterator[RawRecord]:
        while (rec := self.next_packet()) is not None:
            yield rec

    def packets(self) -> Iterator[ParsedPacket]:
        for i, rec in enumerate(self):
            yield decode_packet(rec, self.meta, i)

    def close(self) -> None:
        if self._owns:
            self._fp.close()

    def __enter__(self) -> "PcapReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_capture(path: str | Path) -> tuple[CaptureMeta, PcapReader]:
    """Open ``path`` and validate its global header.

    Raises BadMagic, Truncated, UnsupportedFormat (pcapng) or
    UnsupportedLinktype (anything but Ethernet).
    """
    fp = open(path, "rb")
    try:
        meta = _parse_global_header(fp.read(GLOBAL_HEADER_LEN))
        if meta.linktype != LINKTYPE_ETHERNET:
            raise UnsupportedLinktype(f"linktype {meta.linktype} not supported (only 1 = Ethernet)")
    except BaseException:
        fp.close()
        raise
    return meta, PcapReader(fp, meta)


def read_records(path: str | Path) -> tuple[CaptureMeta, list[RawRecord]]:
    meta, reader = open_capture(path)
    with reader:
        return meta, list(reader)


def read_packets(path: str | Path) -> list[ParsedPacket]:
    meta, reader = open_capture(path)
    with reader:
        return list(reader.packets())


def write_capture(
    path: str | Path,
    records: Iterable[RawRecord | tuple],
    *,
    byte_order: str = "little",
    ts_resolution: str = "micro",
    snaplen: int = 65535,
    linktype: int = LINKTYPE_ETHERNET,
) -> None:
    """Write records as a libpcap file.

    ``records`` items are RawRecord or ``(ts_sec, ts_frac, data[, orig_len])``;
    incl_len is always ``len(data)``.
    """
    e = "<" if byte_order == "little" else ">"
    magic = MAGIC_NANO if ts_resolution == "nano" else MAGIC_MICRO
    with open(path, "wb") as fp:
        fp.write(struct.pack(e + "IHHiIII", magic, 2, 4, 0, 0, snaplen, linktype))
        hdr = struct.Struct(e + "IIII")
        for rec in records:
            if isinstance(rec, RawRecord):
                ts_sec, ts_frac, data, orig_len = rec.ts_sec, rec.ts_frac, rec.data, rec.orig_len
            else:
                ts_sec, ts_frac, data = rec[0], rec[1], rec[2]
                orig_len = rec[3] if len(rec) > 3 else len(data)
            fp.write(hdr.pack(ts_sec, ts_frac, len(data), orig_len))
            fp.write(data)


def decode_packet(raw: RawRecord, meta: CaptureMeta, index: int = 0) -> ParsedPacket:
    """Decode link, network and transport headers of one record.

    Never reads past ``raw.data``; inconsistent or truncated headers set
    ``malformed`` instead of raising.
    """
    data = raw.data
    n = len(data)
    fields: dict = dict(
        index=index,
        timestamp=raw.ts_sec + raw.ts_frac / meta.ts_divisor,
        captured_bytes=data,
        orig_len=raw.orig_len,
        ts_sec=raw.ts_sec,
        ts_frac=raw.ts_frac,
    )
    if n < ETH_HEADER_LEN:
        return ParsedPacket(malformed=True, header_total_len=n, **fields)

    off = 12
    ethertype = int.from_bytes(data[off:off + 2], "big")
    vlan = 0
    while ethertype in VLAN_ETHERTYPES:
        if off + 6 > n:
            return ParsedPacket(malformed=True, header_total_len=n, vlan_tags=vlan, ethertype=ethertype, **fields)
        vlan += 1
        off += VLAN_TAG_LEN
        ethertype = int.from_bytes(data[off:off + 2], "big")
    net = off + 2
    fields.update(ethertype=ethertype, vlan_tags=vlan, header_total_len=net)
    if ethertype <= 1500:
        # 802.3 length field: LLC/SNAP frame
        return ParsedPacket(llc=True, **fields)

    if ethertype == ETHERTYPE_IPV4:
        if net + 20 > n:
            return ParsedPacket(malformed=True, network_offset=net, ip_version=4, **fields)
        ihl = (data[net] & 0x0F) * 4
        if ihl < 20 or net + ihl > n:
            return ParsedPacket(malformed=True, network_offset=net, ip_version=4, **fields)
        total_len = int.from_bytes(data[net + 2:net + 4], "big")
        frag = int.from_bytes(data[net + 6:net + 8], "big")
        is_fragment = bool(frag & 0x2000) or (frag & 0x1FFF) > 0
        proto = data[net + 9]
        src, dst = data[net + 12:net + 16], data[net + 16:net + 20]
        l4 = net + ihl
        ip_end = min(n, net + total_len) if total_len >= ihl else n
        later_fragment = (frag & 0x1FFF) > 0
        version = 4
    elif ethertype == ETHERTYPE_IPV6:
        if net + 40 > n:
            return ParsedPacket(malformed=True, network_offset=net, ip_version=6, **fields)
        payload_len = int.from_bytes(data[net + 4:net + 6], "big")
        proto = data[net + 6]
        src, dst = data[net + 8:net + 24], data[net + 24:net + 40]
        l4 = net + 40
        ip_end = min(n, l4 + payload_len)
        is_fragment = proto == 44
        later_fragment = False
        version = 6
    else:
        return ParsedPacket(**fields)

    fields.update(network_offset=net, ip_version=version, is_fragment=is_fragment, header_total_len=l4)
    portless = FiveTuple(src, dst, 0, 0, proto)
    if proto not in (PROTO_TCP, PROTO_UDP) or later_fragment:
        return ParsedPacket(five_tuple=portless, **fields)

    tuple_ = None
    if l4 + 4 <= n:
        sport = int.from_bytes(data[l4:l4 + 2], "big")
        dport = int.from_bytes(data[l4 + 2:l4 + 4], "big")
        tuple_ = FiveTuple(src, dst, sport, dport, proto)

    if proto == PROTO_TCP:
        if l4 + 20 > n:
            return ParsedPacket(five_tuple=tuple_, malformed=True, **fields)
        thl = (data[l4 + 12] >> 4) * 4
        flags = data[l4 + 13]
        seq = int.from_bytes(data[l4 + 4:l4 + 8], "big")
        fields.update(tcp_flags=flags, tcp_seq=seq)
        if thl < 20 or l4 + thl > n:
            return ParsedPacket(five_tuple=tuple_, malformed=True, **fields)
        l7 = l4 + thl
    else:
        if l4 + 8 > n:
            return ParsedPacket(five_tuple=tuple_, malformed=True, **fields)
        l7 = l4 + 8
    fields["header_total_len"] = l7
    return ParsedPacket(five_tuple=tuple_, l7_offset=l7, l7_end=max(l7, ip_end), **fields)
