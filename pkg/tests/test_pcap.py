import struct

import dpkt
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trafficlens.errors import BadMagic, FormatError, Truncated, UnsupportedFormat, UnsupportedLinktype
from trafficlens.pcap import (ACK, CaptureMeta, FIN, PSH, PROTO_ICMP, PROTO_TCP, PROTO_UDP, RawRecord, SYN,
                              decode_packet, open_capture, read_packets, read_records, write_capture)
from trafficlens.synth import (arp_request, ethernet, icmp_frame, ipv4, ipv6, records_from_frames, tcp, tcp_frame,
                               udp, udp_frame)

# Hand-assembled Ethernet + IPv4 + TCP SYN, 54 bytes, no payload.
SYN_54 = bytes.fromhex(
    "001122334455" "66778899aabb" "0800"
    "45000028" "00010000" "40060000" "c0a80001" "c0a80002"
    "30390050" "00000000" "00000000" "5002ffff" "00000000"
)

META = CaptureMeta("little", "micro", 65535, 1)


def raw(data, ts=0, frac=0):
    return RawRecord(ts, frac, len(data), len(data), data)


@pytest.mark.parametrize("byte_order", ["little", "big"])
@pytest.mark.parametrize("resolution", ["micro", "nano"])
def test_round_trip_both_orders_and_resolutions(tmp_path, byte_order, resolution):
    recs = [RawRecord(1_700_000_000 + i, i * 7919 % 999_999, 0, 0, bytes([i]) * i) for i in range(20)]
    recs = [r._replace(incl_len=len(r.data), orig_len=len(r.data) + 3) for r in recs]
    path = tmp_path / "x.pcap"
    write_capture(path, recs, byte_order=byte_order, ts_resolution=resolution)
    meta, back = read_records(path)
    assert back == recs
    assert meta.byte_order == byte_order and meta.ts_resolution == resolution
    # rewrite is bit-identical
    path2 = tmp_path / "y.pcap"
    write_capture(path2, back, byte_order=byte_order, ts_resolution=resolution)
    assert path.read_bytes() == path2.read_bytes()


def test_little_endian_magic_bytes(tmp_path):
    path = tmp_path / "le.pcap"
    write_capture(path, [])
    assert path.read_bytes()[:4] == bytes.fromhex("d4c3b2a1")
    meta, reader = open_capture(path)
    with reader:
        assert meta.byte_order == "little" and meta.ts_resolution == "micro"
        assert reader.next_packet() is None


def test_nano_timestamps(tmp_path):
    path = tmp_path / "n.pcap"
    write_capture(path, [(5, 250_000_000, b"\x00" * 14)], ts_resolution="nano")
    assert read_packets(path)[0].timestamp == pytest.approx(5.25)


def test_header_only_file_is_empty_stream(tmp_path):
    path = tmp_path / "e.pcap"
    write_capture(path, [])
    assert path.stat().st_size == 24
    assert read_packets(path) == []


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.pcap"
    path.write_bytes(b"\x00\x01\x02\x03" + b"\x00" * 20)
    with pytest.raises(BadMagic):
        open_capture(path)


def test_pcapng_rejected_by_name(tmp_path):
    path = tmp_path / "ng.pcapng"
    path.write_bytes(bytes.fromhex("0a0d0d0a") + b"\x00" * 28)
    with pytest.raises(UnsupportedFormat, match="pcapng"):
        open_capture(path)


def test_short_global_header(tmp_path):
    path = tmp_path / "short.pcap"
    path.write_bytes(bytes.fromhex("d4c3b2a1") + b"\x00" * 10)
    with pytest.raises(Truncated):
        open_capture(path)


def test_unsupported_linktype(tmp_path):
    path = tmp_path / "lt.pcap"
    write_capture(path, [], linktype=101)
    with pytest.raises(UnsupportedLinktype):
        open_capture(path)


def test_record_longer_than_file(tmp_path):
    path = tmp_path / "t.pcap"
    write_capture(path, [(0, 0, b"\xaa" * 60)])
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(Truncated):
        read_records(path)


def test_zero_length_record_and_ordering(tmp_path):
    path = tmp_path / "z.pcap"
    write_capture(path, [(0, 0, b""), (1, 0, b"\x01" * 60)])
    pkts = read_packets(path)
    assert [p.index for p in pkts] == [0, 1]
    assert pkts[0].captured_bytes == b"" and pkts[0].malformed
    assert pkts[1].captured_bytes == b"\x01" * 60


def test_syn_packet_matches_reference_decoder():
    p = decode_packet(raw(SYN_54), META)
    ref = dpkt.ethernet.Ethernet(SYN_54)
    assert p.five_tuple.src_ip == ref.data.src and p.five_tuple.dst_ip == ref.data.dst
    assert (p.five_tuple.src_port, p.five_tuple.dst_port) == (ref.data.data.sport, ref.data.data.dport) == (12345, 80)
    assert p.five_tuple.protocol == PROTO_TCP
    assert p.tcp_flags == ref.data.data.flags == SYN
    assert p.flag_names() == {"SYN"}
    assert p.l7_offset == 54 == p.header_total_len
    assert p.payload == b""
    assert not p.malformed


def test_arp_has_no_tuple():
    p = decode_packet(raw(arp_request()), META)
    assert p.five_tuple is None and p.l7_offset is None and p.ethertype == 0x0806


def test_truncated_before_tcp_is_flagged():
    p = decode_packet(raw(SYN_54[:34]), META)
    assert p.malformed and p.l7_offset is None


def test_icmp_gets_portless_tuple():
    p = decode_packet(raw(icmp_frame("10.0.0.1", "10.0.0.2")), META)
    assert p.five_tuple.protocol == PROTO_ICMP
    assert (p.five_tuple.src_port, p.five_tuple.dst_port) == (0, 0)
    assert p.l7_offset is None


def test_vlan_and_ipv6_offsets():
    seg = udp(53, 5353, b"hello")
    frame = ethernet(ipv6(seg, PROTO_UDP, "fe80::1", "fe80::2"), 0x86DD, vlan_ids=(10, 20))
    p = decode_packet(raw(frame), META)
    assert p.vlan_tags == 2
    assert p.l7_offset == 14 + 8 + 40 + 8
    assert p.payload == b"hello"
    assert len(p.five_tuple.src_ip) == 16


def test_tcp_options_shift_payload():
    seg = tcp(1, 2, flags=ACK | PSH, payload=b"data", options=b"\x01\x01\x01\x01")
    p = decode_packet(raw(ethernet(ipv4(seg, PROTO_TCP, "1.1.1.1", "2.2.2.2"), 0x0800)), META)
    assert p.l7_offset == 14 + 20 + 24
    assert p.payload == b"data"
    assert p.flag_names() == {"ACK", "PSH"}


def test_ethernet_padding_excluded_from_payload():
    frame = udp_frame("10.0.0.1", 1, "10.0.0.2", 2, payload=b"ab")
    padded = frame + b"\x00" * (60 - len(frame))
    p = decode_packet(raw(padded), META)
    assert p.payload == b"ab"


def test_l7_offset_formula_on_random_frames(rng):
    from trafficlens.synth import random_capture_frames

    for i, frame in enumerate(random_capture_frames(rng, 300)):
        p = decode_packet(raw(frame), META, i)
        if p.l7_offset is None:
            continue
        ref = dpkt.ethernet.Ethernet(frame)
        l4 = ref.data.data
        l4_len = l4.off * 4 if isinstance(l4, dpkt.tcp.TCP) else 8
        assert p.l7_offset == 14 + 4 * p.vlan_tags + ref.data.hl * 4 + l4_len
        assert p.payload == bytes(l4.data)
        assert p.header_total_len == p.l7_offset <= len(p.captured_bytes)


def test_all_flag_bits():
    for bit in range(8):
        p = decode_packet(raw(tcp_frame("1.1.1.1", 1, "2.2.2.2", 2, flags=1 << bit)), META)
        assert p.tcp_flags == 1 << bit
    p = decode_packet(raw(tcp_frame("1.1.1.1", 1, "2.2.2.2", 2, flags=FIN | ACK)), META)
    assert p.has_flag(FIN) and p.has_flag(ACK) and not p.has_flag(SYN)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=120))
def test_decoder_never_overreads(data):
    p = decode_packet(raw(data), META)
    assert p.captured_bytes == data
    if p.l7_offset is not None:
        assert p.l7_offset <= len(data)
        assert p.header_total_len == p.l7_offset
    if p.five_tuple is not None:
        assert len(p.five_tuple.src_ip) == len(p.five_tuple.dst_ip)


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=200))
def test_arbitrary_files_only_raise_format_errors(tmp_path_factory, blob):
    path = tmp_path_factory.mktemp("fuzz") / "f.pcap"
    path.write_bytes(blob)
    try:
        read_packets(path)
    except FormatError:
        pass


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=200))
def test_valid_header_random_body(tmp_path_factory, body):
    path = tmp_path_factory.mktemp("fuzz") / "f.pcap"
    path.write_bytes(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1) + body)
    try:
        for p in read_packets(path):
            assert p.l7_offset is None or p.l7_offset <= len(p.captured_bytes)
    except Truncated:
        pass
