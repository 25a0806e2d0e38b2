import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trafficlens.errors import EmptyFlow
from trafficlens.features import (CONSTANT_ZERO, FEATURE_NAMES, FlowAccumulator, accumulate, extract_flow_features,
                                  finalize, finalize_dict, flow_vector, read_features_csv, write_features_csv)
from trafficlens.pcap import ACK, FIN, PSH, SYN
from trafficlens.synth import random_capture_frames, tcp_frame, udp_frame


def feats(packets):
    return dict(zip(FEATURE_NAMES, flow_vector(packets)))


def batch_oracle(packets, idle=1.0):
    """Direct numpy computation over the whole packet list."""
    ts = np.array([p.timestamp for p in packets])
    size = np.array([p.orig_len for p in packets], dtype=float)
    origin = packets[0].five_tuple
    fwd = np.array([p.five_tuple == origin for p in packets])
    dur = ts.max() - ts.min()
    gaps = np.diff(ts)
    cuts = np.nonzero(gaps > idle)[0]
    bounds = np.concatenate([[0], cuts + 1, [len(ts)]])
    spans = np.array([ts[b - 1] - ts[a] for a, b in zip(bounds[:-1], bounds[1:])])
    f, b = size[fwd], size[~fwd]
    k = min(len(f), len(b))
    if k:
        cov = float(np.cov(f[:k], b[:k], bias=True)[0, 1])
        sx, sy = np.std(f[:k]), np.std(b[:k])
        corr = cov / (sx * sy) if sx > 0 and sy > 0 else 0.0
    else:
        cov = corr = 0.0
    out = {
        "Number": len(ts), "Tot-sum": size.sum(), "Min": size.min(), "Max": size.max(), "AVG": size.mean(),
        "Variance": size.var(), "Std": size.std(), "Tot_size": size[-1],
        "IAT": dur / (len(ts) - 1) if len(ts) > 1 else 0.0,
        "Rate": len(ts) / dur if dur > 0 else 0.0,
        "Srate": fwd.sum() / dur if dur > 0 else 0.0,
        "Drate": (~fwd).sum() / dur if dur > 0 else 0.0,
        "Spkts": fwd.sum(), "Dpkts": (~fwd).sum(), "Sbytes": f.sum(),
        "Header_Length": sum(p.header_total_len for p in packets),
        "Magnitue": math.sqrt((f.mean() if len(f) else 0) + (b.mean() if len(b) else 0)),
        "Weight": len(f) * len(b), "Covariance": cov, "Correlation": corr,
        "Sum_flow_duration": dur, "Min_flow_duration": spans.min(), "Max_flow_duration": spans.max(),
        "Average_flow_duration": spans.mean(), "Std_flow_duration": spans.std(),
        "Flow_active_time": spans.sum(), "Flow_idle_time": gaps[gaps > idle].sum(),
        "Ts": ts.min(),
    }
    for name, bit in (("Syn", SYN), ("Ack", ACK), ("Fin", FIN)):
        out[f"{name}_count"] = sum(bool((p.tcp_flags or 0) & bit) for p in packets)
    return out


def test_single_syn_packet(write_frames):
    (p,) = write_frames([tcp_frame("10.0.0.1", 1, "10.0.0.2", 2, flags=SYN, payload=bytes(6))])
    assert p.orig_len == 60
    f = feats([p])
    assert f["Number"] == 1 and f["Min"] == f["Max"] == f["AVG"] == 60
    assert f["Syn_count"] == 1 and f["Syn_flag_number"] == 1
    assert f["Rate"] == 0 and f["Sum_flow_duration"] == 0


def test_iat_two_packets(write_frames):
    pkts = write_frames([udp_frame("1.1.1.1", 1, "2.2.2.2", 2)] * 2, times=[0.0, 0.5])
    assert feats(pkts)["IAT"] == pytest.approx(0.5)


def test_udp_indicators(write_frames):
    f = feats(write_frames([udp_frame("1.1.1.1", 5000, "2.2.2.2", 53)]))
    assert f["UDP"] == 1 and f["TCP"] == 0 and f["DNS"] == 1 and f["IPv"] == 1


def test_rate_over_three_seconds(write_frames):
    pkts = write_frames([udp_frame("1.1.1.1", 1, "2.2.2.2", 2)] * 3, times=[0.0, 1.0, 2.0])
    f = feats(pkts)
    assert f["Sum_flow_duration"] == pytest.approx(2.0)
    assert f["Rate"] == pytest.approx(1.5)


def test_constant_sizes(write_frames):
    frames = [udp_frame("1.1.1.1", 1, "2.2.2.2", 2, payload=bytes(10)),
              udp_frame("2.2.2.2", 2, "1.1.1.1", 1, payload=bytes(10)),
              udp_frame("1.1.1.1", 1, "2.2.2.2", 2, payload=bytes(10))]
    f = feats(write_frames(frames))
    assert f["Variance"] == 0 and f["Std"] == 0 and f["Correlation"] == 0


def test_empty_flow():
    with pytest.raises(EmptyFlow):
        finalize(FlowAccumulator())
    with pytest.raises(EmptyFlow):
        flow_vector([])


def test_idle_split(write_frames):
    pkts = write_frames([udp_frame("1.1.1.1", 1, "2.2.2.2", 2)] * 4, times=[0.0, 0.5, 3.0, 3.2])
    f = feats(pkts)
    assert f["Flow_active_time"] == pytest.approx(0.7)
    assert f["Flow_idle_time"] == pytest.approx(2.5)
    assert f["Min_flow_duration"] == pytest.approx(0.2)
    assert f["Max_flow_duration"] == pytest.approx(0.5)


def test_streaming_equals_batch(rng, write_frames):
    for _ in range(40):
        n = int(rng.integers(1, 30))
        times = np.cumsum(rng.exponential(0.6, size=n)).tolist()
        flags = [int(rng.choice([SYN, ACK, ACK | PSH, FIN | ACK])) for _ in range(n)]
        frames = []
        for i in range(n):
            pay = bytes(int(rng.integers(0, 100)))
            if rng.random() < 0.5:
                frames.append(tcp_frame("10.0.0.1", 4000, "10.0.0.2", 80, flags=flags[i], payload=pay))
            else:
                frames.append(tcp_frame("10.0.0.2", 80, "10.0.0.1", 4000, flags=flags[i], payload=pay))
        pkts = write_frames(frames, times=times)
        got = feats(pkts)
        for name, want in batch_oracle(pkts).items():
            assert got[name] == pytest.approx(want, rel=1e-9, abs=1e-9), name


def test_invariants_on_random_sessions(random_packets):
    pkts = random_packets(300)
    rows = extract_flow_features(pkts, "session")
    assert rows
    for _, v in rows:
        assert v.shape == (len(FEATURE_NAMES),)
        assert np.all(np.isfinite(v))
        f = dict(zip(FEATURE_NAMES, v))
        assert f["Min"] <= f["AVG"] + 1e-9 and f["AVG"] <= f["Max"] + 1e-9
        assert f["Variance"] >= 0
        for name in FEATURE_NAMES:
            if name.endswith("_flag_number") or name in ("TCP", "UDP", "ICMP", "IGMP", "ARP", "IPv", "LLC", "HTTP",
                                                          "HTTPS", "DNS", "SSH", "SMTP", "IRC", "Telnet", "DHCP",
                                                          "MQTT", "CoAP"):
                assert f[name] in (0.0, 1.0), name
        for name in CONSTANT_ZERO:
            assert f[name] == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1400), min_size=1, max_size=12), st.randoms(use_true_random=False))
def test_permutation_within_equal_timestamps(tmp_path_factory, payloads, rnd):
    from trafficlens.pcap import read_packets, write_capture
    from trafficlens.synth import records_from_frames

    frames = [udp_frame("1.1.1.1", 1, "2.2.2.2", 2, payload=bytes(n)) for n in payloads]
    shuffled = frames[:]
    rnd.shuffle(shuffled)
    d = tmp_path_factory.mktemp("perm")
    out = []
    for name, fr in (("a", frames), ("b", shuffled)):
        write_capture(d / name, records_from_frames(fr, times=[1.0] * len(fr)))
        out.append(feats(read_packets(d / name)))
    for name in ("Min", "Max", "AVG", "Variance", "Number", "Tot-sum", "Spkts", "Dpkts"):
        assert out[0][name] == pytest.approx(out[1][name], rel=1e-12), name


def test_accumulate_matches_add(random_packets):
    pkts = [p for p in random_packets(50) if p.five_tuple is not None]
    a, b = FlowAccumulator(), FlowAccumulator()
    for p in pkts:
        a.add(p)
        accumulate(b, p)
    assert finalize_dict(a) == finalize_dict(b)


def test_csv_round_trip(tmp_path, rng):
    X = rng.normal(size=(7, len(FEATURE_NAMES))) * 10.0 ** rng.integers(-8, 8, size=(7, 1))
    labels = [f"c{i % 2}" for i in range(7)]
    write_features_csv(X, labels, tmp_path / "f.csv")
    back, lab, names = read_features_csv(tmp_path / "f.csv")
    assert names == list(FEATURE_NAMES) and lab == labels
    np.testing.assert_allclose(back, X, rtol=1e-12)
    assert np.array_equal(back, X)
    line = (tmp_path / "f.csv").read_text().splitlines()[1]
    assert len(line.split(",")) == len(FEATURE_NAMES) + 1


def test_csv_header_only(tmp_path):
    write_features_csv([], [], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().strip() == ",".join([*FEATURE_NAMES, "label"])
    X, labels, _ = read_features_csv(tmp_path / "e.csv")
    assert X.shape == (0, len(FEATURE_NAMES)) and labels == []
