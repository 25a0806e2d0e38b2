import numpy as np
import pytest

from trafficlens.pcap import read_packets, write_capture
from trafficlens.synth import random_capture_frames, records_from_frames


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def write_frames(tmp_path):
    """Write frames to a capture file and return the decoded packets."""
    counter = iter(range(10_000))

    def _write(frames, **kw):
        path = tmp_path / f"cap{next(counter)}.pcap"
        write_capture(path, records_from_frames(frames, **kw))
        return read_packets(path)

    return _write


@pytest.fixture
def random_packets(rng, write_frames):
    def _make(n=120, **kw):
        return write_frames(random_capture_frames(rng, n, **kw))

    return _make


import contextlib
import time

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Context manager: time one acceptance criterion and log a PASS/FAIL line."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    @contextlib.contextmanager
    def _run(number, title, limit_s):
        t0 = time.perf_counter()
        try:
            yield
            elapsed = time.perf_counter() - t0
            assert elapsed < limit_s, f"took {elapsed:.1f} s, limit {limit_s} s"
        except BaseException as exc:
            elapsed = time.perf_counter() - t0
            status = "SKIP" if isinstance(exc, pytest.skip.Exception) else "FAIL"
            line = f"criterion {number} {title}: {status} ({elapsed:.2f} s, limit {limit_s} s) {exc}"
            lines.append(line.splitlines()[0])
            print(lines[-1])
            raise
        lines.append(f"criterion {number} {title}: PASS ({elapsed:.2f} s, limit {limit_s} s)")
        print(lines[-1])

    return _run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
