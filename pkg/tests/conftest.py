import ipaddress

import pytest
from hypothesis import strategies as st

from scancorr.detect import ScanProbe, ScannerProfile
from scancorr.fingerprint import FEW, MULTIPLE, SINGLE, Fingerprint, GeoLocation, PortClass


def ip(text):
    return ipaddress.ip_address(text)


def probe(scanner, target, port, src=40000, ts=0.0):
    return ScanProbe(ip(scanner), src, ip(target), port, ts)


def profile(scanner, targets, src=40000):
    """Profile from (target, port) pairs; ``src`` may be one port or a list."""
    srcs = src if isinstance(src, list) else [src] * len(targets)
    return ScannerProfile(ip(scanner), [probe(scanner, t, p, s, float(k)) for k, ((t, p), s) in enumerate(zip(targets, srcs))])


# small pools so that collisions (equal ports, hosts, prefixes) are common
_V4 = ["10.0.0.1", "10.0.0.2", "10.0.0.77", "10.1.0.1", "192.0.2.9", "198.51.100.200", "88.138.143.5"]
_V6 = ["2001:db8::1", "2001:db8::2", "2001:db8:1::1"]
_HOSTS = ["133.242.179.1", "133.242.179.2", "133.242.0.9"]
_PLACES = [
    GeoLocation(),
    GeoLocation("FR", 48.85, 2.35),
    GeoLocation("FR", 43.60, 1.44),
    GeoLocation("NL", 52.37, 4.90),
    GeoLocation("NL"),
    GeoLocation("BE", 50.85, 4.35),
]

port_classes = st.one_of(
    st.sampled_from([30443, 46960, 55776, 22]).map(lambda p: PortClass(SINGLE, p)),
    st.just(PortClass(FEW)),
    st.just(PortClass(MULTIPLE)),
)


@st.composite
def fingerprints(draw, addresses=None):
    version = draw(st.sampled_from([4, 4, 4, 6]))
    pool = addresses or (_V4 if version == 4 else _V6)
    scanner = ip(draw(st.sampled_from(pool)))
    n_hosts = draw(st.integers(1, 400))
    n_probes = draw(st.integers(n_hosts, n_hosts * 3))
    vertical = n_hosts > 1
    host = None if vertical else ip(draw(st.sampled_from(_HOSTS)))
    return Fingerprint(
        scanner_ip=scanner,
        src_ports=draw(port_classes),
        dst_ports=draw(port_classes),
        vertical=vertical,
        host=host,
        horizontal=draw(st.booleans()),
        validation=draw(st.booleans()),
        ip_version=scanner.version,
        target_hosts=n_hosts,
        probe_count=n_probes,
        location=draw(st.sampled_from(_PLACES)),
    )


@pytest.fixture
def fr_profile():
    return profile("88.138.143.3", [("133.242.179.1", 30443), ("133.242.179.2", 30443), ("133.242.179.3", 30443)], src=30443)


# acceptance results, echoed once at the end of the session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
