"""Scan probe classification, per-scanner aggregation and the epsilon filter."""

import ipaddress
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

from .netutil import ip_key

# conn.log states for attempts that never completed the TCP handshake
DEFAULT_PROBE_STATES = frozenset({"S0", "REJ", "RSTOS0", "SH"})
DEFAULT_PROTOCOLS = frozenset({"tcp"})

PROBE_COLUMNS = ("scanner_ip", "src_port", "target_ip", "target_port", "ts")


class ScanProbe(NamedTuple):
    scanner_ip: ipaddress.IPv4Address | ipaddress.IPv6Address
    src_port: int
    target_ip: ipaddress.IPv4Address | ipaddress.IPv6Address
    target_port: int
    ts: float


@dataclass
class ScannerProfile:
    scanner_ip: ipaddress.IPv4Address | ipaddress.IPv6Address
    probes: list = field(default_factory=list)

    def __post_init__(self):
        if not self.probes:
            raise ValueError(f"empty profile for {self.scanner_ip}")
        for p in self.probes:
            if p.scanner_ip != self.scanner_ip:
                raise ValueError(f"probe from {p.scanner_ip} in profile of {self.scanner_ip}")

    def __len__(self):
        return len(self.probes)


@dataclass(frozen=True)
class ProbeClassifierConfig:
    probe_states: frozenset = DEFAULT_PROBE_STATES
    protocols: frozenset = DEFAULT_PROTOCOLS

    def __post_init__(self):
        object.__setattr__(self, "probe_states", frozenset(self.probe_states))
        object.__setattr__(self, "protocols", frozenset(self.protocols))
        if not self.probe_states:
            raise ValueError("probe_states must not be empty")


DEFAULT_CLASSIFIER = ProbeClassifierConfig()


def classify_probe(record, cfg=DEFAULT_CLASSIFIER):
    """Return a :class:`ScanProbe` for a failed attempt, else ``None``."""
    if record.proto in cfg.protocols and record.conn_state in cfg.probe_states:
        return ScanProbe(record.orig_ip, record.orig_port, record.resp_ip, record.resp_port, record.ts)
    return None


def iter_probes(records, cfg=DEFAULT_CLASSIFIER):
    states = cfg.probe_states
    protos = cfg.protocols
    for r in records:
        if r.proto in protos and r.conn_state in states:
            yield ScanProbe(r.orig_ip, r.orig_port, r.resp_ip, r.resp_port, r.ts)


def aggregate_scanners(probes):
    """Group probes by source IP; profiles come back in canonical IP order.

    Repeated attempts to the same target are kept, each counts as a probe.
    """
    groups = defaultdict(list)
    for p in probes:
        groups[p.scanner_ip].append(p)
    return [ScannerProfile(ip, groups[ip]) for ip in sorted(groups, key=ip_key)]


def merge_profiles(shards):
    """Merge per-shard profile lists (e.g. from hash-partitioned workers)."""
    return aggregate_scanners(p for shard in shards for prof in shard for p in prof.probes)


def filter_epsilon(profiles, epsilon):
    """Drop scanners with fewer than ``epsilon`` probes."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return [p for p in profiles if len(p.probes) >= epsilon]


class ProbeCounter:
    """Streaming per-scanner probe counts; memory grows with scanner count only."""

    def __init__(self):
        self.counts = Counter()
        self.total = 0

    def add(self, probe):
        self.counts[probe.scanner_ip] += 1
        self.total += 1

    def consume(self, probes):
        for p in probes:
            self.add(p)
            yield p

    @property
    def scanners(self):
        return len(self.counts)

    def retained(self, epsilon):
        """(scanners, probes) left after the epsilon filter."""
        kept = [c for c in self.counts.values() if c >= epsilon]
        return len(kept), sum(kept)


# -- probe TSV ---------------------------------------------------------------

def format_probe(p):
    return f"{p.scanner_ip}\t{p.src_port}\t{p.target_ip}\t{p.target_port}\t{p.ts!r}"


def write_probes(probes, fh):
    fh.write("\t".join(PROBE_COLUMNS) + "\n")
    n = 0
    for p in probes:
        fh.write(format_probe(p))
        fh.write("\n")
        n += 1
    return n


def parse_probe(line):
    a, sp, b, tp, ts = line.rstrip("\r\n").split("\t")
    sp, tp = int(sp), int(tp)
    if not (0 <= sp <= 65535 and 0 <= tp <= 65535):
        raise ValueError(f"port out of range in {line!r}")
    return ScanProbe(ipaddress.ip_address(a), sp, ipaddress.ip_address(b), tp, float(ts))


def read_probes(fh):
    """Read a probe TSV written by :func:`write_probes`."""
    header = None
    for lineno, line in enumerate(fh, 1):
        if isinstance(line, bytes):
            line = line.decode()
        if not line.strip():
            continue
        if header is None:
            header = tuple(line.rstrip("\r\n").split("\t"))
            if header != PROBE_COLUMNS:
                raise ValueError(f"not a probe file (header {header!r})")
            continue
        try:
            yield parse_probe(line)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
