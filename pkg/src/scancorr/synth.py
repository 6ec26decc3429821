"""Labelled synthetic connection logs and pairwise clustering evaluation.

Randomness: every draw comes from a PCG64 stream derived from the scenario
seed with ``SeedSequence(seed, spawn_key=...)``. Keys are ``(0, c)`` for
campaign-level draws, ``(0, c, s)`` for scanner ``s`` of campaign ``c``,
``(1, i)`` for lone noise scanners and ``(2, i)`` for benign sources, so
appending a campaign leaves the draws of earlier ones untouched.
"""

import ipaddress
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .fingerprint import GeoDatabase, GeoLocation
from .ingest import ConnRecord
from .netutil import ip_key, parse_network

STRATEGIES = ("fixed_shared", "fixed_per_scanner", "ephemeral_random")
WINDOW = 900.0  # seconds
T0 = 1557014400.0
EPHEMERAL = (32768, 61000)

# (country, lat, lon) pool for noise sources
_PLACES = (
    ("US", 37.75, -97.82), ("CN", 34.77, 113.72), ("RU", 55.75, 37.62), ("BR", -23.55, -46.63),
    ("IN", 19.08, 72.88), ("DE", 50.11, 8.68), ("GB", 51.51, -0.13), ("KR", 37.57, 126.98),
    ("VN", 21.03, 105.85), ("ID", -6.21, 106.85), ("TR", 41.01, 28.98), ("IR", 35.69, 51.39),
    ("UA", 50.45, 30.52), ("AR", -34.60, -58.38), ("ZA", -26.20, 28.05), ("MX", 19.43, -99.13),
    ("TW", 25.03, 121.57), ("TH", 13.76, 100.50), ("EG", 30.04, 31.24), ("PL", 52.23, 21.01),
)


class SpecCapacityExceeded(ValueError):
    pass


def _stream(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass
class CampaignSpec:
    label: str
    scanner_count: int
    source_cidr: object
    target_cidr: object
    target_count: int
    dst_ports: list
    src_port_strategy: str = "fixed_shared"
    source_location: GeoLocation = field(default_factory=GeoLocation)
    # total probes per scanner, clamped so every assigned host is probed
    probes_per_scanner: tuple | None = None
    validation_retries: bool = False
    src_port: int | None = None  # pins the shared port for fixed_shared

    def __post_init__(self):
        if isinstance(self.source_cidr, str):
            self.source_cidr = parse_network(self.source_cidr)
        if isinstance(self.target_cidr, str):
            self.target_cidr = parse_network(self.target_cidr)
        if isinstance(self.source_location, dict):
            self.source_location = GeoLocation(**self.source_location)
        self.dst_ports = sorted(set(int(p) for p in self.dst_ports))
        if self.probes_per_scanner is not None:
            self.probes_per_scanner = tuple(self.probes_per_scanner)
        if self.scanner_count < 1:
            raise ValueError("scanner_count must be >= 1")
        if self.src_port_strategy not in STRATEGIES:
            raise ValueError(f"unknown src_port_strategy {self.src_port_strategy!r}")
        if not self.dst_ports or not all(0 <= p <= 65535 for p in self.dst_ports):
            raise ValueError("dst_ports must be a non-empty set of ports")
        if self.source_cidr.version != self.target_cidr.version:
            raise ValueError("source and target must share an IP version")
        if self.probes_per_scanner is not None:
            lo, hi = self.probes_per_scanner
            if not 1 <= lo <= hi:
                raise ValueError("probes_per_scanner needs 1 <= min <= max")
        if self.scanner_count > self.source_cidr.num_addresses:
            raise SpecCapacityExceeded(
                f"{self.label}: {self.scanner_count} scanners do not fit in {self.source_cidr}"
            )
        if not self.scanner_count <= self.target_count <= self.target_cidr.num_addresses:
            raise SpecCapacityExceeded(
                f"{self.label}: target_count must lie in [scanner_count, size of {self.target_cidr}]"
            )

    @property
    def ip_version(self):
        return self.source_cidr.version

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class NoiseSpec:
    benign_failure_count: int = 0
    lone_scanner_count: int = 0
    # lone scanners emit at least this many probes so they survive the filter
    lone_min_probes: int = 5

    def __post_init__(self):
        if self.benign_failure_count < 0 or self.lone_scanner_count < 0:
            raise ValueError("noise counts must be non-negative")


@dataclass
class SyntheticDataset:
    records: list
    truth: dict  # scanner ip -> campaign label, None for noise
    geo: GeoDatabase

    def probe_count(self):
        return sum(1 for r in self.records if r.conn_state != "SF")


def _sample_addresses(rng, net, count, taken):
    size = net.num_addresses
    base = int(net.network_address)
    cls = type(net.network_address)
    out = []
    if size <= 4 * count + 64:
        for off in rng.permutation(size):
            ip = cls(base + int(off))
            if ip not in taken:
                out.append(ip)
                taken.add(ip)
                if len(out) == count:
                    return out
        raise SpecCapacityExceeded(f"cannot place {count} fresh addresses in {net}")
    span = min(size, 2**62)
    while len(out) < count:
        ip = cls(base + int(rng.integers(0, span)))
        if ip not in taken:
            out.append(ip)
            taken.add(ip)
    return out


def _scanner_records(rng, scanner, hosts, ports, src_mode, shared_port, n_probes, retries):
    """Probe records for one scanner over its assigned hosts."""
    k = len(ports)
    h = len(hosts)
    off = int(rng.integers(k))
    base = [(x, (x + off) % k) for x in range(h)]
    repeats = 2 if retries else 1
    if n_probes is None:
        pairs = [(x, p) for x in range(h) for p in range(k)]
    else:
        n_pairs = min(max(n_probes // repeats, h), h * k)
        pairs = list(base)
        if n_pairs > h:
            used = set(base)
            rest = [(x, p) for x in range(h) for p in range(k) if (x, p) not in used]
            pick = rng.choice(len(rest), size=n_pairs - h, replace=False)
            pairs += [rest[i] for i in sorted(pick)]
    attempts = [pair for pair in pairs for _ in range(repeats)]
    ts = np.round(T0 + rng.random(len(attempts)) * WINDOW, 6)
    if src_mode == "ephemeral_random":
        sports = rng.integers(EPHEMERAL[0], EPHEMERAL[1], size=len(attempts))
    else:
        sports = np.full(len(attempts), shared_port)
    return [
        ConnRecord(float(t), scanner, int(sp), hosts[x], ports[p], "tcp", "S0", "S")
        for (x, p), t, sp in zip(attempts, ts, sports)
    ]


def _campaign_records(seed, ci, spec, taken):
    rng = _stream(seed, 0, ci)
    scanners = sorted(_sample_addresses(rng, spec.source_cidr, spec.scanner_count, taken), key=ip_key)
    targets = _sample_addresses(rng, spec.target_cidr, spec.target_count, set())
    chunks = np.array_split(np.arange(spec.target_count), spec.scanner_count)
    shared = spec.src_port if spec.src_port is not None else int(rng.integers(1024, 65536))
    records = []
    for si, (scanner, chunk) in enumerate(zip(scanners, chunks)):
        srng = _stream(seed, 0, ci, si)
        port = shared if spec.src_port_strategy == "fixed_shared" else int(srng.integers(1024, 65536))
        n = None
        if spec.probes_per_scanner is not None:
            lo, hi = spec.probes_per_scanner
            n = int(srng.integers(lo, hi + 1))
        records += _scanner_records(
            srng, scanner, [targets[i] for i in chunk], spec.dst_ports,
            spec.src_port_strategy, port, n, spec.validation_retries,
        )
    return scanners, records


def _lone_scanner(seed, i, taken, avoid, min_probes):
    rng = _stream(seed, 1, i)
    while True:
        ip = ipaddress.IPv4Address(int(rng.integers(0x01000000, 0xE0000000)))
        if ip not in taken and not any(ip in net for net in avoid):
            taken.add(ip)
            break
    country, lat, lon = _PLACES[int(rng.integers(len(_PLACES)))]
    loc = GeoLocation(country, round(lat + rng.uniform(-3, 3), 4), round(lon + rng.uniform(-3, 3), 4))
    n_ports = int(rng.choice([1, int(rng.integers(2, 11)), int(rng.integers(11, 60))]))
    ports = sorted(int(p) for p in rng.choice(65536, size=n_ports, replace=False))
    n_hosts = int(rng.integers(1, 80))
    target_net = ipaddress.IPv4Network((int(rng.integers(1, 224)) << 24, 8))
    hosts = _sample_addresses(rng, target_net, n_hosts, set())
    mode = STRATEGIES[int(rng.integers(3))]
    retries = bool(rng.random() < 0.3)
    lo = max(min_probes, n_hosts * (2 if retries else 1))
    n = int(rng.integers(lo, lo + 200))
    port = int(rng.integers(1024, 65536))
    recs = _scanner_records(rng, ip, hosts, ports, mode, port, n, retries)
    return ip, loc, recs


def _benign_source(seed, i, taken):
    rng = _stream(seed, 2, i)
    while True:
        ip = ipaddress.IPv4Address(int(rng.integers(0x01000000, 0xE0000000)))
        if ip not in taken:
            taken.add(ip)
            break
    server = ipaddress.IPv4Address(int(rng.integers(0x01000000, 0xE0000000)))
    service = int(rng.choice([22, 25, 80, 443, 993, 8080]))
    recs = []
    for _ in range(int(rng.integers(1, 4))):
        state = "S0" if rng.random() < 0.5 else "REJ"
        recs.append(ConnRecord(float(np.round(T0 + rng.random() * WINDOW, 6)), ip,
                               int(rng.integers(*EPHEMERAL)), server, service, "tcp", state, "S"))
    # one completed connection alongside the failures
    recs.append(ConnRecord(float(np.round(T0 + rng.random() * WINDOW, 6)), ip,
                           int(rng.integers(*EPHEMERAL)), server, service, "tcp", "SF", "ShADadFf"))
    return ip, recs


def generate_dataset(campaigns, noise=None, seed=0):
    """Build a labelled, time-ordered record list plus a matching geo table."""
    noise = noise or NoiseSpec()
    taken = set()
    truth = {}
    records = []
    geo_rows = []
    for ci, spec in enumerate(campaigns):
        scanners, recs = _campaign_records(seed, ci, spec, taken)
        for ip in scanners:
            truth[ip] = spec.label
        records += recs
        loc = spec.source_location
        if loc.known:
            geo_rows.append((spec.source_cidr, loc.country, loc.lat, loc.lon))
    avoid = [spec.source_cidr for spec in campaigns]
    for i in range(noise.lone_scanner_count):
        ip, loc, recs = _lone_scanner(seed, i, taken, avoid, noise.lone_min_probes)
        truth[ip] = None
        records += recs
        geo_rows.append((ipaddress.IPv4Network(ip), loc.country, loc.lat, loc.lon))
    for i in range(noise.benign_failure_count):
        ip, recs = _benign_source(seed, i, taken)
        truth[ip] = None
        records += recs
    order = sorted(range(len(records)), key=lambda k: records[k].ts)
    return SyntheticDataset([records[k] for k in order], truth, GeoDatabase(geo_rows))


# -- scenario / truth files ---------------------------------------------------

def load_scenario(fh):
    """Parse a scenario JSON document into (campaign specs, noise spec, seed)."""
    doc = json.load(fh)
    campaigns = [CampaignSpec.from_dict(c) for c in doc.get("campaigns", [])]
    noise = NoiseSpec(**doc.get("noise", {}))
    return campaigns, noise, int(doc.get("seed", 0))


def write_truth(truth, fh):
    fh.write("scanner_ip\tlabel\n")
    for ip in sorted(truth, key=ip_key):
        label = truth[ip]
        fh.write(f"{ip}\t{'-' if label is None else label}\n")


def read_truth(fh):
    truth = {}
    for k, line in enumerate(fh):
        line = line.rstrip("\r\n")
        if k == 0 or not line:
            continue
        ip, label = line.split("\t")
        truth[ipaddress.ip_address(ip)] = None if label == "-" else label
    return truth


# -- evaluation ---------------------------------------------------------------

def _pairs(n):
    return n * (n - 1) // 2


def pairwise_eval(predicted, truth):
    """Pairwise precision, recall and F1 of predicted campaigns against labels.

    Only scanners sharing a non-empty label form truth pairs. With no
    predicted pairs precision is 1; with no truth pairs recall is 1.
    """
    clusters = [getattr(c, "members", c) for c in predicted]
    predicted_pairs = sum(_pairs(len(c)) for c in clusters)
    tp = 0
    for c in clusters:
        labels = Counter(truth.get(ip) for ip in c)
        labels.pop(None, None)
        tp += sum(_pairs(v) for v in labels.values())
    truth_pairs = sum(_pairs(v) for lab, v in Counter(truth.values()).items() if lab is not None)
    precision = tp / predicted_pairs if predicted_pairs else 1.0
    recall = tp / truth_pairs if truth_pairs else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1
