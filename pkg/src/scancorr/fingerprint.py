"""Ten-feature scanner fingerprints and offline geolocation lookup."""

import csv
import ipaddress
import math
from collections import defaultdict
from dataclasses import dataclass

from .netutil import parse_network

SINGLE, FEW, MULTIPLE = "S", "F", "M"
DEFAULT_X = 10


class EmptyPortSet(ValueError):
    pass


@dataclass(frozen=True)
class PortClass:
    """Single (with its port), Few or Multiple."""

    kind: str
    port: int | None = None

    def __post_init__(self):
        if self.kind == SINGLE:
            if self.port is None or not 0 <= self.port <= 65535:
                raise ValueError(f"Single port class needs a port in [0, 65535], got {self.port}")
        elif self.kind in (FEW, MULTIPLE):
            if self.port is not None:
                raise ValueError("only Single carries a port")
        else:
            raise ValueError(f"unknown port class {self.kind!r}")

    def __str__(self):
        return f"S+{self.port}" if self.kind == SINGLE else self.kind

    def sort_key(self):
        return ("SFM".index(self.kind), -1 if self.port is None else self.port)

    @classmethod
    def parse(cls, text):
        if text.startswith("S+"):
            return cls(SINGLE, int(text[2:]))
        return cls(text)


def port_class(distinct_ports, X=DEFAULT_X):
    """Classify a set of distinct ports; Few covers 2..X inclusive."""
    if X < 1:
        raise ValueError("X must be >= 1")
    ports = set(distinct_ports)
    if not ports:
        raise EmptyPortSet("port set is empty")
    if len(ports) == 1:
        return PortClass(SINGLE, next(iter(ports)))
    if len(ports) <= X:
        return PortClass(FEW)
    return PortClass(MULTIPLE)


@dataclass(frozen=True)
class GeoLocation:
    country: str | None = None
    lat: float | None = None
    lon: float | None = None

    def __post_init__(self):
        if self.country is None:
            if self.lat is not None or self.lon is not None:
                raise ValueError("coordinates require a known country")
            return
        if (self.lat is None) != (self.lon is None):
            raise ValueError("lat and lon go together")
        if self.lat is not None:
            if not (math.isfinite(self.lat) and -90 <= self.lat <= 90):
                raise ValueError(f"latitude out of range: {self.lat}")
            if not (math.isfinite(self.lon) and -180 <= self.lon <= 180):
                raise ValueError(f"longitude out of range: {self.lon}")

    @property
    def known(self):
        return self.country is not None


UNKNOWN = GeoLocation()


class GeoDatabase:
    """Longest-prefix-match table of (network, country, lat, lon) rows.

    Immutable after construction, so one instance can be shared freely.
    """

    def __init__(self, entries=()):
        self._tables = defaultdict(dict)  # (version, prefixlen) -> {network int: GeoLocation}
        self.entries = []
        for net, country, lat, lon in entries:
            if isinstance(net, str):
                net = parse_network(net)
            loc = GeoLocation(country, lat, lon)
            self.entries.append((net, loc))
            self._tables[(net.version, net.prefixlen)][int(net.network_address)] = loc
        self._lengths = {
            v: sorted((pl for (ver, pl) in self._tables if ver == v), reverse=True) for v in (4, 6)
        }

    def __len__(self):
        return len(self.entries)

    def lookup(self, ip):
        width = ip.max_prefixlen
        value = int(ip)
        for pl in self._lengths[ip.version]:
            key = (value >> (width - pl)) << (width - pl) if pl else 0
            loc = self._tables[(ip.version, pl)].get(key)
            if loc is not None:
                return loc
        return UNKNOWN

    @classmethod
    def from_csv(cls, fh):
        """Load rows with header ``network,country,lat,lon``."""
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["network", "country", "lat", "lon"]:
            raise ValueError(f"geo CSV header must be network,country,lat,lon, got {reader.fieldnames}")
        rows = []
        for row in reader:
            country = row["country"].strip() or None
            lat = row["lat"].strip()
            lon = row["lon"].strip()
            rows.append(
                (row["network"], country, float(lat) if lat else None, float(lon) if lon else None)
            )
        return cls(rows)

    @classmethod
    def load(cls, path):
        if path is None:
            return EMPTY_GEO
        with open(path, newline="", encoding="utf-8") as fh:
            return cls.from_csv(fh)

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["network", "country", "lat", "lon"])
        for net, loc in self.entries:
            w.writerow([str(net), loc.country or "", "" if loc.lat is None else repr(loc.lat),
                        "" if loc.lon is None else repr(loc.lon)])


EMPTY_GEO = GeoDatabase()


def geo_lookup(ip, geo=EMPTY_GEO):
    return geo.lookup(ip)


@dataclass(frozen=True)
class Fingerprint:
    scanner_ip: ipaddress.IPv4Address | ipaddress.IPv6Address
    src_ports: PortClass
    dst_ports: PortClass
    vertical: bool
    # the single target host when the scan is not vertical
    host: ipaddress.IPv4Address | ipaddress.IPv6Address | None
    horizontal: bool
    validation: bool
    ip_version: int
    target_hosts: int
    probe_count: int
    location: GeoLocation = UNKNOWN

    def __post_init__(self):
        if self.vertical != (self.target_hosts > 1):
            raise ValueError("vertical must equal target_hosts > 1")
        if self.vertical == (self.host is not None):
            raise ValueError("host is carried exactly when the scan is not vertical")
        if not self.probe_count >= self.target_hosts >= 1:
            raise ValueError("need probe_count >= target_hosts >= 1")


def compute_fingerprint(profile, X=DEFAULT_X, geo=EMPTY_GEO):
    probes = profile.probes
    if not probes:
        raise ValueError("empty profile")
    src = set()
    dst = set()
    ports_by_host = defaultdict(set)
    attempts = defaultdict(int)
    for p in probes:
        src.add(p.src_port)
        dst.add(p.target_port)
        ports_by_host[p.target_ip].add(p.target_port)
        attempts[(p.target_ip, p.target_port)] += 1
    n_hosts = len(ports_by_host)
    vertical = n_hosts > 1
    return Fingerprint(
        scanner_ip=profile.scanner_ip,
        src_ports=port_class(src, X),
        dst_ports=port_class(dst, X),
        vertical=vertical,
        host=None if vertical else next(iter(ports_by_host)),
        horizontal=any(len(ports) >= 2 for ports in ports_by_host.values()),
        validation=any(c >= 2 for c in attempts.values()),
        ip_version=profile.scanner_ip.version,
        target_hosts=n_hosts,
        probe_count=len(probes),
        location=geo.lookup(profile.scanner_ip),
    )


def compute_fingerprints(profiles, X=DEFAULT_X, geo=EMPTY_GEO):
    return [compute_fingerprint(p, X, geo) for p in profiles]
