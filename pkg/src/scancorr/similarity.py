"""Per-feature similarity rules, the weighted aggregate and the pairwise matrix.

Two evaluation routes exist: :func:`similarity` works on a single pair of
fingerprints in plain Python, :func:`build_matrix` encodes all fingerprints
into numpy columns and evaluates one matrix row at a time. Both perform the
same floating-point operations in the same order, so their results agree
bit for bit.
"""

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from .fingerprint import FEW, MULTIPLE, SINGLE
from .netutil import common_prefix_len

FEATURES = (
    "src_ports",
    "dst_ports",
    "vertical",
    "horizontal",
    "validation",
    "ip_version",
    "target_hosts_mag",
    "probe_count_mag",
    "subnet",
    "location",
)
DEFAULT_D = 5.0
MATRIX_WARN_SCANNERS = 30_000


class AllWeightsZero(ValueError):
    pass


class DuplicateScanner(ValueError):
    pass


@dataclass(frozen=True)
class FeatureWeights:
    src_ports: float = 4
    dst_ports: float = 4
    vertical: float = 2
    horizontal: float = 2
    validation: float = 2
    ip_version: float = 1
    target_hosts_mag: float = 1
    probe_count_mag: float = 1
    subnet: float = 2
    location: float = 2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v >= 0:
                raise ValueError(f"weight {f.name} must be non-negative, got {v}")
        if not any(getattr(self, f.name) > 0 for f in fields(self)):
            raise AllWeightsZero("at least one weight must be positive")

    def as_tuple(self):
        return tuple(float(getattr(self, name)) for name in FEATURES)

    @property
    def total(self):
        return sum(self.as_tuple())

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping):
        unknown = set(mapping) - set(FEATURES)
        if unknown:
            raise ValueError(f"unknown feature weight(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in mapping.items()})

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))


DEFAULT_WEIGHTS = FeatureWeights()


# -- per-feature rules --------------------------------------------------------

def sim_port_class(a, b):
    if a.kind != b.kind:
        return 0.0
    if a.kind == SINGLE:
        return 1.0 if a.port == b.port else 0.5
    return 1.0


def sim_vertical(a, b):
    if a.vertical != b.vertical:
        return 0.0
    if a.vertical:
        return 1.0
    # two single-host scans must hit the same host
    return 1.0 if a.host == b.host else 0.0


def sim_flag(a, b):
    return 1.0 if a == b else 0.0


def sim_magnitude(a, b):
    if a < 1 or b < 1:
        raise ValueError("magnitudes must be positive")
    return 1.0 if abs(a - b) < min(a, b) else 0.0


def sim_subnet(a, b):
    if a.version != b.version:
        return 0.0
    return common_prefix_len(a, b) / a.max_prefixlen


def sim_geo(a, b, D=DEFAULT_D):
    if D <= 0:
        raise ValueError("D must be positive")
    if not (a.known and b.known):
        return 0.0
    if (
        a.lat is not None
        and b.lat is not None
        and abs(a.lat - b.lat) <= D
        and abs(a.lon - b.lon) <= D
    ):
        return 1.0
    return 0.5 if a.country == b.country else 0.0


def feature_similarities(a, b, D=DEFAULT_D):
    """The ten per-feature similarities, ordered as :data:`FEATURES`."""
    return (
        sim_port_class(a.src_ports, b.src_ports),
        sim_port_class(a.dst_ports, b.dst_ports),
        sim_vertical(a, b),
        sim_flag(a.horizontal, b.horizontal),
        sim_flag(a.validation, b.validation),
        sim_flag(a.ip_version, b.ip_version),
        sim_magnitude(a.target_hosts, b.target_hosts),
        sim_magnitude(a.probe_count, b.probe_count),
        sim_subnet(a.scanner_ip, b.scanner_ip),
        sim_geo(a.location, b.location, D),
    )


def weighted_average(scores, w=DEFAULT_WEIGHTS):
    weights = w.as_tuple()
    total = sum(weights)
    if total <= 0:
        raise AllWeightsZero("weights sum to zero")
    acc = 0.0
    for s, wi in zip(scores, weights):
        acc = acc + s * wi
    return acc / total


def similarity(a, b, w=DEFAULT_WEIGHTS, D=DEFAULT_D):
    return weighted_average(feature_similarities(a, b, D), w)


# -- matrix -------------------------------------------------------------------

class SimilarityMatrix:
    """Symmetric similarity matrix stored as its strict upper triangle.

    ``values`` follows the condensed layout used by scipy: entry (i, j) with
    i < j lives at ``n*i - i*(i+1)//2 + (j - i - 1)``.
    """

    def __init__(self, ids, values):
        self.ids = list(ids)
        n = len(self.ids)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.shape != (n * (n - 1) // 2,):
            raise ValueError("condensed array has the wrong length")

    def __len__(self):
        return len(self.ids)

    def _index(self, i, j):
        n = len(self.ids)
        return n * i - i * (i + 1) // 2 + (j - i - 1)

    def __getitem__(self, ij):
        i, j = ij
        if i == j:
            return 1.0
        if i > j:
            i, j = j, i
        return float(self.values[self._index(i, j)])

    def row(self, i):
        n = len(self.ids)
        start = self._index(i, i + 1) if i < n - 1 else 0
        return self.values[start:start + (n - i - 1)]

    def to_square(self):
        n = len(self.ids)
        m = np.eye(n)
        iu = np.triu_indices(n, 1)
        m[iu] = self.values
        m[(iu[1], iu[0])] = self.values
        return m

    def distances(self):
        """Condensed distance array, 1 - similarity."""
        return 1.0 - self.values

    def write_tsv(self, fh):
        fh.write("\t".join(str(x) for x in self.ids) + "\n")
        for i in range(len(self.ids)):
            fh.write("\t".join(repr(float(v)) for v in self.row(i)) + "\n")


class _Encoded:
    """Column-wise numpy encoding of a fingerprint list."""

    def __init__(self, fps):
        n = len(fps)
        kinds = {SINGLE: 0, FEW: 1, MULTIPLE: 2}
        self.src_kind = np.array([kinds[f.src_ports.kind] for f in fps], dtype=np.int8)
        self.src_port = np.array([-1 if f.src_ports.port is None else f.src_ports.port for f in fps], dtype=np.int32)
        self.dst_kind = np.array([kinds[f.dst_ports.kind] for f in fps], dtype=np.int8)
        self.dst_port = np.array([-1 if f.dst_ports.port is None else f.dst_ports.port for f in fps], dtype=np.int32)
        self.vertical = np.array([f.vertical for f in fps], dtype=bool)
        hosts = {}
        self.host = np.array(
            [-1 if f.host is None else hosts.setdefault(f.host, len(hosts)) for f in fps], dtype=np.int64
        )
        self.horizontal = np.array([f.horizontal for f in fps], dtype=bool)
        self.validation = np.array([f.validation for f in fps], dtype=bool)
        self.version = np.array([f.ip_version for f in fps], dtype=np.int8)
        self.hosts_n = np.array([f.target_hosts for f in fps], dtype=np.int64)
        self.probes_n = np.array([f.probe_count for f in fps], dtype=np.int64)
        # addresses as four big-endian 32-bit words, v4 in the first word
        words = np.zeros((n, 4), dtype=np.int64)
        for k, f in enumerate(fps):
            v = int(f.scanner_ip)
            if f.scanner_ip.version == 4:
                words[k, 0] = v
            else:
                for q in range(4):
                    words[k, q] = (v >> (96 - 32 * q)) & 0xFFFFFFFF
        self.words = words
        self.width = np.where(self.version == 4, 32, 128).astype(np.int64)
        countries = {}
        self.country = np.array(
            [-1 if f.location.country is None else countries.setdefault(f.location.country, len(countries))
             for f in fps], dtype=np.int64
        )
        self.has_coord = np.array([f.location.lat is not None for f in fps], dtype=bool)
        self.lat = np.array([np.nan if f.location.lat is None else f.location.lat for f in fps])
        self.lon = np.array([np.nan if f.location.lon is None else f.location.lon for f in fps])


def _bit_length(x):
    # exact for 0 <= x < 2**53
    return np.frexp(x.astype(np.float64))[1].astype(np.int64)


def _port_sim(kind_i, port_i, kinds, ports):
    single = np.where(ports == port_i, 1.0, 0.5)
    same = np.where(kind_i == 0, single, 1.0)
    return np.where(kinds == kind_i, same, 0.0)


def _row_scores(e, i, js, D):
    """Per-feature similarity columns for pairs (i, j) over ``js``."""
    both_vert = e.vertical[i] & e.vertical[js]
    same_flag = e.vertical[js] == e.vertical[i]
    vert = np.where(same_flag & (both_vert | (e.host[js] == e.host[i])), 1.0, 0.0)

    def flag(col):
        return np.where(col[js] == col[i], 1.0, 0.0)

    def mag(col):
        a, b = col[i], col[js]
        return np.where(np.abs(a - b) < np.minimum(a, b), 1.0, 0.0)

    # common leading bits over the word representation
    cp = np.zeros(len(js), dtype=np.int64)
    equal_so_far = np.ones(len(js), dtype=bool)
    for q in range(4):
        x = e.words[js, q] ^ e.words[i, q]
        cp += np.where(equal_so_far, 32 - _bit_length(x), 0)
        equal_so_far &= x == 0
    same_ver = e.version[js] == e.version[i]
    width = e.width[i]
    subnet = np.where(same_ver, np.minimum(cp, width).astype(np.float64) / np.float64(width), 0.0)

    known = (e.country[i] >= 0) & (e.country[js] >= 0)
    with np.errstate(invalid="ignore"):
        near = (
            e.has_coord[i]
            & e.has_coord[js]
            & (np.abs(e.lat[i] - e.lat[js]) <= D)
            & (np.abs(e.lon[i] - e.lon[js]) <= D)
        )
    geo = np.where(known, np.where(near, 1.0, np.where(e.country[js] == e.country[i], 0.5, 0.0)), 0.0)

    return (
        _port_sim(e.src_kind[i], e.src_port[i], e.src_kind[js], e.src_port[js]),
        _port_sim(e.dst_kind[i], e.dst_port[i], e.dst_kind[js], e.dst_port[js]),
        vert,
        flag(e.horizontal),
        flag(e.validation),
        flag(e.version),
        mag(e.hosts_n),
        mag(e.probes_n),
        subnet,
        geo,
    )


def build_matrix(fps, w=DEFAULT_WEIGHTS, D=DEFAULT_D, threads=1, warn_above=MATRIX_WARN_SCANNERS):
    """All-pairs similarity matrix; rows may be split across threads."""
    if D <= 0:
        raise ValueError("D must be positive")
    ids = [f.scanner_ip for f in fps]
    if len(set(ids)) != len(ids):
        raise DuplicateScanner("fingerprint identities are not distinct")
    n = len(fps)
    if n > warn_above:
        warnings.warn(
            f"{n} scanners: the similarity matrix needs {n * (n - 1) // 2 * 8 / 2**30:.1f} GiB",
            ResourceWarning,
            stacklevel=2,
        )
    weights = w.as_tuple()
    total = sum(weights)
    if total <= 0:
        raise AllWeightsZero("weights sum to zero")
    out = np.empty(n * (n - 1) // 2, dtype=np.float64)
    if n < 2:
        return SimilarityMatrix(ids, out)
    enc = _Encoded(fps)
    all_idx = np.arange(n)

    def fill(i):
        js = all_idx[i + 1:]
        acc = np.zeros(len(js))
        for s, wi in zip(_row_scores(enc, i, js, D), weights):
            acc = acc + s * wi
        start = n * i - i * (i + 1) // 2
        out[start:start + len(js)] = acc / total

    rows = range(n - 1)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, rows))
    else:
        for i in rows:
            fill(i)
    return SimilarityMatrix(ids, out)
