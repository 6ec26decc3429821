"""Campaign summaries, dataset statistics and the JSON report."""

import ipaddress
import json
from collections import Counter
from dataclasses import dataclass, field

from .netutil import ip_key


class MissingFingerprint(KeyError):
    pass


class MixedVersions(ValueError):
    pass


def minimal_covering_cidr(ips):
    """Longest prefix that contains every address in ``ips``."""
    ips = list(ips)
    if not ips:
        raise ValueError("need at least one address")
    versions = {ip.version for ip in ips}
    if len(versions) > 1:
        raise MixedVersions("addresses mix IPv4 and IPv6")
    width = ips[0].max_prefixlen
    first = int(ips[0])
    diff = 0
    for ip in ips[1:]:
        diff |= first ^ int(ip)
    prefix = width - diff.bit_length()
    base = (first >> (width - prefix)) << (width - prefix) if prefix else 0
    cls = ipaddress.IPv4Network if ips[0].version == 4 else ipaddress.IPv6Network
    return cls((base, prefix))


def covering_cidrs(ips):
    """One covering prefix per IP version present, v4 first."""
    by_version = {}
    for ip in ips:
        by_version.setdefault(ip.version, []).append(ip)
    return [minimal_covering_cidr(by_version[v]) for v in sorted(by_version)]


@dataclass
class CampaignSummary:
    members: list
    total_probes: int
    src_ports: set
    dst_ports: set
    vertical: set
    horizontal: set
    validation: set
    ip_versions: set
    target_hosts_range: tuple
    probe_count_range: tuple
    covering_cidr: list
    countries: set
    formation_similarity: float | None = None

    @property
    def member_count(self):
        return len(self.members)

    def to_dict(self):
        def ports(classes):
            return [str(pc) for pc in sorted(classes, key=lambda pc: pc.sort_key())]

        return {
            "members": [str(ip) for ip in self.members],
            "member_count": self.member_count,
            "total_probes": self.total_probes,
            "src_ports": ports(self.src_ports),
            "dst_ports": ports(self.dst_ports),
            "vertical": sorted(self.vertical),
            "horizontal": sorted(self.horizontal),
            "validation": sorted(self.validation),
            "ip_versions": sorted(self.ip_versions),
            "target_hosts_range": list(self.target_hosts_range),
            "probe_count_range": list(self.probe_count_range),
            "covering_cidr": [str(n) for n in self.covering_cidr],
            "countries": sorted(self.countries),
            "formation_similarity": self.formation_similarity,
        }


def summarize_campaign(c, fps):
    """Aggregate the fingerprints of a campaign's members.

    ``fps`` maps scanner IP to :class:`~scancorr.fingerprint.Fingerprint`.
    """
    members = sorted(c.members, key=ip_key)
    try:
        prints = [fps[ip] for ip in members]
    except KeyError as exc:
        raise MissingFingerprint(f"no fingerprint for campaign member {exc.args[0]}") from None
    hosts = [f.target_hosts for f in prints]
    probes = [f.probe_count for f in prints]
    return CampaignSummary(
        members=members,
        total_probes=sum(probes),
        src_ports={f.src_ports for f in prints},
        dst_ports={f.dst_ports for f in prints},
        vertical={f.vertical for f in prints},
        horizontal={f.horizontal for f in prints},
        validation={f.validation for f in prints},
        ip_versions={f.ip_version for f in prints},
        target_hosts_range=(min(hosts), max(hosts)),
        probe_count_range=(min(probes), max(probes)),
        covering_cidr=covering_cidrs(members),
        countries={f.location.country for f in prints if f.location.country is not None},
        formation_similarity=c.formation_similarity,
    )


def _distribution(values):
    return sorted(Counter(values).items())


@dataclass
class DatasetStats:
    scanners: int
    probes: int
    campaigns: int
    distributed_scanners: int
    standalone_scanners: int
    probe_count_dist: list = field(default_factory=list)
    src_port_dist: list = field(default_factory=list)
    dst_port_dist: list = field(default_factory=list)

    @property
    def distributed_fraction(self):
        return self.distributed_scanners / self.scanners if self.scanners else 0.0

    def to_dict(self):
        return {
            "scanners": self.scanners,
            "probes": self.probes,
            "campaigns": self.campaigns,
            "distributed_scanners": self.distributed_scanners,
            "distributed_fraction": self.distributed_fraction,
            "standalone_scanners": self.standalone_scanners,
            "probe_count_dist": [list(p) for p in self.probe_count_dist],
            "src_port_dist": [list(p) for p in self.src_port_dist],
            "dst_port_dist": [list(p) for p in self.dst_port_dist],
        }

    def write_distributions(self, fh):
        """Plot-ready TSV: distribution, value, number of scanners."""
        fh.write("distribution\tvalue\tscanners\n")
        for name in ("probe_count", "src_port", "dst_port"):
            for value, count in getattr(self, f"{name}_dist"):
                fh.write(f"{name}\t{value}\t{count}\n")


def dataset_stats(profiles, campaigns=()):
    distributed = sum(len(c) for c in campaigns)
    return DatasetStats(
        scanners=len(profiles),
        probes=sum(len(p.probes) for p in profiles),
        campaigns=len(campaigns),
        distributed_scanners=distributed,
        standalone_scanners=len(profiles) - distributed,
        probe_count_dist=_distribution(len(p.probes) for p in profiles),
        src_port_dist=_distribution(len({q.src_port for q in p.probes}) for p in profiles),
        dst_port_dist=_distribution(len({q.target_port for q in p.probes}) for p in profiles),
    )


def build_report(params, stats, summaries, standalone):
    """Report document; campaigns ordered by their first member address."""
    ordered = sorted(summaries, key=lambda s: ip_key(s.members[0]))
    return {
        "parameters": params,
        "dataset_stats": stats.to_dict(),
        "campaigns": [s.to_dict() for s in ordered],
        "standalone": [str(ip) for ip in sorted(standalone, key=ip_key)],
    }


def dumps_report(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
