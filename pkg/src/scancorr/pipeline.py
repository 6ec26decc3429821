"""End-to-end orchestration: records -> probes -> fingerprints -> campaigns."""

import json
import logging
from dataclasses import dataclass, field, fields

from .campaign import build_report, dataset_stats, summarize_campaign
from .cluster import DEFAULT_T, cut, extract_campaigns, upgma
from .detect import (
    DEFAULT_PROBE_STATES,
    DEFAULT_PROTOCOLS,
    ProbeClassifierConfig,
    aggregate_scanners,
    filter_epsilon,
    iter_probes,
)
from .fingerprint import DEFAULT_X, EMPTY_GEO, GeoDatabase, compute_fingerprints
from .ingest import SubnetFilter, restrict_visibility
from .similarity import DEFAULT_D, DEFAULT_WEIGHTS, FeatureWeights, build_matrix

log = logging.getLogger(__name__)

SCOPE_EPSILON = {"backbone": 10, "isp": 5, "enterprise": 0}


@dataclass
class RunConfig:
    epsilon: int = SCOPE_EPSILON["backbone"]
    X: int = DEFAULT_X
    t: float = DEFAULT_T
    D: float = DEFAULT_D
    weights: FeatureWeights = DEFAULT_WEIGHTS
    probe_states: frozenset = DEFAULT_PROBE_STATES
    protocols: frozenset = DEFAULT_PROTOCOLS
    geo_db_path: str | None = None
    visibility_subnet: str | None = None
    strict_parse: bool = False
    min_campaign_size: int = 2
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = FeatureWeights.from_mapping(self.weights)
        self.probe_states = frozenset(self.probe_states)
        self.protocols = frozenset(self.protocols)
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.X < 1:
            raise ValueError("X must be >= 1")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        if not self.D > 0:
            raise ValueError("D must be > 0")

    @property
    def classifier(self):
        return ProbeClassifierConfig(self.probe_states, self.protocols)

    def params(self):
        """Parameter block recorded in reports."""
        return {
            "epsilon": self.epsilon,
            "X": self.X,
            "t": self.t,
            "D": self.D,
            "weights": self.weights.to_dict(),
            "probe_states": sorted(self.probe_states),
            "protocols": sorted(self.protocols),
            "visibility_subnet": self.visibility_subnet,
            "min_campaign_size": self.min_campaign_size,
        }

    @classmethod
    def from_mapping(cls, mapping, base=None):
        """Overlay ``mapping`` on ``base`` (or the defaults)."""
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known - {"scope"}
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        values = {f.name: getattr(base, f.name) for f in fields(cls)} if base else {}
        if "scope" in mapping:
            values["epsilon"] = SCOPE_EPSILON[mapping["scope"]]
        values.update({k: v for k, v in mapping.items() if k != "scope"})
        return cls(**values)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))


def records_to_probes(records, cfg):
    if cfg.visibility_subnet:
        records = restrict_visibility(records, SubnetFilter(cfg.visibility_subnet))
    return iter_probes(records, cfg.classifier)


@dataclass
class CorrelationResult:
    config: RunConfig
    profiles: list
    fingerprints: list
    matrix: object = None
    dendrogram: object = None
    clusters: list = field(default_factory=list)
    campaigns: list = field(default_factory=list)
    standalone: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    all_profiles: list = field(default_factory=list)

    @property
    def stats(self):
        return dataset_stats(self.profiles, self.campaigns)

    def report(self):
        return build_report(self.config.params(), self.stats, self.summaries, self.standalone)

    def recut(self, t):
        """Campaigns at another cutoff, reusing the dendrogram."""
        clusters = cut(self.dendrogram, t)
        return extract_campaigns(clusters, self.dendrogram, self.config.min_campaign_size)


def correlate(probes, cfg=None, geo=None):
    """Run the correlation stage on an iterable of probes."""
    cfg = cfg or RunConfig()
    if geo is None:
        geo = GeoDatabase.load(cfg.geo_db_path) if cfg.geo_db_path else EMPTY_GEO
    all_profiles = aggregate_scanners(probes)
    profiles = filter_epsilon(all_profiles, cfg.epsilon)
    log.info("%d scanners, %d after epsilon=%d", len(all_profiles), len(profiles), cfg.epsilon)
    fps = compute_fingerprints(profiles, cfg.X, geo)
    result = CorrelationResult(cfg, profiles, fps, all_profiles=all_profiles)
    if not fps:
        return result
    result.matrix = build_matrix(fps, cfg.weights, cfg.D, threads=cfg.threads)
    result.dendrogram = upgma(result.matrix)
    result.clusters = cut(result.dendrogram, cfg.t)
    result.campaigns, result.standalone = extract_campaigns(
        result.clusters, result.dendrogram, cfg.min_campaign_size
    )
    by_ip = {f.scanner_ip: f for f in fps}
    result.summaries = [summarize_campaign(c, by_ip) for c in result.campaigns]
    log.info("%d campaigns, %d standalone scanners", len(result.campaigns), len(result.standalone))
    return result
