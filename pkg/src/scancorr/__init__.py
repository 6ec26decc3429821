"""Port scan detection and correlation of scanners into scan campaigns."""

__version__ = "0.1.0"

from .cluster import Campaign, Dendrogram, cut, extract_campaigns, sweep_threshold, upgma
from .detect import ScanProbe, ScannerProfile, aggregate_scanners, classify_probe, filter_epsilon
from .fingerprint import Fingerprint, GeoDatabase, GeoLocation, PortClass, compute_fingerprint, port_class
from .ingest import ConnRecord, SubnetFilter, parse_conn_line, read_conn_log, restrict_visibility
from .pipeline import RunConfig, correlate
from .similarity import FeatureWeights, SimilarityMatrix, build_matrix, similarity
