"""``scancorr`` command line.

Exit codes: 0 ok, 1 usage, 2 input error, 3 internal error. Errors are
reported on stderr as a single ``scancorr: error: <Kind>: <message>`` line.
"""

import argparse
import contextlib
import json
import logging
import sys

from . import __version__
from .campaign import dataset_stats, dumps_report
from .cluster import sweep_threshold
from .detect import PROBE_COLUMNS, ProbeCounter, aggregate_scanners, read_probes, write_probes
from .ingest import IngestError, read_conn_log, write_zeek_log
from .pipeline import SCOPE_EPSILON, RunConfig, correlate, records_to_probes
from .similarity import FEATURES, FeatureWeights
from .synth import generate_dataset, load_scenario, pairwise_eval, read_truth, write_truth

log = logging.getLogger("scancorr")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: UsageError: {message}\n")
        sys.exit(EXIT_USAGE)


@contextlib.contextmanager
def _out(path, mode="w"):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, mode, encoding="utf-8", newline="") as fh:
            yield fh


def parse_grid(text):
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        n = int(round((stop - start) / step))
        return [round(start + k * step, 10) for k in range(n + 1)]
    return [float(x) for x in text.split(",") if x.strip()]


def _weights_arg(values, base):
    mapping = base.to_dict()
    for item in values:
        if "=" in item:
            name, _, value = item.partition("=")
            mapping[name.strip()] = float(value)
        else:
            with open(item, encoding="utf-8") as fh:
                mapping.update(json.load(fh))
    return FeatureWeights.from_mapping(mapping)


def build_config(args):
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    overrides = {}
    if args.scope is not None:
        overrides["epsilon"] = SCOPE_EPSILON[args.scope]
    for name in ("epsilon", "X", "t", "D", "threads", "min_campaign_size"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.geo_db is not None:
        overrides["geo_db_path"] = args.geo_db
    if args.subnet is not None:
        overrides["visibility_subnet"] = args.subnet
    if args.strict:
        overrides["strict_parse"] = True
    if args.probe_states:
        overrides["probe_states"] = frozenset(args.probe_states.split(","))
    if args.protocols:
        overrides["protocols"] = frozenset(args.protocols.split(","))
    if args.weight:
        overrides["weights"] = _weights_arg(args.weight, cfg.weights)
    return RunConfig.from_mapping(overrides, base=cfg)


def _sniff(path):
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            if line.startswith("#"):
                return "zeek_tsv"
            if tuple(line.split("\t")) == PROBE_COLUMNS:
                return "probes"
            if "," in line:
                return "generic_csv"
            return "zeek_tsv"
    return "probes"


def load_probes(path, cfg, fmt="auto"):
    """Probes from a probe TSV or a connection log; returns (probes, parse errors)."""
    if fmt == "auto":
        fmt = _sniff(path)
    if fmt == "probes":
        with open(path, encoding="utf-8") as fh:
            probes = list(read_probes(fh))
        if cfg.visibility_subnet:
            from .ingest import SubnetFilter

            flt = SubnetFilter(cfg.visibility_subnet)
            probes = [p for p in probes if flt.contains(p.scanner_ip) or flt.contains(p.target_ip)]
        return probes, 0
    with open(path, "rb") as fh:
        reader = read_conn_log(fh, fmt, strict=cfg.strict_parse)
        probes = list(records_to_probes(reader, cfg))
    if reader.errors:
        log.warning("%s: dropped %d malformed line(s)", path, reader.errors)
    return probes, reader.errors


# -- commands -----------------------------------------------------------------

def cmd_detect(args):
    cfg = build_config(args)
    fmt = _sniff(args.log) if args.format == "auto" else args.format
    if fmt == "probes":
        raise InputError(f"{args.log} is already a probe file")
    counter = ProbeCounter()
    with open(args.log, "rb") as fh, _out(args.output) as out:
        reader = read_conn_log(fh, fmt, strict=cfg.strict_parse)
        write_probes(counter.consume(records_to_probes(reader, cfg)), out)
    kept_scanners, kept_probes = counter.retained(cfg.epsilon)
    stats = {
        "records": reader.records,
        "parse_errors": reader.errors,
        "probes": counter.total,
        "scanners": counter.scanners,
        "epsilon": cfg.epsilon,
        "scanners_after_epsilon": kept_scanners,
        "probes_after_epsilon": kept_probes,
    }
    if args.stats_out:
        with _out(args.stats_out) as fh:
            fh.write(json.dumps(stats, sort_keys=True, indent=2) + "\n")
    else:
        sys.stderr.write(json.dumps(stats, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_correlate(args):
    cfg = build_config(args)
    probes, _ = load_probes(args.input, cfg, args.format)
    result = correlate(probes, cfg)
    with _out(args.output) as fh:
        fh.write(dumps_report(result.report()))
    if args.matrix_out and result.matrix is not None:
        with _out(args.matrix_out) as fh:
            result.matrix.write_tsv(fh)
    if args.dendrogram_out and result.dendrogram is not None:
        with _out(args.dendrogram_out) as fh:
            result.dendrogram.write_tsv(fh)
    return EXIT_OK


def cmd_sweep_t(args):
    cfg = build_config(args)
    grid = parse_grid(args.grid)
    probes, _ = load_probes(args.input, cfg, args.format)
    result = correlate(probes, cfg)
    truth = None
    if args.truth:
        with open(args.truth, encoding="utf-8") as fh:
            truth = read_truth(fh)
    cols = ["t", "clusters", "campaigns"] + (["precision", "recall", "f1"] if truth is not None else [])
    with _out(args.output) as fh:
        fh.write("\t".join(cols) + "\n")
        if result.dendrogram is None:
            counts = [(t, 0) for t in grid]
        else:
            counts = sweep_threshold(result.dendrogram, grid)
        for t, n_clusters in counts:
            campaigns = result.recut(t)[0] if result.dendrogram is not None else []
            row = [repr(t), str(n_clusters), str(len(campaigns))]
            if truth is not None:
                row += [f"{v:.6f}" for v in pairwise_eval(campaigns, truth)]
            fh.write("\t".join(row) + "\n")
    return EXIT_OK


def cmd_sweep_epsilon(args):
    cfg = build_config(args)
    grid = [int(v) for v in parse_grid(args.grid)]
    probes, _ = load_probes(args.input, cfg, args.format)
    counter = ProbeCounter()
    for p in probes:
        counter.add(p)
    with _out(args.output) as fh:
        fh.write("epsilon\tscanners\tprobes\tscanner_fraction\tprobe_fraction\n")
        for eps in grid:
            s, p = counter.retained(eps)
            sf = s / counter.scanners if counter.scanners else 0.0
            pf = p / counter.total if counter.total else 0.0
            fh.write(f"{eps}\t{s}\t{p}\t{sf:.6f}\t{pf:.6f}\n")
    return EXIT_OK


def cmd_stats(args):
    cfg = build_config(args)
    probes, errors = load_probes(args.input, cfg, args.format)
    if args.cluster:
        result = correlate(probes, cfg)
        stats = result.stats
    else:
        from .detect import filter_epsilon

        stats = dataset_stats(filter_epsilon(aggregate_scanners(probes), cfg.epsilon))
    doc = {"parameters": cfg.params(), "parse_errors": errors, "dataset_stats": stats.to_dict()}
    with _out(args.output) as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    if args.dist_out:
        with _out(args.dist_out) as fh:
            stats.write_distributions(fh)
    return EXIT_OK


def cmd_synth(args):
    with open(args.scenario, encoding="utf-8") as fh:
        campaigns, noise, seed = load_scenario(fh)
    if args.seed is not None:
        seed = args.seed
    ds = generate_dataset(campaigns, noise, seed)
    with _out(args.log) as fh:
        write_zeek_log(ds.records, fh)
    with _out(args.truth) as fh:
        write_truth(ds.truth, fh)
    if args.geo_out:
        with _out(args.geo_out) as fh:
            ds.geo.to_csv(fh)
    sys.stderr.write(json.dumps({"records": len(ds.records), "scanners": len(ds.truth), "seed": seed}) + "\n")
    return EXIT_OK


def cmd_eval(args):
    import ipaddress

    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    with open(args.truth, encoding="utf-8") as fh:
        truth = read_truth(fh)
    predicted = [frozenset(ipaddress.ip_address(ip) for ip in c["members"]) for c in report.get("campaigns", [])]
    p, r, f1 = pairwise_eval(predicted, truth)
    with _out(args.output) as fh:
        fh.write(json.dumps({"precision": p, "recall": r, "f1": f1}, sort_keys=True) + "\n")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _pipeline_options():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline parameters")
    g.add_argument("--config", help="JSON file with run configuration keys")
    g.add_argument("--scope", choices=sorted(SCOPE_EPSILON), help="epsilon preset: backbone 10, isp 5, enterprise 0")
    g.add_argument("--epsilon", type=int, help="minimum probes per scanner")
    g.add_argument("-X", type=int, help="largest port count still classed as Few")
    g.add_argument("-t", type=float, help="similarity cutoff for campaigns")
    g.add_argument("-D", type=float, help="degrees for the same-location test")
    g.add_argument("--weight", action="append", metavar="NAME=VALUE|FILE",
                   help=f"feature weight override ({', '.join(FEATURES)}) or a JSON file")
    g.add_argument("--probe-states", help="comma-separated conn_state tokens counted as probes")
    g.add_argument("--protocols", help="comma-separated protocols considered")
    g.add_argument("--geo-db", help="CSV network,country,lat,lon")
    g.add_argument("--subnet", help="restrict visibility to this CIDR")
    g.add_argument("--strict", action="store_true", help="abort on the first malformed line")
    g.add_argument("--threads", type=int, help="threads for the similarity matrix")
    g.add_argument("--min-campaign-size", type=int)
    g.add_argument("--format", default="auto", choices=["auto", "zeek_tsv", "generic_csv", "probes"])
    return p


def make_parser():
    common = _pipeline_options()
    parser = _Parser(prog="scancorr", description="Detect port scans and correlate them into campaigns.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("detect", parents=[common], help="extract scan probes from a connection log")
    p.add_argument("log")
    p.add_argument("-o", "--output", help="probe TSV (default stdout)")
    p.add_argument("--stats-out", help="scanner statistics JSON (default: one line on stderr)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("correlate", parents=[common], help="fingerprint, cluster and report campaigns")
    p.add_argument("input", help="probe TSV or connection log")
    p.add_argument("-o", "--output", help="JSON report (default stdout)")
    p.add_argument("--matrix-out", help="similarity matrix TSV")
    p.add_argument("--dendrogram-out", help="merge list TSV")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("sweep-t", parents=[common], help="cluster counts over a grid of t")
    p.add_argument("input")
    p.add_argument("--grid", default="0:1:0.05")
    p.add_argument("--truth", help="truth TSV; adds pairwise precision/recall/F1 columns")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep_t)

    p = sub.add_parser("sweep-epsilon", parents=[common], help="retained scanners/probes over epsilon")
    p.add_argument("input")
    p.add_argument("--grid", default="0,1,2,3,5,10,15,20,50,100")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep_epsilon)

    p = sub.add_parser("stats", parents=[common], help="dataset statistics and port distributions")
    p.add_argument("input")
    p.add_argument("--cluster", action="store_true", help="also run the clustering for campaign counts")
    p.add_argument("--dist-out", help="distribution TSV")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="generate a labelled synthetic log from a scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--log", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--geo-out", help="geolocation CSV for the generated sources")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="pairwise precision/recall/F1 of a report against truth")
    p.add_argument("report")
    p.add_argument("truth")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(name)s: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (IngestError, InputError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"scancorr: error: {type(exc).__name__}: {exc}\n")
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"scancorr: error: InternalError: {type(exc).__name__}: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
