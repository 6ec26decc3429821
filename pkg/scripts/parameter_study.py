"""Sweep the cutoff t and the probe filter epsilon on a synthetic scenario.

Prints two TSV tables: clustering quality over t at a fixed epsilon, and
scanners/probes retained over epsilon.

    python3 scripts/parameter_study.py [--scenario scenarios/acceptance.json] [--epsilon 5]
"""

import argparse
import sys
from pathlib import Path

from scancorr.cluster import sweep_threshold
from scancorr.detect import ProbeCounter, iter_probes
from scancorr.pipeline import RunConfig, correlate
from scancorr.synth import generate_dataset, load_scenario, pairwise_eval

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=ROOT / "scenarios" / "acceptance.json")
    ap.add_argument("--epsilon", type=int, default=5)
    ap.add_argument("--step", type=float, default=0.05)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)

    with open(args.scenario, encoding="utf-8") as fh:
        campaigns, noise, seed = load_scenario(fh)
    ds = generate_dataset(campaigns, noise, seed if args.seed is None else args.seed)
    probes = list(iter_probes(ds.records))

    result = correlate(probes, RunConfig(epsilon=args.epsilon), ds.geo)
    grid = [round(k * args.step, 6) for k in range(int(round(1 / args.step)) + 1)]
    out = sys.stdout
    out.write(f"# t sweep, epsilon={args.epsilon}, scanners={len(result.profiles)}\n")
    out.write("t\tclusters\tcampaigns\tdistributed\tprecision\trecall\tf1\n")
    for t, n_clusters in sweep_threshold(result.dendrogram, grid):
        found, _ = result.recut(t)
        distributed = sum(len(c) for c in found) / len(result.profiles)
        p, r, f1 = pairwise_eval(found, ds.truth)
        out.write(f"{t}\t{n_clusters}\t{len(found)}\t{distributed:.4f}\t{p:.4f}\t{r:.4f}\t{f1:.4f}\n")

    counter = ProbeCounter()
    for pr in probes:
        counter.add(pr)
    out.write("\n# epsilon sweep\n")
    out.write("epsilon\tscanners\tprobes\tscanner_fraction\tprobe_fraction\n")
    for eps in (0, 1, 2, 3, 5, 10, 15, 20, 50, 100):
        s, p = counter.retained(eps)
        out.write(f"{eps}\t{s}\t{p}\t{s / counter.scanners:.4f}\t{p / counter.total:.4f}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
