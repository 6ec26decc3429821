"""UPGMA (average-linkage) clustering of scanner similarities and campaign cuts.

Distances are ``1 - similarity``. Ties between equally distant pairs are
broken on the canonical keys of the two clusters (a cluster's key is the
smallest canonical key of its members): the pair whose (smaller, larger)
keys compare lexicographically least is merged first.
"""

import bisect
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .netutil import ip_key

DEFAULT_T = 0.15


class Merge(NamedTuple):
    left: int
    right: int
    distance: float
    size: int


@dataclass
class Dendrogram:
    """Leaves ``0..n-1`` plus one internal node ``n + k`` per merge ``k``."""

    leaves: list
    merges: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.leaves)
        if len(self.merges) not in (0, max(n - 1, 0)) and n > 0:
            raise ValueError(f"{n} leaves need {n - 1} merges, got {len(self.merges)}")
        self._parent = None

    @property
    def heights(self):
        return [m.distance for m in self.merges]

    def node_size(self, node):
        n = len(self.leaves)
        return 1 if node < n else self.merges[node - n].size

    def parents(self):
        if self._parent is None:
            n = len(self.leaves)
            parent = [-1] * (n + len(self.merges))
            for k, m in enumerate(self.merges):
                parent[m.left] = n + k
                parent[m.right] = n + k
            self._parent = parent
        return self._parent

    def check(self):
        """Validate merge inputs are used once and heights never decrease."""
        n = len(self.leaves)
        used = set()
        last = -np.inf
        for k, m in enumerate(self.merges):
            for node in (m.left, m.right):
                if node in used or not 0 <= node < n + k:
                    raise AssertionError(f"merge {k} reuses or forward-references node {node}")
                used.add(node)
            if m.distance < last:
                raise AssertionError(f"merge {k} height {m.distance} below previous {last}")
            last = m.distance

    def to_linkage(self):
        """scipy-style (n-1) x 4 linkage array."""
        return np.array([[m.left, m.right, m.distance, m.size] for m in self.merges], dtype=np.float64).reshape(-1, 4)

    def write_tsv(self, fh):
        fh.write("left\tright\tdistance\tsize\n")
        n = len(self.leaves)

        def label(node):
            return str(self.leaves[node]) if node < n else f"#{node}"

        for m in self.merges:
            fh.write(f"{label(m.left)}\t{label(m.right)}\t{m.distance!r}\t{m.size}\n")


@dataclass(frozen=True)
class Campaign:
    members: frozenset
    formation_similarity: float | None = None

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("a campaign has at least two scanners")

    def __len__(self):
        return len(self.members)


def canonical_ranks(ids):
    """Rank of each identity in canonical order (IP byte order for addresses)."""
    try:
        order = sorted(range(len(ids)), key=lambda i: ip_key(ids[i]))
    except AttributeError:
        order = sorted(range(len(ids)), key=lambda i: ids[i])
    ranks = np.empty(len(ids), dtype=np.int64)
    ranks[order] = np.arange(len(ids))
    return ranks


def upgma(m, keys=None):
    """Average-linkage clustering over a :class:`SimilarityMatrix`.

    Keeps a nearest-neighbour pointer per active cluster; after each merge
    only rows whose neighbour disappeared are rescanned. ``keys`` overrides
    the canonical tie-break ranks.
    """
    ids = list(m.ids)
    n = len(ids)
    if n == 0:
        return Dendrogram([], [])
    key = canonical_ranks(ids) if keys is None else np.asarray(keys, dtype=np.int64)
    if n == 1:
        return Dendrogram(ids, [])

    D = 1.0 - m.to_square()
    np.fill_diagonal(D, np.inf)
    size = np.ones(n, dtype=np.int64)
    node = np.arange(n)
    active = np.ones(n, dtype=bool)
    nn = np.zeros(n, dtype=np.int64)
    nnd = np.zeros(n)

    def best(i):
        row = D[i]
        d = row.min()
        cands = np.flatnonzero(row == d)
        j = cands[np.argmin(key[cands])] if len(cands) > 1 else cands[0]
        nn[i] = j
        nnd[i] = d

    for i in range(n):
        best(i)

    merges = []
    last = 0.0
    for step in range(n - 1):
        rows = np.flatnonzero(active)
        dmin = nnd[rows].min()
        cand = rows[nnd[rows] == dmin]
        if len(cand) > 1:
            k1 = np.minimum(key[cand], key[nn[cand]])
            k2 = np.maximum(key[cand], key[nn[cand]])
            i = cand[np.lexsort((k2, k1))[0]]
        else:
            i = cand[0]
        j = nn[i]
        a, b = (i, j) if key[i] < key[j] else (j, i)
        h = max(float(D[a, b]), last)
        last = h
        na, nb = size[a], size[b]
        merges.append(Merge(int(node[a]), int(node[b]), h, int(na + nb)))

        new = (na * D[a] + nb * D[b]) / (na + nb)
        D[a] = new
        D[:, a] = new
        D[a, a] = np.inf
        D[b] = np.inf
        D[:, b] = np.inf
        active[b] = False
        size[a] = na + nb
        node[a] = n + step
        if step == n - 2:
            break

        rows = np.flatnonzero(active)
        rows = rows[rows != a]
        stale = rows[(nn[rows] == a) | (nn[rows] == b)]
        for c in stale:
            best(c)
        rest = rows[(nn[rows] != a) & (nn[rows] != b)]
        da = D[rest, a]
        better = (da < nnd[rest]) | ((da == nnd[rest]) & (key[a] < key[nn[rest]]))
        upd = rest[better]
        nn[upd] = a
        nnd[upd] = da[better]
        best(a)

    dg = Dendrogram(ids, merges)
    dg.check()
    return dg


def upgma_naive(m, keys=None):
    """Reference UPGMA: rescan every active pair at every step, O(n^3)."""
    ids = list(m.ids)
    n = len(ids)
    key = list(canonical_ranks(ids)) if keys is None else [int(k) for k in keys]
    dist = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = 1.0 - m[i, j]

    def d(x, y):
        return dist[(x, y) if x < y else (y, x)]

    active = list(range(n))
    size = [1] * n
    node = list(range(n))
    merges = []
    last = 0.0
    for step in range(n - 1):
        best = None
        for x in range(len(active)):
            for y in range(x + 1, len(active)):
                p, q = active[x], active[y]
                cand = (d(p, q), min(key[p], key[q]), max(key[p], key[q]), p, q)
                if best is None or cand[:3] < best[:3]:
                    best = cand
        dd, _, _, p, q = best
        a, b = (p, q) if key[p] < key[q] else (q, p)
        h = max(dd, last)
        last = h
        na, nb = size[a], size[b]
        merges.append(Merge(node[a], node[b], h, na + nb))
        active.remove(b)
        for c in active:
            if c != a:
                new = (na * d(a, c) + nb * d(b, c)) / (na + nb)
                dist[(a, c) if a < c else (c, a)] = new
        size[a] = na + nb
        node[a] = n + step
    return Dendrogram(ids, merges)


def _forest(dg, t):
    """Union the leaves of every merge at distance <= 1 - t."""
    n = len(dg.leaves)
    cutoff = 1.0 - t
    parent = list(range(n))
    rep = list(range(n))  # some leaf under each node

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for m in dg.merges:
        ra, rb = rep[m.left], rep[m.right]
        rep.append(ra)
        if m.distance <= cutoff:
            parent[find(rb)] = find(ra)
    groups = {}
    for leaf in range(n):
        groups.setdefault(find(leaf), []).append(leaf)
    return list(groups.values())


def cut(dg, t=DEFAULT_T):
    """Partition the leaves by applying merges with similarity >= t.

    Clusters come back ordered by their smallest canonical member.
    """
    ranks = canonical_ranks(dg.leaves) if dg.leaves else []
    parts = _forest(dg, t)
    parts.sort(key=lambda leaves: min(ranks[x] for x in leaves))
    return [frozenset(dg.leaves[x] for x in leaves) for leaves in parts]


def formation_similarity(dg, members):
    """Similarity of the merge that completed ``members`` as one subtree."""
    if len(members) < 2:
        return None
    index = {leaf: i for i, leaf in enumerate(dg.leaves)}
    parent = dg.parents()
    tops = set()
    for leaf in members:
        x = index[leaf]
        while dg.node_size(x) < len(members):
            x = parent[x]
            if x < 0:
                return None
        tops.add(x)
    # one common node of exactly this size means the subtree is exactly ``members``
    if len(tops) != 1 or dg.node_size(x) != len(members):
        return None
    return 1.0 - dg.merges[x - len(dg.leaves)].distance


def extract_campaigns(clusters, dg=None, min_size=2):
    """Split clusters into campaigns (size >= min_size) and standalone scanners."""
    campaigns = []
    standalone = []
    for c in clusters:
        if len(c) >= max(min_size, 2):
            form = formation_similarity(dg, c) if dg is not None else None
            campaigns.append(Campaign(frozenset(c), form))
        else:
            standalone.extend(c)
    return campaigns, standalone


def distributed_fraction(campaigns, n_scanners):
    if n_scanners == 0:
        return 0.0
    return sum(len(c) for c in campaigns) / n_scanners


def sweep_threshold(dg, grid):
    """Cluster count for each t in ``grid`` from one sorted pass over merge heights."""
    n = len(dg.leaves)
    heights = sorted(dg.heights)
    out = []
    for t in grid:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t outside [0, 1]: {t}")
        applied = bisect.bisect_right(heights, 1.0 - t)
        out.append((t, n - applied))
    return out
