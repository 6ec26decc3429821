import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scancorr.cluster import (
    Campaign,
    Dendrogram,
    Merge,
    cut,
    distributed_fraction,
    extract_campaigns,
    formation_similarity,
    sweep_threshold,
    upgma,
    upgma_naive,
)
from scancorr.similarity import SimilarityMatrix


def from_distances(ids, dist):
    """SimilarityMatrix from a square distance matrix."""
    dist = np.asarray(dist, dtype=float)
    iu = np.triu_indices(len(ids), 1)
    return SimilarityMatrix(ids, 1.0 - dist[iu])


def random_matrix(rng, n, discrete=False):
    if discrete:
        vals = rng.integers(0, 9, size=n * (n - 1) // 2) / 8.0
    else:
        vals = rng.random(n * (n - 1) // 2)
    return SimilarityMatrix([f"s{k:03d}" for k in range(n)], vals)


def leafsets(dg):
    n = len(dg.leaves)
    sets = [frozenset([dg.leaves[i]]) for i in range(n)]
    out = []
    for m in dg.merges:
        sets.append(sets[m.left] | sets[m.right])
        out.append((sets[m.left], sets[m.right], m.distance))
    return out


def test_three_leaf_example():
    m = from_distances(["A", "B", "C"], [[0, 0.1, 0.5], [0.1, 0, 0.3], [0.5, 0.3, 0]])
    dg = upgma(m)
    assert [(x, y) for x, y, _ in leafsets(dg)] == [({"A"}, {"B"}), ({"A", "B"}, {"C"})]
    assert dg.heights == pytest.approx([0.1, 0.4], abs=1e-15)
    assert cut(dg, 0.65) == [frozenset("AB"), frozenset("C")]
    assert cut(dg, 0.0) == [frozenset("ABC")]
    assert cut(dg, 1.0) == [frozenset("A"), frozenset("B"), frozenset("C")]


def test_single_and_empty():
    m = SimilarityMatrix(["x"], [])
    assert upgma(m).merges == []
    assert cut(upgma(m), 0.5) == [frozenset(["x"])]
    assert upgma(SimilarityMatrix([], [])).merges == []


def test_tie_break_prefers_smallest_keys():
    # every pair equally distant: merges must follow canonical order
    m = from_distances(["d", "b", "c", "a"], np.full((4, 4), 0.5))
    got = [(sorted(x), sorted(y)) for x, y, _ in leafsets(upgma(m))]
    assert got == [(["a"], ["b"]), (["a", "b"], ["c"]), (["a", "b", "c"], ["d"])]
    assert leafsets(upgma(m)) == leafsets(upgma_naive(m))


@pytest.mark.parametrize("discrete", [False, True])
def test_matches_naive_oracle(discrete):
    rng = np.random.default_rng(7 + discrete)
    for _ in range(40):
        n = int(rng.integers(2, 25))
        m = random_matrix(rng, n, discrete)
        fast, slow = upgma(m), upgma_naive(m)
        assert [(a.left, a.right, a.size) for a in fast.merges] == [(b.left, b.right, b.size) for b in slow.merges]
        assert np.allclose(fast.heights, slow.heights, rtol=0, atol=1e-12)


def test_heights_are_true_group_averages():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(2, 20))
        m = random_matrix(rng, n)
        d = 1.0 - m.to_square()
        idx = {leaf: k for k, leaf in enumerate(m.ids)}
        for left, right, h in leafsets(upgma(m)):
            avg = np.mean([d[idx[a], idx[b]] for a in left for b in right])
            assert abs(h - avg) < 1e-12


def test_matches_scipy_average_linkage():
    hierarchy = pytest.importorskip("scipy.cluster.hierarchy")
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(2, 40))
        m = random_matrix(rng, n)
        ref = hierarchy.linkage(m.distances(), method="average")
        assert np.allclose(sorted(upgma(m).heights), sorted(ref[:, 2]), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.booleans(), st.randoms())
def test_permutation_invariance(n, seed, discrete, rnd):
    m = random_matrix(np.random.default_rng(seed), n, discrete)
    perm = list(range(n))
    rnd.shuffle(perm)
    sq = m.to_square()[np.ix_(perm, perm)]
    iu = np.triu_indices(n, 1)
    shuffled = SimilarityMatrix([m.ids[p] for p in perm], sq[iu])
    assert leafsets(upgma(m)) == leafsets(upgma(shuffled))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**32 - 1), st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_cut_partitions_and_counts(n, seed, ts):
    dg = upgma(random_matrix(np.random.default_rng(seed), n, discrete=True))
    dg.check()
    ts = sorted(ts)
    counts = []
    for t in ts:
        parts = cut(dg, t)
        members = [x for p in parts for x in p]
        assert sorted(members) == sorted(dg.leaves) and all(parts)
        counts.append(len(parts))
    assert counts == sorted(counts)
    assert [c for _, c in sweep_threshold(dg, ts)] == counts
    assert len(cut(dg, 0.0)) == 1
    assert len(cut(dg, 1.0 + 1e-9)) == n


def test_sweep_examples():
    m = from_distances(["A", "B", "C"], [[0, 0.1, 0.5], [0.1, 0, 0.3], [0.5, 0.3, 0]])
    dg = upgma(m)
    assert sweep_threshold(dg, [0.0, 0.65, 0.95]) == [(0.0, 1), (0.65, 2), (0.95, 3)]
    with pytest.raises(ValueError):
        sweep_threshold(dg, [1.5])


def test_extract_campaigns_examples():
    campaigns, standalone = extract_campaigns([frozenset("AB"), frozenset("C")])
    assert [c.members for c in campaigns] == [frozenset("AB")] and standalone == ["C"]
    assert distributed_fraction(campaigns, 3) == pytest.approx(2 / 3)
    campaigns, standalone = extract_campaigns([frozenset("A"), frozenset("B")])
    assert campaigns == [] and distributed_fraction(campaigns, 2) == 0
    campaigns, _ = extract_campaigns([frozenset("ABCD")])
    assert distributed_fraction(campaigns, 4) == 1
    with pytest.raises(ValueError):
        Campaign(frozenset("A"))


def test_formation_similarity():
    m = from_distances(["A", "B", "C"], [[0, 0.1, 0.5], [0.1, 0, 0.3], [0.5, 0.3, 0]])
    dg = upgma(m)
    campaigns, _ = extract_campaigns(cut(dg, 0.65), dg)
    assert campaigns[0].formation_similarity == pytest.approx(0.9)
    assert campaigns[0].formation_similarity >= 0.65
    assert formation_similarity(dg, frozenset("AC")) is None


def test_dendrogram_check_catches_bad_trees():
    bad = Dendrogram(["a", "b", "c"], [Merge(0, 1, 0.5, 2), Merge(3, 2, 0.4, 3)])
    with pytest.raises(AssertionError):
        bad.check()
    reuse = Dendrogram(["a", "b", "c"], [Merge(0, 1, 0.1, 2), Merge(0, 2, 0.4, 2)])
    with pytest.raises(AssertionError):
        reuse.check()


def test_dendrogram_tsv():
    import io

    m = from_distances(["A", "B", "C"], [[0, 0.1, 0.5], [0.1, 0, 0.3], [0.5, 0.3, 0]])
    buf = io.StringIO()
    upgma(m).write_tsv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "left\tright\tdistance\tsize"
    assert lines[1].startswith("A\tB\t") and lines[2].startswith("#3\tC\t")
