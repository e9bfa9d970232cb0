import math

import numpy as np
import pytest

from treebroadcast.channel import ModelParams, ParameterError
from treebroadcast.sbm import (
    SbmGraph,
    bfs_tree_code,
    bin_poi_tv_bound,
    coupling_diagnostics,
    extract_neighborhood,
    overlap_statistic,
    partition_map_success,
    read_edge_list,
    sample_sbm,
    two_point_estimate,
    write_edge_list,
)


def _graph(n=10_000, q=4, d=5.0, lam=0.4, seed=3):
    params = ModelParams.from_dlambda(q, d, lam)
    return sample_sbm(n, params, np.random.default_rng(seed), seed=seed)


def test_structural_invariants():
    g = _graph()
    assert np.all(g.edges[:, 0] < g.edges[:, 1])  # no self-loops, sorted pairs
    # symmetry by construction of the CSR
    indptr, indices = g.adjacency()
    assert indptr[-1] == 2 * g.n_edges
    v = int(g.edges[0, 0])
    w = int(g.edges[0, 1])
    assert w in g.neighbors(v) and v in g.neighbors(w)
    # no duplicate edges
    keys = g.edges[:, 0] * g.n + g.edges[:, 1]
    assert np.unique(keys).size == keys.size


def test_erdos_renyi_edge_count():
    n, d = 10_000, 5.0
    params = ModelParams.from_dlambda(3, d, 0.0)  # a = b = d
    counts = [
        sample_sbm(n, params, np.random.default_rng(k)).n_edges for k in range(30)
    ]
    counts = np.array(counts, dtype=float)
    want = n * (n - 1) / 2 * d / n
    se = counts.std(ddof=1) / math.sqrt(len(counts))
    assert abs(counts.mean() - want) < 4 * se


def test_label_histogram():
    g = _graph(n=100_000)
    hist = np.bincount(g.labels - 1, minlength=4)
    se = math.sqrt(100_000 * 0.25 * 0.75)
    assert np.abs(hist - 25_000).max() < 4 * se


def test_monochromatic_edge_fraction():
    # q=4, d=5, lambda=0.4 -> a=11, b=3; mono fraction = a/(a+(q-1)b) = 0.55
    g = _graph(n=100_000, q=4, d=5.0, lam=0.4)
    assert g.params.a == pytest.approx(11.0)
    assert g.params.b == pytest.approx(3.0)
    mono = np.mean(g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]])
    se = math.sqrt(0.55 * 0.45 / g.n_edges)
    assert abs(mono - 0.55) < 4 * se


def test_rates_out_of_range():
    params = ModelParams.from_ab(2, 3.0, 1.0)
    with pytest.raises(ParameterError):
        sample_sbm(2, params, np.random.default_rng(0))


def test_extract_neighborhood_radius_zero():
    g = _graph(n=1000)
    samp = extract_neighborhood(g, 17, 0)
    assert samp.vertices.tolist() == [17]
    assert samp.is_tree
    assert samp.tree.n_vertices == 1


def test_extract_neighborhood_isolated_vertex():
    params = ModelParams.from_dlambda(3, 2.0, 0.1)
    g = SbmGraph(n=5, params=params, labels=np.array([1, 2, 3, 1, 2]),
                 edges=np.empty((0, 2), dtype=np.int64))
    samp = extract_neighborhood(g, 2, 3)
    assert samp.is_tree and samp.tree.n_vertices == 1
    assert samp.boundary_spins.size == 0


def test_extract_neighborhood_cycle_flagged():
    params = ModelParams.from_dlambda(2, 2.0, 0.1)
    edges = np.array([[0, 1], [1, 2], [0, 2]])
    g = SbmGraph(n=3, params=params, labels=np.array([1, 2, 1]), edges=edges)
    # at radius 1 the 1-2 edge joins two boundary vertices: never examined
    samp = extract_neighborhood(g, 0, 1)
    assert samp.is_tree
    # at radius 2 the exploration hits it as a cross edge
    samp2 = extract_neighborhood(g, 0, 2)
    assert not samp2.is_tree
    assert samp2.code is None
    assert bfs_tree_code(samp2)  # BFS-tree fallback code still available


def test_nontree_fraction_sparse(rng):
    g = _graph(n=100_000, d=5.0)
    centers = rng.choice(g.n, 1000, replace=False)
    nontree = sum(
        not extract_neighborhood(g, int(v), 2).is_tree for v in centers
    )
    assert nontree / 1000 < 0.01


def test_bin_poi_bound_value():
    val = bin_poi_tv_bound(5.0, 100_000 - 1, 5.0 / 100_000)
    assert val == pytest.approx(25.0 / 99_999 + abs(99_999 * 5e-5 - 5.0), abs=1e-12)
    assert val < 3.01e-4  # the d^2/(n-1) + |rp - theta| evaluation, ~3.0e-4


def test_coupling_radius_zero(rng):
    params = ModelParams.from_dlambda(4, 5.0, 0.4)
    rep = coupling_diagnostics(20_000, params, 0, 2000, rng)
    # both sides reduce to the uniform spin law
    assert rep.tv < 0.08
    assert rep.sbm_tree_fraction == 1.0


@pytest.mark.slow
def test_coupling_moderate(rng):
    params = ModelParams.from_dlambda(4, 5.0, 0.4)
    rep = coupling_diagnostics(50_000, params, 2, 1000, rng)
    # the full (shape, boundary) classes are near-singletons at ell=2, so the
    # raw empirical TV is dominated by counting, not by the coupling error;
    # the O(1)-cell projections carry the statistical content
    assert rep.tv > 0.9
    assert rep.tv_center_spin < 0.05
    assert rep.tv_root_degree < 0.10
    assert rep.tv_boundary_spin < 0.05
    # d^2/(n-1) + |(n-1) d/n - d| at n = 5e4, d = 5
    assert rep.analytic_bound_aggregate == pytest.approx(25 / 49_999 + 5 / 50_000, abs=1e-12)


def test_partition_map_null(rng):
    params = ModelParams.from_dlambda(4, 5.0, 0.0)
    g = sample_sbm(50_000, params, rng)
    rep = partition_map_success(g, 2, 8000, rng, holdout=0.5)
    # out-of-sample, no signal: exactly chance
    assert abs(rep.holdout_success - 0.25) < 0.025
    # the in-sample rate is never below chance (and is inflated by small classes)
    assert rep.success >= 0.25 - 0.02


def test_partition_map_signal(rng):
    params = ModelParams.from_dlambda(3, 100.0, 1.2 / 10.0)
    g = sample_sbm(50_000, params, rng)
    rep = partition_map_success(g, 1, 3000, rng, include_nontree=True)
    assert rep.success > 1.0 / 3.0 + 0.02


def test_overlap_exact_and_constant():
    g = _graph(n=5000)
    val, perm = overlap_statistic(g, g.labels)
    assert val == 1.0 and perm == (1, 2, 3, 4)
    const = np.ones(g.n, dtype=np.int64)
    val_c, _ = overlap_statistic(g, const)
    assert val_c == pytest.approx(np.bincount(g.labels).max() / g.n, abs=1e-12)


def test_overlap_permutation_invariance():
    g = _graph(n=3000)
    mapping = np.array([0, 3, 1, 4, 2])  # labels -> permuted labels
    est = mapping[g.labels]
    val, perm = overlap_statistic(g, est)
    assert val == 1.0
    # permuting the estimate's names must not change the value
    mapping2 = np.array([0, 2, 4, 1, 3])
    val2, _ = overlap_statistic(g, mapping2[est])
    assert val2 == 1.0


def test_overlap_guard():
    params = ModelParams.from_dlambda(9, 3.0, 0.1)
    g = SbmGraph(n=3, params=params, labels=np.array([1, 2, 3]),
                 edges=np.empty((0, 2), dtype=np.int64))
    with pytest.raises(ParameterError):
        overlap_statistic(g, np.array([1, 2, 3]))


def test_two_point_uniform_at_lambda_zero(rng):
    params = ModelParams.from_dlambda(4, 5.0, 0.0)
    g = sample_sbm(5000, params, rng)
    u, v = int(g.edges[0, 0]), int(g.edges[0, 1])
    vec, ok = two_point_estimate(g, u, v, 2)
    assert np.abs(vec - 0.25).max() < 1e-12


def test_two_point_adjacent():
    params = ModelParams.from_dlambda(4, 5.0, 0.5)
    rng = np.random.default_rng(10)
    g = sample_sbm(20_000, params, rng)
    for u, v in g.edges[:50]:
        samp = extract_neighborhood(g, int(u), 1)
        if not samp.is_tree:
            continue
        vec, ok = two_point_estimate(g, int(u), int(v), 1)
        assert ok
        assert vec[0] == pytest.approx(0.625, abs=1e-12)
        assert vec[1] == pytest.approx(0.125, abs=1e-12)
        break
    else:
        pytest.skip("no tree neighborhood found among the first 50 edges")


def test_two_point_path_composition():
    # distance-k tree path: the conditional equals the k-fold channel power
    params = ModelParams.from_dlambda(3, 2.0, 0.6)
    edges = np.array([[0, 1], [1, 2], [2, 3]])
    g = SbmGraph(n=4, params=params, labels=np.array([1, 1, 2, 3]), edges=edges)
    vec, ok = two_point_estimate(g, 0, 3, 3)
    assert ok
    lam_k = 0.6**3
    want = np.full(3, (1 - lam_k) / 3)
    want[0] += lam_k
    assert np.abs(vec - want).max() < 1e-12


def test_two_point_out_of_range():
    params = ModelParams.from_dlambda(3, 2.0, 0.6)
    edges = np.array([[0, 1], [1, 2], [2, 3]])
    g = SbmGraph(n=4, params=params, labels=np.array([1, 1, 2, 3]), edges=edges)
    vec, ok = two_point_estimate(g, 0, 3, 2)
    assert not ok
    assert np.abs(vec - 1.0 / 3.0).max() < 1e-15
    with pytest.raises(ParameterError):
        two_point_estimate(g, 0, 0, 2)


def test_edge_list_roundtrip(tmp_path):
    g = _graph(n=2000)
    path = str(tmp_path / "g.edges")
    write_edge_list(g, path)
    g2 = read_edge_list(path)
    assert g2.n == g.n
    assert np.array_equal(g2.labels, g.labels)
    assert np.array_equal(g2.edges, g.edges)
    assert g2.params.q == g.params.q
    path2 = str(tmp_path / "g2.edges")
    write_edge_list(g2, path2)
    assert open(path).read() == open(path2).read()


@pytest.mark.slow
def test_coupling_tv_decreases_with_n():
    # fixed-seed statistical trend over 5 repetitions at each size
    params = ModelParams.from_dlambda(4, 5.0, 0.4)
    means = {}
    for n in (1000, 100_000):
        deg, cls = [], []
        for rep in range(5):
            r = coupling_diagnostics(n, params, 1, 1000, np.random.default_rng(1000 + rep))
            deg.append(r.tv_root_degree)
            cls.append(r.tv)
        means[n] = (float(np.mean(deg)), float(np.mean(cls)))
    assert means[100_000][0] < means[1000][0]
    assert means[100_000][1] < means[1000][1]


def test_partition_tallies_exposed(rng):
    from treebroadcast.sbm import PartitionClassTally

    g = _graph(n=3000)
    rep = partition_map_success(g, 1, 400, rng, return_tallies=True)
    assert rep.tallies
    assert all(isinstance(t, PartitionClassTally) for t in rep.tallies)
    assert sum(t.size for t in rep.tallies) == rep.classified
    assert all(t.counts.sum() == t.size for t in rep.tallies)
