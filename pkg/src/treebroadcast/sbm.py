"""Sparse stochastic block model: sampling, local neighborhoods, tree-coupling
diagnostics, the partition-class majority estimator, and overlap statistics.

Edge generation is block-binomial: for each ordered class pair the edge count
is drawn once, then placed uniformly without collision, so a graph costs
O(edges) expected work rather than Theta(n^2) pair flips.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ModelParams, ParameterError
from .gwtree import Poisson, RootedTree, broadcast, canonical_code, sample_tree
from .posterior import _message_pass

OVERLAP_FACTORIAL_GUARD = 8


@dataclass
class SbmGraph:
    n: int
    params: ModelParams
    labels: np.ndarray            # true spin per vertex, 1..q
    edges: np.ndarray             # (m, 2) with u < v
    seed: int = 0
    _indptr: np.ndarray | None = field(default=None, repr=False)
    _indices: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR neighbor lists (indptr, indices)."""
        if self._indptr is None:
            ends = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
            peers = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
            order = np.argsort(ends, kind="stable")
            deg = np.bincount(ends, minlength=self.n)
            self._indptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
            self._indices = peers[order]
        return self._indptr, self._indices

    def neighbors(self, v: int) -> np.ndarray:
        indptr, indices = self.adjacency()
        return indices[indptr[v] : indptr[v + 1]]


def _sample_distinct(count: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """k distinct uniform indices from range(count); k is far below count here."""
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k > count:
        raise ParameterError("more edges requested than available slots")
    chosen = np.unique(rng.integers(0, count, k))
    while chosen.size < k:
        extra = rng.integers(0, count, k - chosen.size)
        chosen = np.unique(np.concatenate([chosen, extra]))
    return chosen


def _decode_within(t: np.ndarray, members: np.ndarray) -> np.ndarray:
    """Pair index t -> (u, v) inside one class: t = r(r-1)/2 + c with c < r."""
    r = ((1.0 + np.sqrt(1.0 + 8.0 * t.astype(float))) / 2.0).astype(np.int64)
    r -= r * (r - 1) // 2 > t
    r += (r + 1) * r // 2 <= t
    c = t - r * (r - 1) // 2
    return np.stack([members[c], members[r]], axis=1)


def sample_sbm(n: int, params: ModelParams, rng: np.random.Generator, seed: int = 0) -> SbmGraph:
    """Labels i.i.d. uniform; each pair present w.p. a/n (same label) or b/n."""
    q = params.q
    p_in, p_out = params.a / n, params.b / n
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ParameterError(f"edge rates a/n={p_in!r}, b/n={p_out!r} must lie in [0, 1]")
    labels = rng.integers(1, q + 1, n)
    members = [np.flatnonzero(labels == i + 1) for i in range(q)]
    parts = []
    for i in range(q):
        ni = members[i].size
        count = ni * (ni - 1) // 2
        m_e = rng.binomial(count, p_in) if count else 0
        if m_e:
            parts.append(_decode_within(_sample_distinct(count, m_e, rng), members[i]))
        for j in range(i + 1, q):
            nj = members[j].size
            count = ni * nj
            m_e = rng.binomial(count, p_out) if count else 0
            if m_e:
                t = _sample_distinct(count, m_e, rng)
                pair = np.stack([members[i][t // nj], members[j][t % nj]], axis=1)
                parts.append(pair)
    if parts:
        edges = np.concatenate(parts)
        edges = np.sort(edges, axis=1)
        edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    else:
        edges = np.empty((0, 2), dtype=np.int64)
    return SbmGraph(n=n, params=params, labels=labels, edges=edges, seed=seed)


@dataclass
class NeighborhoodSample:
    center: int
    radius: int
    vertices: np.ndarray          # ball in BFS order, vertices[0] == center
    depths: np.ndarray
    is_tree: bool
    tree: RootedTree | None       # BFS tree over the ball (always present)
    boundary_spins: np.ndarray    # labels at distance exactly radius, BFS order
    code: bytes | None            # canonical code; None for non-tree balls
    center_spin: int


def bfs_tree_code(sample: NeighborhoodSample) -> bytes:
    """Canonical code of the BFS tree part (also for non-tree neighborhoods)."""
    if sample.code is not None:
        return sample.code
    return canonical_code(sample.tree, sample.boundary_spins)


def extract_neighborhood(graph: SbmGraph, v: int, ell: int) -> NeighborhoodSample:
    """Breadth-first ball of radius ell; flags whether it is a tree."""
    if ell < 0:
        raise ParameterError("radius must be >= 0")
    indptr, indices = graph.adjacency()
    order = [v]
    depth = [0]
    parent = [-1]
    seen = {v: 0}
    head = 0
    extra_edges = 0
    while head < len(order):
        u = order[head]
        du = depth[head]
        if du < ell:
            for w in indices[indptr[u] : indptr[u + 1]]:
                w = int(w)
                if w not in seen:
                    seen[w] = len(order)
                    order.append(w)
                    depth.append(du + 1)
                    parent.append(head)
                elif seen[w] != parent[head]:
                    # cross/back edge inside the explored structure; edges
                    # among two distance-ell vertices are never examined,
                    # matching the level-by-level reveal the coupling uses
                    extra_edges += 1
        head += 1
    is_tree = extra_edges == 0
    verts = np.asarray(order, dtype=np.int64)
    depths = np.asarray(depth, dtype=np.int64)
    tree = RootedTree.from_parents(np.asarray(parent, dtype=np.int64), depth_bound=ell)
    boundary_spins = graph.labels[verts[tree.boundary]]
    code = canonical_code(tree, boundary_spins) if is_tree else None
    return NeighborhoodSample(
        center=v, radius=ell, vertices=verts, depths=depths, is_tree=is_tree,
        tree=tree, boundary_spins=boundary_spins, code=code,
        center_spin=int(graph.labels[v]),
    )


def bin_poi_tv_bound(theta: float, r: int, p: float) -> float:
    """Total-variation bound between Poi(theta) and Bin(r, p): theta^2/r + |rp - theta|."""
    if theta < 0 or r <= 0 or p < 0:
        raise ParameterError("need theta >= 0, r > 0, p >= 0")
    return theta * theta / r + abs(r * p - theta)


@dataclass(frozen=True)
class CouplingReport:
    n: int
    m: int
    ell: int
    degree_cap: int
    tv: float                      # over the full (code, center spin) classes
    tv_center_spin: float          # projections with O(1) cells: these carry
    tv_root_degree: float          # the statistical content at finite m, since
    tv_boundary_spin: float        # full classes are near-singletons for ell >= 2
    sbm_tree_fraction: float
    sbm_included: int
    gw_included: int
    analytic_bound_aggregate: float
    analytic_bound_within: float
    analytic_bound_between: float


def coupling_diagnostics(
    n: int,
    params: ModelParams,
    ell: int,
    m: int,
    rng: np.random.Generator,
    degree_cap: int | None = None,
    graph: SbmGraph | None = None,
) -> CouplingReport:
    """Empirical class-frequency TV between SBM neighborhoods and GW broadcasts.

    Classes are (canonical code with boundary spins, center spin) restricted
    to tree neighborhoods of maximal degree <= degree_cap (default 3d).
    """
    if graph is None:
        graph = sample_sbm(n, params, rng)
    if m > graph.n:
        raise ParameterError("more centers than vertices")
    q, d = params.q, params.d
    cap = int(degree_cap if degree_cap is not None else math.ceil(3 * d))
    centers = rng.choice(graph.n, size=m, replace=False)
    sbm_counts: dict = {}
    sbm_proj = {"spin": {}, "degree": {}, "boundary": {}}
    tree_hits = 0
    included = 0
    for v in centers:
        samp = extract_neighborhood(graph, int(v), ell)
        if not samp.is_tree:
            continue
        tree_hits += 1
        if _max_degree(samp.tree) > cap:
            continue
        included += 1
        key = (samp.code, samp.center_spin)
        sbm_counts[key] = sbm_counts.get(key, 0) + 1
        _project(sbm_proj, samp.center_spin, samp.tree.root_degree, samp.boundary_spins)
    dist = Poisson(d)
    gw_counts: dict = {}
    gw_proj = {"spin": {}, "degree": {}, "boundary": {}}
    gw_included = 0
    for _ in range(m):
        tree = sample_tree(dist, ell, rng)
        if _max_degree(tree) > cap:
            continue
        spins = broadcast(tree, params, None, rng)
        boundary = spins.spins[tree.boundary]
        key = (canonical_code(tree, boundary), int(spins.spins[0]))
        gw_counts[key] = gw_counts.get(key, 0) + 1
        gw_included += 1
        _project(gw_proj, int(spins.spins[0]), tree.root_degree, boundary)
    tv = _tv_distance(sbm_counts, included, gw_counts, gw_included)
    sbm_b = sum(sbm_proj["boundary"].values())
    gw_b = sum(gw_proj["boundary"].values())
    within = bin_poi_tv_bound(params.a / q, max(n // q - 1, 1), params.a / n)
    between = bin_poi_tv_bound(params.b / q, max(n // q, 1), params.b / n)
    return CouplingReport(
        n=graph.n, m=m, ell=ell, degree_cap=cap, tv=tv,
        tv_center_spin=_tv_distance(sbm_proj["spin"], included, gw_proj["spin"], gw_included),
        tv_root_degree=_tv_distance(sbm_proj["degree"], included, gw_proj["degree"], gw_included),
        tv_boundary_spin=_tv_distance(sbm_proj["boundary"], sbm_b, gw_proj["boundary"], gw_b),
        sbm_tree_fraction=tree_hits / m if m else 0.0,
        sbm_included=included, gw_included=gw_included,
        analytic_bound_aggregate=bin_poi_tv_bound(d, graph.n - 1, d / graph.n),
        analytic_bound_within=within, analytic_bound_between=between,
    )


def _project(proj: dict, spin: int, degree: int, boundary) -> None:
    proj["spin"][spin] = proj["spin"].get(spin, 0) + 1
    proj["degree"][degree] = proj["degree"].get(degree, 0) + 1
    for s in boundary:
        s = int(s)
        proj["boundary"][s] = proj["boundary"].get(s, 0) + 1


def _max_degree(tree: RootedTree) -> int:
    if tree.n_vertices == 1:
        return 0
    counts = np.bincount(tree.parent[1:], minlength=tree.n_vertices)
    counts[1:] += 1  # non-root vertices also touch their parent
    return int(counts.max())


def _tv_distance(counts_a: dict, tot_a: int, counts_b: dict, tot_b: int) -> float:
    if tot_a == 0 or tot_b == 0:
        return 1.0
    tv = 0.0
    for key in set(counts_a) | set(counts_b):
        tv += abs(counts_a.get(key, 0) / tot_a - counts_b.get(key, 0) / tot_b)
    return 0.5 * tv


@dataclass(frozen=True)
class PartitionClassTally:
    key: bytes
    counts: np.ndarray  # per center-spin counts, length q

    @property
    def size(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class PartitionMapReport:
    n: int
    m: int
    ell: int
    success: float                 # sum of class maxima over all m centers
    success_classified: float      # the same over classified centers only
    classified: int
    nontree_fraction: float
    n_classes: int
    include_nontree: bool
    holdout_success: float | None = None   # out-of-sample majority success
    holdout_unseen: float | None = None    # eval centers in unseen classes
    holdout_m: int = 0
    tallies: tuple = ()                    # PartitionClassTally, when requested


def partition_map_success(
    graph: SbmGraph,
    ell: int,
    m: int,
    rng: np.random.Generator,
    include_nontree: bool = False,
    holdout: float = 0.0,
    return_tallies: bool = False,
) -> PartitionMapReport:
    """Success rate of the class-majority estimator over m sampled centers.

    Centers are grouped by (canonical neighborhood code, boundary spins); the
    estimator assigns every class its majority true spin (ties toward the
    smallest state), which is exactly the class-MAP rule in this simulation
    setting.  The headline `success` is the in-sample rate Sum_c max_i/m; at
    desk scale most classes hold one center each, which inflates it above
    chance even with zero signal.  Pass holdout > 0 to also fit on a fraction
    of the centers and score the rest (unseen classes fall back to state 1),
    giving an exactly chance-level null.  Non-tree neighborhoods are excluded
    unless include_nontree, in which case their BFS-tree code stands in.
    """
    if m > graph.n:
        raise ParameterError("more centers than vertices")
    if not 0.0 <= holdout < 1.0:
        raise ParameterError("holdout must lie in [0, 1)")
    q = graph.params.q
    centers = rng.choice(graph.n, size=m, replace=False)
    tallies: dict = {}
    nontree = 0
    classified = 0
    n_eval = int(m * holdout)
    n_fit = m - n_eval
    eval_samples = []
    for k, v in enumerate(centers):
        samp = extract_neighborhood(graph, int(v), ell)
        if not samp.is_tree:
            nontree += 1
            if not include_nontree:
                continue
        key = bfs_tree_code(samp)
        if k >= n_fit:
            eval_samples.append((key, samp.center_spin))
            continue
        if key not in tallies:
            tallies[key] = np.zeros(q, dtype=np.int64)
        tallies[key][samp.center_spin - 1] += 1
        classified += 1
    correct = sum(int(counts.max()) for counts in tallies.values())
    holdout_success = holdout_unseen = None
    if n_eval:
        hits = unseen = 0
        for key, spin in eval_samples:
            counts = tallies.get(key)
            if counts is None:
                unseen += 1
                pred = 1
            else:
                pred = int(counts.argmax()) + 1
            hits += pred == spin
        denom = max(len(eval_samples), 1)
        holdout_success = hits / denom
        holdout_unseen = unseen / denom
    return PartitionMapReport(
        n=graph.n, m=m, ell=ell,
        success=correct / n_fit,
        success_classified=correct / classified if classified else 0.0,
        classified=classified,
        nontree_fraction=nontree / m,
        n_classes=len(tallies),
        include_nontree=include_nontree,
        holdout_success=holdout_success,
        holdout_unseen=holdout_unseen,
        holdout_m=len(eval_samples),
        tallies=tuple(
            PartitionClassTally(key=key, counts=counts)
            for key, counts in sorted(tallies.items())
        ) if return_tallies else (),
    )


def overlap_statistic(graph: SbmGraph, estimate) -> tuple[float, tuple]:
    """max over state permutations of the agreement fraction with the truth."""
    q = graph.params.q
    if q > OVERLAP_FACTORIAL_GUARD:
        raise ParameterError(f"overlap maximization capped at q <= {OVERLAP_FACTORIAL_GUARD}")
    estimate = np.asarray(estimate, dtype=np.int64)
    if estimate.shape != (graph.n,):
        raise ParameterError("estimate must assign a state to every vertex")
    if estimate.min() < 1 or estimate.max() > q:
        raise ParameterError(f"estimated states must lie in 1..{q}")
    conf = np.bincount((graph.labels - 1) * q + (estimate - 1), minlength=q * q).reshape(q, q)
    best, best_perm = -1.0, None
    for perm in itertools.permutations(range(q)):
        agree = sum(conf[s, perm[s]] for s in range(q))
        if agree > best:
            best, best_perm = agree, perm
    return best / graph.n, tuple(p + 1 for p in best_perm)


def two_point_estimate(
    graph: SbmGraph, u: int, v: int, ell: int
) -> tuple[np.ndarray, bool]:
    """Local estimate of P(sigma_u = . | tree ball evidence, sigma_v = 1).

    Exact on tree neighborhoods containing v (clamp v, marginalize the rest);
    otherwise returns the uniform vector with an out-of-range flag.  This is
    a local-evidence surrogate, not the full-graph conditional.
    """
    if u == v:
        raise ParameterError("two-point estimate needs distinct vertices")
    q = graph.params.q
    samp = extract_neighborhood(graph, u, ell)
    uniform = np.full(q, 1.0 / q)
    pos = np.flatnonzero(samp.vertices == v)
    if pos.size == 0 or not samp.is_tree:
        return uniform, False
    observed = np.zeros(samp.tree.n_vertices, dtype=np.int64)
    observed[int(pos[0])] = 1
    return _message_pass(samp.tree, graph.params, observed), True


# ---------------------------------------------------------------------------
# edge-list serialization


def write_edge_list(graph: SbmGraph, path: str) -> None:
    """Header "n q a b seed", one "u v" line per edge, then the label block."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{graph.n} {graph.params.q} {graph.params.a:.17g} "
                 f"{graph.params.b:.17g} {graph.seed}\n")
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")
        fh.write("labels\n")
        for lab in graph.labels:
            fh.write(f"{lab}\n")


def read_edge_list(path: str) -> SbmGraph:
    with open(path) as fh:
        header = fh.readline().split()
        n, q = int(header[0]), int(header[1])
        a, b, seed = float(header[2]), float(header[3]), int(header[4])
        edges = []
        for line in fh:
            if line.strip() == "labels":
                break
            uu, vv = line.split()
            edges.append((int(uu), int(vv)))
        labels = np.array([int(line) for line in fh], dtype=np.int64)
    if labels.size != n:
        raise ParameterError("label block does not match the vertex count")
    params = ModelParams.from_ab(q, a, b)
    edges_arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return SbmGraph(n=n, params=params, labels=labels, edges=edges_arr, seed=seed)
