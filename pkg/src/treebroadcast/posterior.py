"""Exact root posteriors, brute-force oracle, and Monte-Carlo magnetization.

The bottom-up pass implements, per internal vertex,
    message(i)  propto  prod_children (1 + lambda*q*(child_message(i) - 1/q)),
with depth-bound vertices carrying indicator messages of their observed spin
and vertices owning no observed descendant carrying the uniform vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ModelParams, ParameterError, channel_matrix
from .gwtree import OffspringDist, RootedTree, broadcast, sample_tree

BRUTE_FORCE_TERM_GUARD = 10_000_000
STAR_ENUM_LOG2_GUARD = 20.0
_RESCALE_FLOOR = 1e-150


class EnumerationLimitError(ValueError):
    """Requested exhaustive enumeration exceeds the size guard."""


def _boundary_messages(tree: RootedTree, boundary, q: int) -> np.ndarray:
    """Per-vertex observed-spin table: 0 = unobserved, else the spin."""
    observed = np.zeros(tree.n_vertices, dtype=np.int64)
    bverts = tree.boundary
    boundary = np.asarray(boundary, dtype=np.int64)
    if boundary.shape[-1] != bverts.size:
        raise ParameterError(
            f"boundary covers {boundary.shape[-1]} spins, expected {bverts.size}"
        )
    if boundary.size and (boundary.min() < 1 or boundary.max() > q):
        raise ParameterError(f"boundary spins must lie in 1..{q}")
    observed[bverts] = boundary
    return observed


def _message_pass(tree: RootedTree, params: ModelParams, observed: np.ndarray) -> np.ndarray:
    """Single bottom-up pass; observed[v] in {0,..,q}, 0 meaning unobserved.

    An observed vertex contributes its indicator; evidence above the root is
    not supported.  Returns the root's normalized posterior vector.
    """
    q, lam = params.q, params.lam
    lamq = lam * q
    n = tree.n_vertices
    msg = np.empty((n, q))
    children = tree.children_lists()
    for v in range(n - 1, -1, -1):
        kids = children[v]
        if observed[v]:
            vec = np.zeros(q)
            vec[observed[v] - 1] = 1.0
        elif kids.size == 0:
            vec = np.full(q, 1.0 / q)
        else:
            vec = np.ones(q)
            for c in kids:
                vec = vec * (1.0 + lamq * (msg[c] - 1.0 / q))
                peak = vec.max()
                if peak < _RESCALE_FLOOR:
                    if peak <= 0.0:
                        vec = np.full(q, 1.0 / q)  # contradictory (prob-0) evidence
                        break
                    vec /= peak
            tot = vec.sum()
            vec = vec / tot if tot > 0 else np.full(q, 1.0 / q)
        msg[v] = vec
    root = msg[0]
    return root / root.sum()


def posterior_root(tree: RootedTree, params: ModelParams, boundary) -> np.ndarray:
    """Exact posterior of the root spin given the depth-bound boundary spins."""
    observed = _boundary_messages(tree, boundary, params.q)
    return _message_pass(tree, params, observed)


def posterior_root_batch(tree: RootedTree, params: ModelParams, boundaries) -> np.ndarray:
    """posterior_root for a (m, B) batch of boundary assignments at once."""
    q, lam = params.q, params.lam
    lamq = lam * q
    boundaries = np.atleast_2d(np.asarray(boundaries, dtype=np.int64))
    bverts = tree.boundary
    if boundaries.shape[1] != bverts.size:
        raise ParameterError("boundary batch width does not match the boundary size")
    m = boundaries.shape[0]
    children = tree.children_lists()
    msg = {}
    col = {int(v): k for k, v in enumerate(bverts)}
    for v in range(tree.n_vertices - 1, -1, -1):
        if v in col:
            vec = np.zeros((m, q))
            vec[np.arange(m), boundaries[:, col[v]] - 1] = 1.0
        elif children[v].size == 0:
            vec = np.full((m, q), 1.0 / q)
        else:
            vec = np.ones((m, q))
            for c in children[v]:
                vec = vec * (1.0 + lamq * (msg.pop(c) - 1.0 / q))
                peak = vec.max(axis=1, keepdims=True)
                low = peak[:, 0] < _RESCALE_FLOOR
                if low.any():
                    pos = low & (peak[:, 0] > 0)
                    vec[pos] /= peak[pos]
                    vec[low & ~pos] = 1.0 / q
            tot = vec.sum(axis=1, keepdims=True)
            dead = tot[:, 0] <= 0
            vec = np.where(dead[:, None], 1.0 / q, vec / np.where(dead[:, None], 1.0, tot))
        msg[v] = vec
    root = msg[0]
    return root / root.sum(axis=1, keepdims=True)


def brute_force_posterior(tree: RootedTree, params: ModelParams, boundary) -> np.ndarray:
    """Oracle: sum the full broadcast likelihood over all free spin assignments."""
    q = params.q
    observed = _boundary_messages(tree, boundary, q)
    free = np.flatnonzero(observed == 0)
    if free.size and q ** free.size > BRUTE_FORCE_TERM_GUARD:
        raise EnumerationLimitError(
            f"{q}^{free.size} enumeration terms exceed the {BRUTE_FORCE_TERM_GUARD} guard"
        )
    mat = channel_matrix(params)
    n = tree.n_vertices
    nconf = q ** free.size
    spins = np.tile(observed, (nconf, 1))
    if free.size:
        grid = np.indices((q,) * free.size).reshape(free.size, -1).T + 1
        spins[:, free] = grid
    like = np.ones(nconf)
    for v in range(1, n):
        like *= mat[spins[:, tree.parent[v]] - 1, spins[:, v] - 1]
    post = np.zeros(q)
    if observed[0] == 0:
        for i in range(q):
            post[i] = like[spins[:, 0] == i + 1].sum()
    else:
        post[observed[0] - 1] = like.sum()
    tot = post.sum()
    if tot <= 0:
        return np.full(q, 1.0 / q)
    return post / tot


def brute_force_posterior_all_boundaries(
    tree: RootedTree, params: ModelParams
) -> np.ndarray:
    """Oracle posteriors for every boundary assignment at once.

    Returns an array of shape (q**B, q) indexed by the boundary's mixed-radix
    code sum_k (spin_k - 1) * q**k over boundary vertices in tree order.
    Impossible (probability-zero) boundaries get the uniform vector.
    """
    q = params.q
    bverts = tree.boundary
    n = tree.n_vertices
    if q**n > BRUTE_FORCE_TERM_GUARD:
        raise EnumerationLimitError("full configuration enumeration exceeds the guard")
    mat = channel_matrix(params)
    spins = np.indices((q,) * n).reshape(n, -1).T + 1
    like = np.ones(spins.shape[0])
    for v in range(1, n):
        like *= mat[spins[:, tree.parent[v]] - 1, spins[:, v] - 1]
    code = np.zeros(spins.shape[0], dtype=np.int64)
    for k, v in enumerate(bverts):
        code += (spins[:, v] - 1) * q**k
    acc = np.zeros((q ** bverts.size, q))
    np.add.at(acc, (code, spins[:, 0] - 1), like)
    tot = acc.sum(axis=1, keepdims=True)
    dead = tot[:, 0] <= 0
    return np.where(dead[:, None], 1.0 / q, acc / np.where(dead[:, None], 1.0, tot))


def _compositions(total: int, parts: int):
    """All nonnegative integer vectors of given length summing to total."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


@dataclass(frozen=True)
class StarExact:
    """Exact magnetization functionals of a depth-1 star with g leaves."""

    x: float
    z: float
    u: float
    v: float
    w: float


def star_exact(params: ModelParams, gamma: int) -> StarExact:
    """Exact x1, z1, u1, v1, w1 for the star by counting boundary multisets.

    The posterior given leaf spins depends only on the per-state leaf counts,
    so the sum over q**gamma boundaries collapses to count vectors.
    """
    q, lam = params.q, params.lam
    if gamma * math.log2(q) > STAR_ENUM_LOG2_GUARD:
        raise EnumerationLimitError("star enumeration guard exceeded")
    if gamma == 0:
        return StarExact(x=0.0, z=0.0, u=0.0, v=0.0, w=0.0)
    mat = channel_matrix(params)
    hi = 1.0 + lam * (q - 1)  # factor for a leaf matching the state
    lo = 1.0 - lam
    x = z = v = w = 0.0
    logfact = [math.lgamma(k + 1) for k in range(gamma + 1)]
    for counts in _compositions(gamma, q):
        logmult = logfact[gamma] - sum(logfact[c] for c in counts)
        p = math.exp(
            logmult + sum(c * math.log(mat[0, i]) for i, c in enumerate(counts) if c)
        )
        zvec = np.array([hi ** counts[i] * lo ** (gamma - counts[i]) for i in range(q)])
        mvec = zvec / zvec.sum()
        xp, xm = mvec[0] - 1.0 / q, mvec[1] - 1.0 / q
        x += p * xp
        z += p * xp * xp
        v += p * xp**3
        w += p * xp * xm * (xp - xm)
    return StarExact(x=x, z=z, u=z - x / q, v=v, w=w)


@dataclass(frozen=True)
class MagnetizationStats:
    """Monte-Carlo estimates of x_n, z_n, u_n, v_n, w_n with standard errors."""

    n: int
    x: float
    x_se: float
    z: float
    z_se: float
    u: float
    u_se: float
    v: float
    v_se: float
    w: float
    w_se: float
    samples: int


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    m = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return m, se


def _stats_from_messages(
    n: int, msgs: np.ndarray, root_spins: np.ndarray, q: int, mode: str, xminus: str
) -> MagnetizationStats:
    """Reduce per-sample root messages (msgs[k] under root spin root_spins[k])."""
    rows = np.arange(msgs.shape[0])
    xplus = msgs[rows, root_spins - 1]
    if xminus == "state2":
        # the paper-literal state 2, transposed through (1, root) when needed
        other = np.where(root_spins == 2, 1, 2)
        xm = msgs[rows, other - 1]
    elif xminus == "averaged":
        xm = (msgs.sum(axis=1) - xplus) / (q - 1)
    else:
        raise ParameterError(f"unknown xminus option {xminus!r}")
    cp = xplus - 1.0 / q
    cm = xm - 1.0 / q
    if mode == "linear":
        x_samples = cp
    elif mode == "quadratic":
        x_samples = ((msgs - 1.0 / q) ** 2).sum(axis=1)
    else:
        raise ParameterError(f"unknown estimator mode {mode!r}")
    x, x_se = _mean_se(x_samples)
    z, z_se = _mean_se(cp**2)
    u, u_se = _mean_se(cp**2 - x_samples / q)
    v, v_se = _mean_se(cp**3)
    w, w_se = _mean_se(cp * cm * (cp - cm))
    return MagnetizationStats(
        n=n, x=x, x_se=x_se, z=z, z_se=z_se, u=u, u_se=u_se,
        v=v, v_se=v_se, w=w, w_se=w_se, samples=msgs.shape[0],
    )


def _estimate_by_trees(
    dist: OffspringDist,
    params: ModelParams,
    n: int,
    samples: int,
    rng: np.random.Generator,
    mode: str,
    xminus: str,
) -> MagnetizationStats:
    q = params.q
    msgs = np.empty((samples, q))
    roots = np.empty(samples, dtype=np.int64)
    for k in range(samples):
        tree = sample_tree(dist, n, rng)
        root = int(rng.integers(1, q + 1)) if mode == "quadratic" else 1
        spins = broadcast(tree, params, root, rng)
        observed = np.zeros(tree.n_vertices, dtype=np.int64)
        bverts = tree.boundary
        observed[bverts] = spins.spins[bverts]
        msgs[k] = _message_pass(tree, params, observed)
        roots[k] = root
    return _stats_from_messages(n, msgs, roots, q, mode, xminus)


def _population_levels(
    dist: OffspringDist,
    params: ModelParams,
    n: int,
    pool_size: int,
    rng: np.random.Generator,
    batch: int = 20_000,
):
    """Yield (level, conditioned_messages) for level = 1..n.

    Messages at each level are the root posterior conditioned on root spin 1.
    The working pool holds unconditioned samples (a uniformly permuted copy of
    the conditioned ones); conditional child draws use the Bayes weights
    P(spin s | message m) = m(s), which keeps the coordinate symmetry exact
    and the recursion stable for d|lambda| > 1.
    """
    q, lam = params.q, params.lam
    lamq = lam * q
    row = np.full(q, (1.0 - lam) / q)
    row[0] += lam
    cumrow = np.cumsum(row)
    pool = np.zeros((pool_size, q))
    pool[np.arange(pool_size), rng.integers(0, q, pool_size)] = 1.0
    for level in range(1, n + 1):
        colcum = np.cumsum(pool, axis=0)
        totw = colcum[-1]
        cond = np.empty((pool_size, q))
        for start in range(0, pool_size, batch):
            b = min(batch, pool_size - start)
            gammas = dist.sample(rng, b)
            tot = int(gammas.sum())
            if tot == 0:
                cond[start : start + b] = 1.0 / q
                continue
            seg = np.repeat(np.arange(b), gammas)
            spins = np.searchsorted(cumrow, rng.random(tot), side="right")
            spins = np.minimum(spins, q - 1)
            yvals = np.empty((tot, q))
            for s in range(q):
                sel = np.flatnonzero(spins == s)
                if sel.size == 0:
                    continue
                draws = rng.random(sel.size) * totw[s]
                idx = np.searchsorted(colcum[:, s], draws, side="right")
                yvals[sel] = pool[np.minimum(idx, pool_size - 1)]
            logf = np.log(np.maximum(1.0 + lamq * (yvals - 1.0 / q), 0.0))
            acc = np.zeros((b, q))
            for i in range(q):
                acc[:, i] = np.bincount(seg, weights=logf[:, i], minlength=b)
            acc -= acc.max(axis=1, keepdims=True)
            m = np.exp(acc)
            m /= m.sum(axis=1, keepdims=True)
            cond[start : start + b] = m
        yield level, cond
        if level < n:
            perm = rng.permuted(np.tile(np.arange(q), (pool_size, 1)), axis=1)
            pool = np.take_along_axis(cond, perm, axis=1)


def _estimate_by_population(
    dist: OffspringDist,
    params: ModelParams,
    n: int,
    samples: int,
    rng: np.random.Generator,
    mode: str,
    xminus: str,
) -> MagnetizationStats:
    q = params.q
    final = None
    for level, cond in _population_levels(dist, params, n, samples, rng):
        if level == n:
            final = cond
    roots = np.ones(samples, dtype=np.int64)  # conditioned on root spin 1
    return _stats_from_messages(n, final, roots, q, mode, xminus)


POPULATION_CUTOVER = 20_000.0  # expected tree size above which pooling takes over


def estimate_magnetization(
    dist: OffspringDist,
    params: ModelParams,
    n: int,
    samples: int,
    rng: np.random.Generator,
    estimator_mode: str = "quadratic",
    xminus: str = "state2",
    method: str = "auto",
) -> MagnetizationStats:
    """Monte-Carlo estimate of the depth-n magnetization statistics.

    method "tree" draws an explicit Galton-Watson tree and a broadcast per
    sample; "population" runs the (symmetrized) distributional recursion on a
    sample pool, which is the only tractable route when d**n is large.  "auto"
    switches on the expected tree size.
    """
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    if estimator_mode not in ("quadratic", "linear"):
        raise ParameterError(f"unknown estimator mode {estimator_mode!r}")
    if n == 0:
        # X+(0) is the indicator of the observed root: x0 = (q-1)/q exactly.
        q = params.q
        x0 = (q - 1.0) / q
        return MagnetizationStats(
            n=0, x=x0, x_se=0.0, z=x0**2, z_se=0.0, u=x0**2 - x0 / q, u_se=0.0,
            v=x0**3, v_se=0.0, w=-x0 / q, w_se=0.0, samples=samples,
        )
    if method == "auto":
        expected = dist.mean**n
        method = "tree" if expected <= POPULATION_CUTOVER else "population"
    if method == "tree":
        return _estimate_by_trees(dist, params, n, samples, rng, estimator_mode, xminus)
    if method == "population":
        return _estimate_by_population(dist, params, n, samples, rng, estimator_mode, xminus)
    raise ParameterError(f"unknown method {method!r}")


def magnetization_trajectory(
    dist: OffspringDist,
    params: ModelParams,
    n_max: int,
    samples: int,
    rng: np.random.Generator,
    estimator_mode: str = "quadratic",
    xminus: str = "state2",
    method: str = "auto",
) -> list[MagnetizationStats]:
    """estimate_magnetization for n = 0..n_max with independent samples per level."""
    if n_max < 0:
        raise ParameterError("n_max must be >= 0")
    return [
        estimate_magnetization(
            dist, params, n, samples, rng,
            estimator_mode=estimator_mode, xminus=xminus, method=method,
        )
        for n in range(n_max + 1)
    ]
