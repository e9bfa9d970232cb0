"""Offspring distributions, Galton-Watson sampling, broadcast, canonical codes.

Trees are stored flat: BFS-ordered vertex arrays (parent, depth) so that each
depth level occupies a contiguous index range.  Vertex 0 is the root.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ModelParams, ParameterError

CUSTOM_PMF_MAX_SUPPORT = 10_000


class OffspringDist:
    """Offspring law with exact factorial moments m2 = E[X(X-1)], m3 = E[X(X-1)(X-2)]."""

    mean: float
    m2: float
    m3: float

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Poisson(OffspringDist):
    mean: float

    def __post_init__(self):
        if self.mean <= 0:
            raise ParameterError(f"Poisson mean must be positive, got {self.mean!r}")

    @property
    def m2(self) -> float:
        return self.mean**2

    @property
    def m3(self) -> float:
        return self.mean**3

    def sample(self, rng, size):
        # numpy uses inversion for small means, transformed rejection (PTRS)
        # for large means; deterministic for a fixed Generator state.
        return rng.poisson(self.mean, size)


@dataclass(frozen=True)
class Regular(OffspringDist):
    degree: int

    def __post_init__(self):
        if not isinstance(self.degree, (int, np.integer)) or self.degree < 0:
            raise ParameterError(f"Regular degree must be an integer >= 0, got {self.degree!r}")

    @property
    def mean(self) -> float:
        return float(self.degree)

    @property
    def m2(self) -> float:
        return float(self.degree * (self.degree - 1))

    @property
    def m3(self) -> float:
        return float(self.degree * (self.degree - 1) * (self.degree - 2))

    def sample(self, rng, size):
        return np.full(size, self.degree, dtype=np.int64)


@dataclass(frozen=True)
class CustomPmf(OffspringDist):
    """Finite pmf over {0, ..., K}; probabilities must sum to 1 within 1e-12."""

    probs: tuple

    def __init__(self, probs):
        arr = np.asarray(probs, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ParameterError("CustomPmf needs a 1-d probability vector")
        if arr.size > CUSTOM_PMF_MAX_SUPPORT + 1:
            raise ParameterError(
                f"CustomPmf support capped at {CUSTOM_PMF_MAX_SUPPORT}, got {arr.size - 1}"
            )
        if np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-12:
            raise ParameterError("CustomPmf entries must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", tuple(float(p) for p in arr))

    @property
    def _support(self) -> np.ndarray:
        return np.arange(len(self.probs), dtype=float)

    @property
    def mean(self) -> float:
        return float(np.dot(self._support, self.probs))

    @property
    def m2(self) -> float:
        k = self._support
        return float(np.dot(k * (k - 1), self.probs))

    @property
    def m3(self) -> float:
        k = self._support
        return float(np.dot(k * (k - 1) * (k - 2), self.probs))

    def sample(self, rng, size):
        cum = np.cumsum(self.probs)
        return np.searchsorted(cum, rng.random(size), side="right").astype(np.int64)


@dataclass
class RootedTree:
    """Finite rooted tree in BFS order with a depth bound.

    parent[0] == -1; depth[v] counts edges from the root; vertices of equal
    depth are contiguous, delimited by level_offsets (length depth_bound+2).
    """

    parent: np.ndarray
    depth: np.ndarray
    depth_bound: int
    level_offsets: np.ndarray
    _children: list | None = field(default=None, repr=False)

    @classmethod
    def from_parents(cls, parent, depth_bound: int | None = None) -> "RootedTree":
        parent = np.asarray(parent, dtype=np.int64)
        n = parent.size
        if n == 0 or parent[0] != -1:
            raise ParameterError("vertex 0 must be the root (parent -1)")
        depth = np.zeros(n, dtype=np.int64)
        for v in range(1, n):
            p = parent[v]
            if not 0 <= p < v:
                raise ParameterError("parents must precede children (BFS order)")
            depth[v] = depth[p] + 1
        if np.any(np.diff(depth) < 0):
            raise ParameterError("vertices must be sorted by depth (BFS order)")
        maxd = int(depth.max())
        if depth_bound is None:
            depth_bound = maxd
        if depth_bound < maxd:
            raise ParameterError("depth bound below the deepest vertex")
        offs = np.zeros(depth_bound + 2, dtype=np.int64)
        for lev in range(depth_bound + 1):
            offs[lev + 1] = offs[lev] + int(np.count_nonzero(depth == lev))
        return cls(parent=parent, depth=depth, depth_bound=depth_bound, level_offsets=offs)

    @property
    def n_vertices(self) -> int:
        return int(self.parent.size)

    @property
    def root_degree(self) -> int:
        return int(np.count_nonzero(self.parent == 0))

    def level(self, k: int) -> np.ndarray:
        """Vertex indices at depth k (empty beyond the realized depth)."""
        if k < 0 or k > self.depth_bound:
            return np.empty(0, dtype=np.int64)
        return np.arange(self.level_offsets[k], self.level_offsets[k + 1])

    @property
    def boundary(self) -> np.ndarray:
        """Vertices at the depth bound (possibly empty if the tree died out)."""
        return self.level(self.depth_bound)

    def children(self, v: int) -> np.ndarray:
        return self.children_lists()[v]

    def children_lists(self) -> list:
        if self._children is None:
            order = np.argsort(self.parent[1:], kind="stable") + 1
            sorted_parents = self.parent[order]
            lists = [np.empty(0, dtype=np.int64) for _ in range(self.n_vertices)]
            if order.size:
                starts = np.searchsorted(sorted_parents, np.arange(self.n_vertices))
                ends = np.searchsorted(sorted_parents, np.arange(self.n_vertices), side="right")
                for v in range(self.n_vertices):
                    if ends[v] > starts[v]:
                        lists[v] = order[starts[v] : ends[v]]
            self._children = lists
        return self._children


@dataclass(frozen=True)
class SpinConfig:
    """One spin in {1, ..., q} per tree vertex."""

    spins: np.ndarray
    q: int

    def __post_init__(self):
        s = np.asarray(self.spins)
        if s.ndim != 1 or np.any(s < 1) or np.any(s > self.q):
            raise ParameterError("spins must be a 1-d array with values in 1..q")
        object.__setattr__(self, "spins", s.astype(np.int64))

    def __len__(self):
        return int(self.spins.size)


def sample_tree(dist: OffspringDist, depth: int, rng: np.random.Generator) -> RootedTree:
    """Level-by-level Galton-Watson generation stopped at the given depth."""
    if depth < 0:
        raise ParameterError(f"depth must be >= 0, got {depth}")
    parents = [np.array([-1], dtype=np.int64)]
    offs = [0, 1]
    level_start, level_size = 0, 1
    for _ in range(depth):
        if level_size == 0:
            offs.append(offs[-1])
            continue
        counts = dist.sample(rng, level_size)
        total = int(counts.sum())
        parents.append(np.repeat(np.arange(level_start, level_start + level_size), counts))
        level_start = offs[-1]
        level_size = total
        offs.append(offs[-1] + total)
    parent = np.concatenate(parents) if len(parents) > 1 else parents[0]
    n = parent.size
    depth_arr = np.zeros(n, dtype=np.int64)
    for lev in range(1, depth + 1):
        depth_arr[offs[lev] : offs[lev + 1]] = lev
    return RootedTree(
        parent=parent,
        depth=depth_arr,
        depth_bound=depth,
        level_offsets=np.asarray(offs, dtype=np.int64),
    )


def broadcast(
    tree: RootedTree,
    params: ModelParams,
    root_spin: int | None,
    rng: np.random.Generator,
) -> SpinConfig:
    """Propagate a root spin down the tree through the symmetric channel.

    root_spin None draws the root uniformly.  Each child copies its parent
    with probability lambda + (1-lambda)/q and otherwise takes one of the
    q-1 remaining states with probability (1-lambda)/q each.
    """
    q, lam = params.q, params.lam
    spins = np.empty(tree.n_vertices, dtype=np.int64)
    if root_spin is None:
        spins[0] = rng.integers(1, q + 1)
    else:
        if not 1 <= root_spin <= q:
            raise ParameterError(f"root spin must lie in 1..{q}")
        spins[0] = root_spin
    same = lam + (1.0 - lam) / q
    other = (1.0 - lam) / q
    for lev in range(1, tree.depth_bound + 1):
        lo, hi = tree.level_offsets[lev], tree.level_offsets[lev + 1]
        if hi == lo:
            break
        pspin = spins[tree.parent[lo:hi]]
        u = rng.random(hi - lo)
        copy = u < same
        # index among the q-1 non-parent states for the rest
        k = np.minimum(((u - same) / other).astype(np.int64), q - 2) if other > 0 else 0
        alt = k + 1 + (k + 1 >= pspin)  # skip over the parent state
        spins[lo:hi] = np.where(copy, pspin, alt)
    return SpinConfig(spins=spins, q=q)


_LEAF = b"()"


def canonical_code(tree: RootedTree, boundary_spins=None) -> bytes:
    """AHU canonical form; equal codes iff rooted-isomorphic trees.

    When boundary_spins is given (one spin per vertex at the depth bound, in
    tree index order) those leaves carry their spin label, so equal codes mean
    isomorphic trees with matching boundary configurations.
    """
    boundary = tree.boundary
    if boundary_spins is not None:
        boundary_spins = np.asarray(boundary_spins, dtype=np.int64)
        if boundary_spins.size != boundary.size:
            raise ParameterError(
                f"boundary_spins length {boundary_spins.size} != boundary size {boundary.size}"
            )
    codes: list = [None] * tree.n_vertices
    children = tree.children_lists()
    for v in range(tree.n_vertices - 1, -1, -1):
        if boundary_spins is not None and tree.depth[v] == tree.depth_bound:
            k = v - tree.level_offsets[tree.depth_bound]
            codes[v] = b"(s%d)" % boundary_spins[k]
        elif children[v].size == 0:
            codes[v] = _LEAF
        else:
            parts = sorted(codes[c] for c in children[v])
            codes[v] = b"(" + b"".join(parts) + b")"
    return codes[0]


def tree_to_json(tree: RootedTree, spins: SpinConfig | None = None) -> str:
    """Serialize to {"children": [[...]], "spins": [...]} (spins optional)."""
    children = [list(map(int, c)) for c in tree.children_lists()]
    obj = {"children": children}
    if spins is not None:
        if len(spins) != tree.n_vertices:
            raise ParameterError("spin count does not match vertex count")
        obj["spins"] = [int(s) for s in spins.spins]
    return json.dumps(obj)


def tree_from_json(text: str, q: int | None = None, depth_bound: int | None = None):
    """Inverse of tree_to_json; returns (RootedTree, SpinConfig | None)."""
    obj = json.loads(text)
    children = obj["children"]
    n = len(children)
    parent = np.full(n, -1, dtype=np.int64)
    for v, kids in enumerate(children):
        for c in kids:
            if not 0 < c < n or parent[c] != -1:
                raise ParameterError("malformed children lists")
            parent[c] = v
    if np.count_nonzero(parent == -1) != 1:
        raise ParameterError("children lists must define a single root")
    # re-index to BFS order so the flat representation invariants hold
    order = [0]
    pos = 0
    while pos < len(order):
        order.extend(children[order[pos]])
        pos += 1
    if len(order) != n:
        raise ParameterError("children lists are not connected")
    rank = {old: new for new, old in enumerate(order)}
    new_parent = np.full(n, -1, dtype=np.int64)
    for old in order[1:]:
        new_parent[rank[old]] = rank[int(parent[old])]
    tree = RootedTree.from_parents(new_parent, depth_bound=depth_bound)
    spins = None
    if "spins" in obj and obj["spins"] is not None:
        arr = np.asarray(obj["spins"], dtype=np.int64)[order]
        spins = SpinConfig(spins=arr, q=int(q if q is not None else arr.max()))
    return tree, spins
