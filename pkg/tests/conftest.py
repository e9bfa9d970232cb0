import itertools
from functools import lru_cache

import numpy as np
import pytest

from treebroadcast.gwtree import RootedTree


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def _partitions(total, cap=None):
    """Non-increasing integer partitions of total."""
    cap = cap or total
    if total == 0:
        yield ()
        return
    for head in range(min(total, cap), 0, -1):
        for rest in _partitions(total - head, head):
            yield (head,) + rest


@lru_cache(maxsize=None)
def rooted_tree_shapes(n):
    """All non-isomorphic rooted trees on n vertices as canonical nested tuples."""
    if n == 1:
        return ((),)
    out = set()
    for sizes in _partitions(n - 1):
        groups = [(sz, len(list(g))) for sz, g in itertools.groupby(sizes)]
        pools = [
            list(itertools.combinations_with_replacement(rooted_tree_shapes(sz), mult))
            for sz, mult in groups
        ]
        for combo in itertools.product(*pools):
            kids = tuple(sorted(t for grp in combo for t in grp))
            out.add(kids)
    return tuple(sorted(out))


def shape_to_tree(shape) -> RootedTree:
    """Nested-tuple shape -> RootedTree (BFS order)."""
    parent = [-1]
    queue = [(0, shape)]
    while queue:
        nxt = []
        for par, kids in queue:
            for kid in kids:
                parent.append(par)
                nxt.append((len(parent) - 1, kid))
        queue = nxt
    return RootedTree.from_parents(np.asarray(parent, dtype=np.int64))


def all_trees_up_to(nmax):
    for n in range(1, nmax + 1):
        for shape in rooted_tree_shapes(n):
            yield shape_to_tree(shape)
