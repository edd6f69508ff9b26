"""Random and structured trees and laws for test corpora and demos."""
from __future__ import annotations

import numpy as np

from .measures import LeafDistribution
from .tree import LengthFunction, Tree


def random_tree(
    rng: np.random.Generator,
    max_nodes: int = 200,
    max_degree: int = 4,
    leaf_prob: float = 0.3,
    allow_unary: bool = False,
) -> Tree:
    """Grow a tree level by level until ``max_nodes`` is reached or all nodes stop.

    Degrees are drawn per level in one shot; the last level is trimmed so the
    node count never exceeds ``max_nodes``.  The root always branches.
    """
    lo = 1 if allow_unary else 2
    if max_nodes < 1 + lo:
        return Tree.from_degrees([0])
    degrees = [np.array([rng.integers(lo, max_degree + 1)])]
    total = 1 + int(degrees[0][0])
    frontier = int(degrees[0][0])
    while frontier:
        d = rng.integers(lo, max_degree + 1, size=frontier)
        d[rng.random(frontier) < leaf_prob] = 0
        room = max_nodes - total
        # keep a prefix of the level that fits, drop to leaves after it
        fits = np.cumsum(d) <= room
        d = np.where(fits, d, 0)
        degrees.append(d)
        total += int(d.sum())
        frontier = int(d.sum())
    return Tree.from_degrees(np.concatenate(degrees), allow_unary=allow_unary)


def random_leaf_law(rng: np.random.Generator, tree: Tree, zero_prob: float = 0.0,
                    concentration: float = 1.0) -> LeafDistribution:
    """Dirichlet leaf masses; each leaf is zeroed with ``zero_prob`` (one always survives)."""
    k = tree.leaves.size
    w = rng.gamma(concentration, size=k)
    if zero_prob > 0:
        dead = rng.random(k) < zero_prob
        if dead.all():
            dead[rng.integers(k)] = False
        w[dead] = 0.0
    w /= w.sum()
    return LeafDistribution.from_leaf_masses(tree, w)


def random_lengths(rng: np.random.Generator, tree: Tree, lo: float = 0.2, hi: float = 3.0) -> LengthFunction:
    vals = np.full(tree.n_nodes, np.nan)
    vals[tree.interior] = rng.uniform(lo, hi, size=tree.interior.size)
    return LengthFunction.validated(tree, "table", vals)


def random_prob_vector(rng: np.random.Generator, size: int, zero_prob: float = 0.0) -> np.ndarray:
    w = rng.exponential(size=size)
    if zero_prob > 0:
        dead = rng.random(size) < zero_prob
        if dead.all():
            dead[rng.integers(size)] = False
        w[dead] = 0.0
    return w / w.sum()


def star(n_leaves: int) -> Tree:
    return Tree.from_degrees([n_leaves] + [0] * n_leaves)


def complete(degree: int, height: int, **kw) -> Tree:
    degrees = []
    for k in range(height):
        degrees += [degree] * degree**k
    degrees += [0] * degree**height
    return Tree.from_degrees(degrees, **kw)
