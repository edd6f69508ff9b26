"""Finite rooted trees stored as a breadth-first arena.

Node ids are dense integers assigned in BFS order, so

* node 0 is the root,
* every level is a contiguous id range,
* the children of a node are a contiguous id range, in the order given at
  construction.

That layout lets all bottom-up and top-down passes run one numpy operation
per level instead of one Python call per node.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import GuardError, NotASectionError, TreeError

DEFAULT_MAX_NODES = 5_000_000

LEVEL_ORDER_MAGIC = "# treerate level-order v1"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Tree:
    """Immutable rooted tree.

    Build one with :meth:`from_edges` (arbitrary hashable labels) or
    :meth:`from_degrees` (forward degrees listed in BFS order).
    """

    def __init__(
        self,
        degrees: Sequence[int] | np.ndarray,
        labels: Sequence[Hashable] | None = None,
        *,
        allow_unary: bool = False,
        max_nodes: int = DEFAULT_MAX_NODES,
    ):
        deg = np.asarray(degrees, dtype=np.int64)
        n = deg.size
        if n == 0:
            raise TreeError("a tree needs at least the root")
        if n > max_nodes:
            raise GuardError(f"tree has {n} nodes, guard is {max_nodes}")
        if (deg < 0).any():
            raise TreeError("negative forward degree")
        if int(deg.sum()) != n - 1:
            raise TreeError(f"degrees sum to {int(deg.sum())}, expected {n - 1}")
        first = np.empty(n, dtype=np.int64)
        first[0] = 1
        np.cumsum(deg[:-1], out=first[1:])
        first[1:] += 1
        bad = np.nonzero((deg > 0) & (first <= np.arange(n)))[0]
        if bad.size:
            raise TreeError(f"degree sequence is not in BFS order (node {int(bad[0])})")
        if labels is None:
            labels = list(range(n))
        elif len(labels) != n:
            raise TreeError("labels and degrees differ in length")
        unary = np.nonzero(deg == 1)[0]
        if unary.size and not allow_unary:
            raise TreeError(
                f"node {labels[int(unary[0])]!r} has exactly one child; "
                "pass allow_unary=True for truncated trees"
            )

        parent = np.empty(n, dtype=np.int64)
        parent[0] = -1
        parent[1:] = np.repeat(np.arange(n, dtype=np.int64), deg)

        bounds = [0, 1]
        while bounds[-1] < n:
            hi = bounds[-1]
            nxt = int(first[hi - 1] + deg[hi - 1])  # 1 + sum(deg[:hi])
            if nxt <= hi:
                raise TreeError("disconnected degree sequence")
            bounds.append(nxt)
        depth = np.empty(n, dtype=np.int64)
        for k in range(len(bounds) - 1):
            depth[bounds[k] : bounds[k + 1]] = k

        self.degree = _frozen(deg)
        self.first_child = _frozen(first)
        self.parent = _frozen(parent)
        self.depth = _frozen(depth)
        self.level_bounds = _frozen(np.asarray(bounds, dtype=np.int64))
        self.labels = list(labels)
        self.allow_unary = allow_unary

    # -- construction ---------------------------------------------------

    @classmethod
    def from_degrees(cls, degrees, **kw) -> "Tree":
        return cls(degrees, **kw)

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[Hashable, Hashable]],
        root: Hashable | None = None,
        **kw,
    ) -> "Tree":
        """Build from ``(parent, child)`` pairs.

        Children keep the order in which their edges appear.  Labels are
        remapped to BFS ids; ``tree.labels[i]`` recovers the original.
        """
        children: dict[Hashable, list[Hashable]] = {}
        parent_of: dict[Hashable, Hashable] = {}
        nodes: dict[Hashable, None] = {}
        for p, c in edges:
            if c in parent_of:
                raise TreeError(f"multiple parents for node {c!r}")
            if p == c:
                raise TreeError(f"cycle detected at node {c!r}")
            parent_of[c] = p
            children.setdefault(p, []).append(c)
            nodes.setdefault(p)
            nodes.setdefault(c)
        if root is None:
            roots = [x for x in nodes if x not in parent_of]
            if not roots:
                raise TreeError("cycle detected: every node has a parent")
            if len(roots) > 1:
                raise TreeError(f"multiple roots: {roots[:5]!r}")
            root = roots[0]
        elif root in parent_of:
            raise TreeError(f"designated root {root!r} has a parent")
        nodes.setdefault(root)

        order = [root]
        queue = deque([root])
        while queue:
            x = queue.popleft()
            for y in children.get(x, ()):
                order.append(y)
                queue.append(y)
        if len(order) != len(nodes):
            seen = set(order)
            stray = next(x for x in nodes if x not in seen)
            raise TreeError(f"cycle detected: node {stray!r} is unreachable from the root")
        degrees = [len(children.get(x, ())) for x in order]
        return cls(degrees, order, **kw)

    # -- basic queries ----------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.degree.size

    @property
    def root(self) -> int:
        return 0

    @property
    def n_levels(self) -> int:
        return self.level_bounds.size - 1

    @property
    def height(self) -> int:
        return self.n_levels - 1

    def level(self, k: int) -> np.ndarray:
        return np.arange(self.level_bounds[k], self.level_bounds[k + 1])

    @cached_property
    def is_leaf(self) -> np.ndarray:
        return _frozen(self.degree == 0)

    @cached_property
    def leaves(self) -> np.ndarray:
        return _frozen(np.nonzero(self.is_leaf)[0])

    @cached_property
    def interior(self) -> np.ndarray:
        return _frozen(np.nonzero(~self.is_leaf)[0])

    @cached_property
    def _index(self) -> dict[str, int]:
        return {str(lab): i for i, lab in enumerate(self.labels)}

    def index(self, label: Hashable) -> int:
        """BFS id of an external label (ints and their string forms both work)."""
        try:
            return self._index[str(label)]
        except KeyError:
            raise TreeError(f"unknown node {label!r}") from None

    def label(self, x: int) -> Hashable:
        return self.labels[x]

    def _check(self, x: int) -> int:
        x = int(x)
        if not 0 <= x < self.n_nodes:
            raise TreeError(f"unknown node id {x}")
        return x

    def children(self, x: int) -> range:
        x = self._check(x)
        f = int(self.first_child[x])
        return range(f, f + int(self.degree[x]))

    def path(self, x: int) -> list[int]:
        """Geodesic from the root to ``x``, root first."""
        x = self._check(x)
        out = [x]
        while x:
            x = int(self.parent[x])
            out.append(x)
        return out[::-1]

    @cached_property
    def max_degree(self) -> int:
        return int(self.degree.max())

    @cached_property
    def _level_parents(self) -> list[np.ndarray]:
        """Interior nodes of level k-1, indexed by k (k >= 1)."""
        out = [np.empty(0, dtype=np.int64)]
        for k in range(1, self.n_levels):
            lo, hi = self.level_bounds[k - 1], self.level_bounds[k]
            ids = np.arange(lo, hi)
            out.append(ids[self.degree[lo:hi] > 0])
        return out

    # -- vectorized passes ------------------------------------------------

    def subtree_sums(self, values: np.ndarray) -> np.ndarray:
        """``out[x] = sum of values over the cone T_x`` (bottom-up)."""
        out = np.array(values, dtype=float, copy=True)
        for k in range(self.n_levels - 1, 0, -1):
            par = self._level_parents[k]
            lo, hi = self.level_bounds[k], self.level_bounds[k + 1]
            out[par] += np.add.reduceat(out[lo:hi], self.first_child[par] - lo)
        return out

    def children_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum of ``values[y]`` over ``y in N(x)``; zero at leaves."""
        out = np.zeros(self.n_nodes)
        if self.n_nodes > 1:
            inner = self.interior
            out[inner] = np.add.reduceat(
                np.asarray(values, dtype=float)[1:], self.first_child[inner] - 1
            )
        return out

    def children_max(self, values: np.ndarray) -> np.ndarray:
        out = np.full(self.n_nodes, -np.inf)
        if self.n_nodes > 1:
            inner = self.interior
            out[inner] = np.maximum.reduceat(
                np.asarray(values, dtype=float)[1:], self.first_child[inner] - 1
            )
        return out

    def root_path_sums(self, edge_values: np.ndarray) -> np.ndarray:
        """``out[x] = sum of edge_values[y] for y on the path o..x, y != o``."""
        ev = np.asarray(edge_values, dtype=float)
        out = np.zeros(self.n_nodes)
        for k in range(1, self.n_levels):
            lo, hi = self.level_bounds[k], self.level_bounds[k + 1]
            out[lo:hi] = out[self.parent[lo:hi]] + ev[lo:hi]
        return out

    def root_path_products(self, edge_values: np.ndarray) -> np.ndarray:
        ev = np.asarray(edge_values, dtype=float)
        out = np.ones(self.n_nodes)
        for k in range(1, self.n_levels):
            lo, hi = self.level_bounds[k], self.level_bounds[k + 1]
            out[lo:hi] = out[self.parent[lo:hi]] * ev[lo:hi]
        return out

    # -- cones and sections ---------------------------------------------

    def cone(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes of T_x and its leaves, both as sorted id arrays."""
        x = self._check(x)
        nodes = [np.array([x])]
        lo = hi = x
        hi += 1
        while True:
            inner = np.arange(lo, hi)
            inner = inner[self.degree[lo:hi] > 0]
            if inner.size == 0:
                break
            lo = int(self.first_child[inner[0]])
            hi = int(self.first_child[inner[-1]] + self.degree[inner[-1]])
            nodes.append(np.arange(lo, hi))
        allnodes = np.concatenate(nodes)
        return allnodes, allnodes[self.is_leaf[allnodes]]

    def level_section(self, n: int) -> "CrossSection":
        """S(n): all nodes at height n plus the leaves above height n."""
        if n < 0:
            raise TreeError("section level must be nonnegative")
        mask = (self.depth == n) | (self.is_leaf & (self.depth < n))
        return validate_cross_section(self, np.nonzero(mask)[0])

    # -- serialization --------------------------------------------------

    def edges(self) -> list[tuple[Hashable, Hashable]]:
        return [(self.labels[int(self.parent[y])], self.labels[y]) for y in range(1, self.n_nodes)]

    def to_level_order(self, lengths: "LengthFunction | None" = None) -> str:
        lines = [LEVEL_ORDER_MAGIC, " ".join(map(str, self.degree.tolist()))]
        if lengths is not None:
            vals = lengths.values[self.interior]
            lines.append("lengths: " + " ".join(repr(float(v)) for v in vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_level_order(cls, text: str, **kw) -> tuple["Tree", "LengthFunction"]:
        rows = [r.strip() for r in text.strip().splitlines()]
        if not rows or rows[0] != LEVEL_ORDER_MAGIC:
            raise TreeError("missing level-order header line")
        degrees = [int(t) for t in rows[1].split()] if len(rows) > 1 else []
        tree = cls(degrees, **kw)
        if len(rows) > 2 and rows[2].startswith("lengths:"):
            vals = np.array([float(t) for t in rows[2][len("lengths:"):].split()])
            if vals.size != tree.interior.size:
                raise TreeError("lengths line does not match the interior node count")
            full = np.full(tree.n_nodes, np.nan)
            full[tree.interior] = vals
            return tree, LengthFunction("table", full)
        return tree, LengthFunction.unit(tree)

    def __repr__(self) -> str:
        return (
            f"Tree(nodes={self.n_nodes}, leaves={self.leaves.size}, height={self.height})"
        )


# -- length functions ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class LengthFunction:
    """Positive edge length per interior node; NaN at leaves.

    Every outgoing edge of ``x`` has length ``values[x]``.
    """

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in ("unit", "table", "entropy-derived"):
            raise TreeError(f"unknown length kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", _frozen(vals.copy()))

    @classmethod
    def unit(cls, tree: Tree) -> "LengthFunction":
        vals = np.where(tree.is_leaf, np.nan, 1.0)
        return cls("unit", vals)

    @classmethod
    def table(cls, tree: Tree, values: Mapping | Sequence[float] | np.ndarray) -> "LengthFunction":
        """From a ``{label: length}`` mapping or a per-node array."""
        full = np.full(tree.n_nodes, np.nan)
        if isinstance(values, Mapping):
            for lab, v in values.items():
                x = tree.index(lab)
                if tree.is_leaf[x]:
                    raise TreeError(f"length given for leaf {lab!r}")
                full[x] = float(v)
        else:
            arr = np.asarray(values, dtype=float)
            if arr.size != tree.n_nodes:
                raise TreeError("length array must have one entry per node")
            full[tree.interior] = arr[tree.interior]
        return cls.validated(tree, "table", full)

    @classmethod
    def validated(cls, tree: Tree, kind: str, full: np.ndarray) -> "LengthFunction":
        inner = full[tree.interior]
        bad = np.nonzero(~(inner > 0) | ~np.isfinite(inner))[0]
        if bad.size:
            x = int(tree.interior[bad[0]])
            raise TreeError(f"length at interior node {tree.labels[x]!r} must be positive, got {full[x]}")
        full = full.copy()
        full[tree.is_leaf] = np.nan
        return cls(kind, full)

    def __call__(self, x: int) -> float:
        v = self.values[int(x)]
        if np.isnan(v):
            raise TreeError(f"length is undefined at leaf {x}")
        return float(v)


def path_lengths(tree: Tree, ell: LengthFunction) -> np.ndarray:
    """|x|_ell for every node at once."""
    edge = np.zeros(tree.n_nodes)
    edge[1:] = ell.values[tree.parent[1:]]
    return tree.root_path_sums(edge)


def path_length(tree: Tree, ell: LengthFunction, x: int) -> float:
    p = tree.path(x)
    return float(sum(ell(y) for y in p[:-1]))


# -- cross sections -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CrossSection:
    tree: Tree
    members: np.ndarray
    in_subtree: np.ndarray  # mask of T^S

    @property
    def subtree_nodes(self) -> np.ndarray:
        return np.nonzero(self.in_subtree)[0]

    @cached_property
    def interior_mask(self) -> np.ndarray:
        """Interior of T^S, i.e. T^S minus S."""
        m = self.in_subtree.copy()
        m[self.members] = False
        return m


def validate_cross_section(tree: Tree, members: Iterable[int]) -> CrossSection:
    ids = np.unique(np.asarray(list(members) if not isinstance(members, np.ndarray) else members, dtype=np.int64))
    if ids.size and (ids[0] < 0 or ids[-1] >= tree.n_nodes):
        raise TreeError("cross section contains an unknown node id")
    hit = np.zeros(tree.n_nodes)
    hit[ids] = 1.0
    # hits along the closed geodesic o..x
    counts = tree.root_path_sums(hit) + hit[0]
    leaf_hits = counts[tree.leaves]
    bad = np.nonzero(leaf_hits != 1)[0]
    if bad.size:
        v = int(tree.leaves[bad[0]])
        raise NotASectionError(tree.labels[v], int(leaf_hits[bad[0]]))
    in_sub = tree.subtree_sums(hit) > 0
    return CrossSection(tree, _frozen(ids), _frozen(in_sub))


# -- JSON ----------------------------------------------------------------


def tree_from_json(obj: Mapping | str, **kw) -> tuple[Tree, LengthFunction]:
    """Parse ``{"root", "edges", "lengths"}``; ``lengths`` is optional."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    unknown = set(obj) - {"root", "edges", "lengths"}
    if unknown:
        raise TreeError(f"unknown tree keys: {sorted(unknown)}")
    edges = [tuple(e) for e in obj.get("edges", [])]
    if any(len(e) != 2 for e in edges):
        raise TreeError("each edge must be a [parent, child] pair")
    tree = Tree.from_edges(edges, root=obj.get("root"), **kw)
    if obj.get("lengths"):
        return tree, LengthFunction.table(tree, obj["lengths"])
    return tree, LengthFunction.unit(tree)


def tree_to_json(tree: Tree, ell: LengthFunction | None = None) -> dict:
    out: dict = {"root": tree.labels[0], "edges": [list(e) for e in tree.edges()]}
    if ell is not None and ell.kind != "unit":
        out["lengths"] = {str(tree.labels[x]): float(ell.values[x]) for x in tree.interior}
    return out
