"""Probability laws on the leaves of a tree.

A law can be given either as leaf masses (:class:`LeafDistribution`) or as
forward transition probabilities (:class:`ForwardKernel`).  Both carry the
same information on nodes of positive mass; conversion goes through cone
masses, which are computed once, bottom-up, and cached.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
from scipy.special import zeta as hurwitz_zeta

from ._sum import fsum
from .errors import NormalizationError, TreeError, TreeRateError
from .tree import CrossSection, LengthFunction, Tree, path_lengths

NORM_TOL = 1e-12


class LeafDistribution:
    """Leaf masses P(v) plus the cone masses P(dT_x) for every node."""

    def __init__(self, tree: Tree, cone: np.ndarray):
        self.tree = tree
        cone = np.asarray(cone, dtype=float)
        cone.setflags(write=False)
        self.cone = cone

    @classmethod
    def from_leaf_masses(cls, tree: Tree, masses) -> "LeafDistribution":
        """``masses``: ``{leaf label: mass}`` or an array aligned with ``tree.leaves``."""
        full = np.zeros(tree.n_nodes)
        if isinstance(masses, Mapping):
            for lab, m in masses.items():
                v = tree.index(lab)
                if not tree.is_leaf[v]:
                    raise TreeError(f"mass assigned to interior node {lab!r}")
                full[v] = float(m)
        else:
            arr = np.asarray(masses, dtype=float)
            if arr.shape != tree.leaves.shape:
                raise TreeError(f"expected {tree.leaves.size} leaf masses, got {arr.size}")
            full[tree.leaves] = arr
        if (full < 0).any() or not np.isfinite(full).all():
            raise NormalizationError("leaf masses must be finite and nonnegative")
        total = fsum(full)
        if abs(total - 1.0) > NORM_TOL:
            raise NormalizationError(f"leaf masses sum to {total!r}")
        return cls(tree, tree.subtree_sums(full))

    @property
    def leaf_mass(self) -> np.ndarray:
        return self.cone[self.tree.leaves]

    def mass(self, label) -> float:
        return float(self.cone[self.tree.index(label)])

    @property
    def support(self) -> np.ndarray:
        return self.cone > 0

    def to_json(self) -> dict:
        t = self.tree
        return {str(t.labels[v]): float(self.cone[v]) for v in t.leaves}


class ForwardKernel:
    """Transition probabilities ``prob[y] = p(y | y^-)`` stored per child.

    ``prob`` is NaN at the root and at children of unsupported rows, i.e.
    rows below a zero-mass cone, where the kernel is not determined.
    """

    def __init__(self, tree: Tree, prob: np.ndarray, *, check: bool = True):
        self.tree = tree
        prob = np.asarray(prob, dtype=float).copy()
        prob[0] = np.nan
        defined = ~np.isnan(prob)
        row_defined = np.zeros(tree.n_nodes, dtype=bool)
        if tree.n_nodes > 1:
            row_defined[tree.interior] = defined[tree.first_child[tree.interior]]
        self.supported = row_defined
        if check:
            vals = prob[1:]
            if (vals[~np.isnan(vals)] < 0).any():
                raise NormalizationError("negative transition probability")
            sums = tree.children_sums(np.nan_to_num(prob))
            off = np.abs(sums - 1.0)
            off[~row_defined] = 0.0
            bad = np.nonzero(off > NORM_TOL)[0]
            if bad.size:
                x = int(bad[0])
                raise NormalizationError(
                    f"row at node {tree.labels[x]!r} sums to {sums[x]!r}"
                )
        prob.setflags(write=False)
        self.prob = prob

    @classmethod
    def from_rows(cls, tree: Tree, rows: Mapping) -> "ForwardKernel":
        """``rows``: ``{node label: {child label: probability}}``."""
        prob = np.full(tree.n_nodes, np.nan)
        for xl, row in rows.items():
            x = tree.index(xl)
            kids = set(tree.children(x))
            for yl, p in row.items():
                y = tree.index(yl)
                if y not in kids:
                    raise TreeError(f"{yl!r} is not a child of {xl!r}")
                prob[y] = float(p)
        # partially given rows: unspecified children of a given row are 0
        for x in tree.interior:
            kids = tree.children(x)
            seg = prob[kids.start : kids.stop]
            if np.isnan(seg).any() and not np.isnan(seg).all():
                seg[np.isnan(seg)] = 0.0
        return cls(tree, prob)

    @classmethod
    def from_node_array(cls, tree: Tree, prob: np.ndarray) -> "ForwardKernel":
        return cls(tree, prob)

    def row(self, x: int) -> np.ndarray:
        kids = self.tree.children(x)
        return np.asarray(self.prob[kids.start : kids.stop])

    @property
    def unsupported(self) -> np.ndarray:
        """Interior nodes whose row is undetermined (zero-mass cones)."""
        t = self.tree
        return t.interior[~self.supported[t.interior]]

    def to_json(self) -> dict:
        t = self.tree
        out = {}
        for x in t.interior:
            if not self.supported[x]:
                continue
            out[str(t.labels[x])] = {
                str(t.labels[y]): float(self.prob[y]) for y in t.children(x)
            }
        return out


def kernel_to_leaf(tree: Tree, kernel: ForwardKernel) -> LeafDistribution:
    """Hitting distribution of the forward chain: products along geodesics."""
    edge = np.nan_to_num(kernel.prob, nan=0.0)
    edge[0] = 1.0
    prod = tree.root_path_products(edge)
    leaf = np.zeros(tree.n_nodes)
    leaf[tree.leaves] = prod[tree.leaves]
    return LeafDistribution(tree, tree.subtree_sums(leaf))


def leaf_to_kernel(tree: Tree, P: LeafDistribution) -> ForwardKernel:
    """``p(y|x) = P(dT_y) / P(dT_x)``; rows under zero-mass cones stay NaN."""
    prob = np.full(tree.n_nodes, np.nan)
    if tree.n_nodes > 1:
        par = P.cone[tree.parent[1:]]
        with np.errstate(invalid="ignore", divide="ignore"):
            prob[1:] = np.where(par > 0, P.cone[1:] / par, np.nan)
    return ForwardKernel(tree, prob, check=False)


def section_distribution(tree: Tree, P: LeafDistribution, S: CrossSection) -> np.ndarray:
    if S.tree is not tree:
        raise TreeError("cross section belongs to another tree")
    return np.asarray(P.cone[S.members])


def expected_length(
    tree: Tree, P: LeafDistribution, ell: LengthFunction, S: CrossSection | None = None
) -> float:
    """ell(P_S) as a sum over the section (boundary by default)."""
    lengths = path_lengths(tree, ell)
    members = tree.leaves if S is None else S.members
    return fsum(lengths[members] * P.cone[members])


def expected_length_interior(
    tree: Tree, P: LeafDistribution, ell: LengthFunction, S: CrossSection | None = None
) -> float:
    """Same quantity as :func:`expected_length`, summed over interior nodes."""
    nodes = tree.interior if S is None else np.nonzero(S.interior_mask)[0]
    return fsum(ell.values[nodes] * P.cone[nodes])


def unit_expected_length(tree: Tree, P: LeafDistribution) -> float:
    """ell_sharp(P): expected height of the hitting leaf."""
    return fsum(tree.depth[tree.leaves] * P.cone[tree.leaves])


@dataclass(frozen=True, eq=False)
class NodeAverageMeasure:
    mass: np.ndarray  # zero at leaves
    normalizer: float


def node_average(tree: Tree, P: LeafDistribution, ell: LengthFunction) -> NodeAverageMeasure:
    lp = expected_length(tree, P, ell)
    if not lp > 0:
        raise TreeRateError("expected length is zero; node-average measure undefined")
    mass = np.zeros(tree.n_nodes)
    inner = tree.interior
    mass[inner] = ell.values[inner] * P.cone[inner] / lp
    mass.setflags(write=False)
    return NodeAverageMeasure(mass, lp)


# -- countable rows ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LazyRow:
    """A probability vector on {1, 2, ...} known through closed forms.

    ``pmf(n)`` is vectorized, ``tail(k) = sum_{n >= k} p(n)`` and
    ``mean_tail(m) = sum_{n >= m} n p(n)`` (``inf`` for infinite mean).
    The same object serves as a kernel row and as a dominating pmf.
    """

    name: str
    pmf: Callable[[np.ndarray], np.ndarray]
    tail: Callable[[int], float]
    mean_tail: Callable[[int], float]
    params: dict = field(default_factory=dict)

    def prefix(self, m: int) -> np.ndarray:
        """p(1), ..., p(m)."""
        return np.asarray(self.pmf(np.arange(1, m + 1, dtype=float)), dtype=float)

    @cached_property
    def finite_mean(self) -> bool:
        return bool(np.isfinite(self.mean_tail(1)))


def geometric_row(r: float) -> LazyRow:
    """p(n) = (1 - r) r^(n-1) for n >= 1."""
    if not 0 < r < 1:
        raise TreeRateError("geometric ratio must lie in (0, 1)")

    def tail(k: int) -> float:
        return 1.0 if k <= 1 else float(r ** (k - 1))

    def mean_tail(m: int) -> float:
        m = max(int(m), 1)
        return float(m * r ** (m - 1) + r**m / (1 - r))

    return LazyRow(
        "geometric",
        lambda n: (1 - r) * np.power(r, np.asarray(n, dtype=float) - 1),
        tail,
        mean_tail,
        {"r": r},
    )


def zeta_row(s: float) -> LazyRow:
    """p(n) = n^(-s) / zeta(s); finite mean only for s > 2."""
    if not s > 1:
        raise TreeRateError("zeta exponent must exceed 1")
    z = float(hurwitz_zeta(s, 1))

    def tail(k: int) -> float:
        return 1.0 if k <= 1 else float(hurwitz_zeta(s, k) / z)

    def mean_tail(m: int) -> float:
        if s <= 2:
            return float("inf")
        return float(hurwitz_zeta(s - 1, max(int(m), 1)) / z)

    return LazyRow(
        "zeta", lambda n: np.power(np.asarray(n, dtype=float), -s) / z, tail, mean_tail, {"s": s}
    )


def finite_row(probs) -> LazyRow:
    """Wrap a finite probability vector as a row on {1, ..., len}."""
    p = np.asarray(probs, dtype=float)
    if abs(fsum(p) - 1.0) > NORM_TOL or (p < 0).any():
        raise NormalizationError("finite row must be a probability vector")
    tails = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
    ntails = np.concatenate([np.cumsum((np.arange(1, p.size + 1) * p)[::-1])[::-1], [0.0]])

    def pmf(n):
        n = np.asarray(n, dtype=np.int64)
        out = np.zeros(n.shape)
        ok = (n >= 1) & (n <= p.size)
        out[ok] = p[n[ok] - 1]
        return out

    def tail(k: int) -> float:
        return 1.0 if k <= 1 else float(tails[min(k - 1, p.size)])

    def mean_tail(m: int) -> float:
        return float(ntails[min(max(m, 1) - 1, p.size)])

    return LazyRow("finite", pmf, tail, mean_tail, {"size": int(p.size)})
