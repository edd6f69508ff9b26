"""Gradient and forward Laplacian on a tree, and the leaf/node interchange.

``lansit_both_sides`` evaluates the two sides of

    E_P(f - f(o)) / ell(P) = E_{mu_P}(Laplacian f)

through disjoint code paths: the left side only touches leaves and root
distances, the right side only interior nodes and the forward kernel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._sum import fsum
from .errors import CertificateError, InvariantViolation, TreeRateError
from .measures import (
    ForwardKernel,
    LazyRow,
    LeafDistribution,
    expected_length,
    leaf_to_kernel,
    node_average,
)
from .tree import LengthFunction, Tree


def _node_function(tree: Tree, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (tree.n_nodes,):
        raise TreeRateError(f"node function needs {tree.n_nodes} values")
    if not np.isfinite(f).all():
        raise TreeRateError("node function must be finite everywhere")
    return f


def gradient(tree: Tree, ell: LengthFunction, f) -> np.ndarray:
    """(f(y) - f(y^-)) / ell(y^-) per non-root node; NaN at the root."""
    f = _node_function(tree, f)
    out = np.full(tree.n_nodes, np.nan)
    par = tree.parent[1:]
    out[1:] = (f[1:] - f[par]) / ell.values[par]
    return out


def laplacian(
    tree: Tree, kernel: ForwardKernel, ell: LengthFunction, f
) -> tuple[np.ndarray, np.ndarray]:
    """(Laplacian f, absolute Laplacian f) per interior node.

    Both are NaN at leaves and at rows the kernel leaves undetermined.
    """
    grad = gradient(tree, ell, f)
    p = np.nan_to_num(kernel.prob)
    g = np.nan_to_num(grad)
    lap = tree.children_sums(g * p)
    alap = tree.children_sums(np.abs(g) * p)
    dead = tree.is_leaf | ~kernel.supported
    lap[dead] = np.nan
    alap[dead] = np.nan
    return lap, alap


def lazy_laplacian(
    f_x: float,
    f_children,
    row: LazyRow,
    ell_x: float,
    cutoff: int,
    diff_bound: float | None = None,
) -> tuple[float, float]:
    """Laplacian at a node with countably many children, truncated.

    ``f_children(n)`` gives f at the n-th child (vectorized, n >= 1).  The
    terms n >= cutoff are bounded by ``diff_bound * tail(cutoff) / ell_x``
    where ``diff_bound >= sup_n |f(y_n) - f(x)|``.  Returns (value, error).
    """
    if diff_bound is None or not np.isfinite(diff_bound):
        raise CertificateError("no bound on |f(y) - f(x)|; tail of the Laplacian is uncertified")
    n = np.arange(1, cutoff, dtype=float)
    head = fsum((np.asarray(f_children(n), dtype=float) - f_x) * row.pmf(n)) / ell_x
    return head, diff_bound * row.tail(cutoff) / ell_x


@dataclass(frozen=True)
class LansitResult:
    lhs: float
    rhs: float
    abs_expectation: float  # E_mu(|Laplacian| f): the hypothesis

    @property
    def difference(self) -> float:
        return self.lhs - self.rhs

    def agrees(self, tol: float = 1e-10) -> bool:
        return abs(self.difference) <= tol * (1.0 + abs(self.lhs))


def lansit_both_sides(tree: Tree, P: LeafDistribution, ell: LengthFunction, f) -> LansitResult:
    f = _node_function(tree, f)
    lp = expected_length(tree, P, ell)
    leaves = tree.leaves
    lhs = fsum((f[leaves] - f[0]) * P.cone[leaves]) / lp

    kernel = leaf_to_kernel(tree, P)
    mu = node_average(tree, P, ell)
    lap, alap = laplacian(tree, kernel, ell, f)
    inner = tree.interior
    w = mu.mass[inner]
    ok = w > 0
    hyp = fsum(w[ok] * alap[inner][ok])
    if not np.isfinite(hyp):
        raise InvariantViolation("E_mu(|Laplacian| f) is not finite")
    rhs = fsum(w[ok] * lap[inner][ok])
    return LansitResult(lhs, rhs, hyp)
