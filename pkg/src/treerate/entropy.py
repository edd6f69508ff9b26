"""Entropies, Kullback-Leibler divergences and related inequalities.

All logarithms are base 2.  Conventions: ``0 log 0 = 0``; a positive
P-mass on a zero Q-mass raises :class:`SupportError` instead of returning
infinity, so callers get the offending index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._sum import fsum
from .errors import CertificateError, SupportError, TreeRateError
from .measures import (
    ForwardKernel,
    LazyRow,
    LeafDistribution,
    expected_length,
    leaf_to_kernel,
    node_average,
)
from .tree import LengthFunction, Tree

LN2 = math.log(2.0)
MAX_PHI = 1.0 / (math.e * LN2)
# 2 * MAX_PHI * sqrt(2 ln 2): turns an L1 distance into sqrt(KL) via Pinsker
C_CONST = 2.0 * math.sqrt(2.0) / (math.e * math.sqrt(LN2))

_DOMAIN_SLACK = 1e-12


def phi(t):
    """t log2(1/t) on [0, 1] with phi(0) = 0.  Scalars or arrays."""
    arr = np.asarray(t, dtype=float)
    if np.isnan(arr).any() or (arr < 0).any() or (arr > 1 + _DOMAIN_SLACK).any():
        raise TreeRateError("phi is defined on [0, 1] only")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(arr > 0, -arr * np.log2(np.where(arr > 0, arr, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def entropy(p) -> float:
    """Shannon entropy in bits of a probability vector or a leaf distribution."""
    if isinstance(p, LeafDistribution):
        p = p.leaf_mass
    return fsum(phi(np.asarray(p, dtype=float)))


def binary_entropy(theta: float) -> float:
    return entropy([theta, 1.0 - theta])


def _kl_terms(p: np.ndarray, q: np.ndarray, labels=None) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise TreeRateError("distributions live on different index sets")
    bad = np.nonzero((p > 0) & (q <= 0))[0]
    if bad.size:
        i = int(bad[0])
        raise SupportError(labels[i] if labels is not None else i, float(p[i]))
    pos = p > 0
    out = np.zeros_like(p)
    out[pos] = p[pos] * np.log2(p[pos] / q[pos])
    return out


def kl(P, Q) -> float:
    """D(P||Q) for vectors or for two leaf distributions on one tree."""
    if isinstance(P, LeafDistribution):
        t = P.tree
        labels = [t.labels[v] for v in t.leaves]
        return fsum(_kl_terms(P.leaf_mass, Q.leaf_mass, labels))
    return fsum(_kl_terms(P, Q))


# -- per-node quantities -------------------------------------------------


def local_entropies(tree: Tree, kernel: ForwardKernel) -> np.ndarray:
    """H_p(x) for every interior node; NaN at leaves and unsupported rows."""
    out = np.full(tree.n_nodes, np.nan)
    if tree.n_nodes == 1:
        return out
    terms = phi(np.nan_to_num(kernel.prob[1:]))
    sums = np.add.reduceat(terms, tree.first_child[tree.interior] - 1)
    out[tree.interior] = sums
    out[~kernel.supported] = np.nan
    return out


def local_entropy(kernel: ForwardKernel, x: int) -> float:
    return entropy(kernel.row(x))


def local_kls(tree: Tree, kp: ForwardKernel, kq: ForwardKernel) -> np.ndarray:
    """D_{p,q}(x) per interior node supported by p; NaN elsewhere."""
    out = np.full(tree.n_nodes, np.nan)
    if tree.n_nodes == 1:
        return out
    p = np.nan_to_num(kp.prob[1:])
    q = np.nan_to_num(kq.prob[1:])
    par_ok = kp.supported[tree.parent[1:]]
    p = np.where(par_ok, p, 0.0)
    labels = tree.labels[1:]
    terms = _kl_terms(p, q, labels)
    out[tree.interior] = np.add.reduceat(terms, tree.first_child[tree.interior] - 1)
    out[~kp.supported] = np.nan
    return out


def local_kl(kp: ForwardKernel, kq: ForwardKernel, x: int) -> float:
    return kl(kp.row(x), kq.row(x))


@dataclass(frozen=True)
class Interval:
    """Value known up to a one-sided nonnegative error: truth in [lo, hi]."""

    lo: float
    hi: float

    @property
    def error(self) -> float:
        return self.hi - self.lo


def tail_entropy_bound(dominating: LazyRow, m: int) -> float:
    """sum_{n >= m} n (2^-n + p(n)) for the dominating pmf p, m >= 2."""
    if m < 2:
        raise CertificateError("tail bound needs a cutoff m >= 2")
    geo = 2.0 ** (1 - m) * (m + 1)  # sum_{n>=m} n 2^-n
    return geo + dominating.mean_tail(m)


def lazy_local_entropy(row: LazyRow, cutoff: int, dominating: LazyRow | None = None) -> Interval:
    """Entropy of a countable row from its first ``cutoff - 1`` terms.

    The neglected tail is bounded by :func:`tail_entropy_bound`; without an
    explicit dominating pmf the row must dominate itself (finite mean).
    """
    dom = dominating if dominating is not None else row
    if not dom.finite_mean:
        raise CertificateError(f"{dom.name} pmf has infinite mean; no tail certificate")
    head = fsum(phi(row.prefix(cutoff - 1)))
    return Interval(head, head + tail_entropy_bound(dom, cutoff))


# -- decompositions ------------------------------------------------------


def entropy_decomposition(tree: Tree, P: LeafDistribution, ell: LengthFunction) -> tuple[float, float]:
    """(H(P)/ell(P), E_mu[H_p(x)/ell(x)]) computed by separate paths."""
    lhs = entropy(P) / expected_length(tree, P, ell)
    mu = node_average(tree, P, ell)
    hp = local_entropies(tree, leaf_to_kernel(tree, P))
    inner = tree.interior
    w = mu.mass[inner]
    ok = w > 0
    rhs = fsum(w[ok] * hp[inner][ok] / ell.values[inner][ok])
    return lhs, rhs


def kl_decomposition(
    tree: Tree, P: LeafDistribution, Q: LeafDistribution, ell: LengthFunction
) -> tuple[float, float]:
    """(D(P||Q)/ell(P), E_mu[D_{p,q}(x)/ell(x)]) computed by separate paths."""
    lhs = kl(P, Q) / expected_length(tree, P, ell)
    mu = node_average(tree, P, ell)
    d = local_kls(tree, leaf_to_kernel(tree, P), leaf_to_kernel(tree, Q))
    inner = tree.interior
    w = mu.mass[inner]
    ok = w > 0
    rhs = fsum(w[ok] * d[inner][ok] / ell.values[inner][ok])
    return lhs, rhs


# -- variational distance and Pinsker -----------------------------------


def variational_distance(nu1, nu2) -> float:
    a = np.asarray(nu1, dtype=float)
    b = np.asarray(nu2, dtype=float)
    if a.shape != b.shape:
        raise TreeRateError("distributions live on different index sets")
    return fsum(np.abs(a - b))


def half_l1_parts(nu1, nu2) -> tuple[float, float, float]:
    """(positive-part sum, negative-part sum, half the L1 distance)."""
    d = np.asarray(nu1, dtype=float) - np.asarray(nu2, dtype=float)
    return fsum(d[d > 0]), fsum(-d[d < 0]), 0.5 * fsum(np.abs(d))


@dataclass(frozen=True)
class PinskerCheck:
    l1_squared: float
    bound: float  # 2 ln 2 D(nu1||nu2)

    @property
    def holds(self) -> bool:
        return self.l1_squared <= self.bound + 1e-12


def pinsker_check(nu1, nu2) -> PinskerCheck:
    l1 = variational_distance(nu1, nu2)
    return PinskerCheck(l1 * l1, 2.0 * LN2 * kl(nu1, nu2))


# -- per-node entropy gap ------------------------------------------------


def selection_size(row_p, row_q, eps: float) -> int:
    """Smallest greedy |N_eps| leaving phi-tails of both rows below eps."""
    fp = phi(np.asarray(row_p, dtype=float))
    fq = phi(np.asarray(row_q, dtype=float))
    if eps <= 0:
        return int(fp.size)
    order = np.argsort(-np.maximum(fp, fq), kind="stable")
    tp = fsum(fp) - np.concatenate([[0.0], np.cumsum(fp[order])])
    tq = fsum(fq) - np.concatenate([[0.0], np.cumsum(fq[order])])
    ok = np.nonzero((tp < eps) & (tq < eps))[0]
    return int(ok[0]) if ok.size else int(fp.size)


def local_gap_bound(
    row_p, row_q, eps: float, delta: float, m_eps: int | None = None
) -> tuple[float, float]:
    """(|H_p(x) - H_q(x)|, 2 eps + M_eps phi(delta) + (2/(e ln2)) ||p-q||_1 / delta).

    ``m_eps`` defaults to the greedy selection for ``eps`` (the full row
    length when ``eps == 0``).
    """
    if not 0 < delta <= 0.5:
        raise TreeRateError("delta must lie in (0, 1/2]")
    if eps < 0:
        raise TreeRateError("eps must be nonnegative")
    p = np.asarray(row_p, dtype=float)
    q = np.asarray(row_q, dtype=float)
    if m_eps is None:
        m_eps = selection_size(p, q, eps)
    gap = abs(entropy(p) - entropy(q))
    bound = 2 * eps + m_eps * phi(delta) + 2 * MAX_PHI / delta * variational_distance(p, q)
    return gap, bound
