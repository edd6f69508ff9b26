"""Tightness certificates and the entropy-rate comparison bound.

The bound compares ``H(P)/ell(P)`` with ``H(Q)/ell(Q)`` through

    L (2 eps + M_eps phi(delta))                      (term1)
  + C sqrt(L) / delta * sqrt(D(P||Q) / ell(P))        (term2)
  + (A - a) / 2 * ||mu_P - mu_Q||_1                   (term3)

with ``L = ell_sharp(P)/ell(P)`` and ``A``, ``a`` the sup and inf of
``H_q(x)/ell(x)``.  :func:`compare_bound` returns every piece, plus the two
intermediate sums of the proof (``sum_I`` and ``sum_II``) so that each
inequality in the chain can be checked on its own.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ._sum import fsum
from .entropy import (
    C_CONST,
    binary_entropy,
    entropy,
    kl,
    local_entropies,
    phi,
    tail_entropy_bound,
    variational_distance,
)
from .errors import CertificateError, GuardError, TreeRateError
from .measures import (
    ForwardKernel,
    LazyRow,
    LeafDistribution,
    expected_length,
    kernel_to_leaf,
    leaf_to_kernel,
    node_average,
    unit_expected_length,
)
from .tree import DEFAULT_MAX_NODES, CrossSection, LengthFunction, Tree

DELTA_GRID = (0.01, 0.05, 0.1, 0.25, 0.49)
EPS_GRID = (0.0, 0.01, 0.1)
TYPE_TOL = 1e-12
HOLD_SLACK = 1e-12


class QTypeError(TreeRateError):
    """Interior nodes do not all share one Q-type."""


# -- tightness -----------------------------------------------------------


@dataclass(frozen=True)
class TightnessCertificate:
    """Uniform summability data for the local entropies.

    ``finite-tree`` mode needs only the maximal forward degree.
    ``dominated`` mode carries a dominating pmf whose tails majorize every
    row; for a given eps it selects a cutoff ``m`` and keeps the first
    ``m - 1`` children of every node.
    """

    mode: str
    max_degree: int | None = None
    dominating: LazyRow | None = None
    comparability: float | None = None

    def select(self, eps: float) -> tuple[int, int | None]:
        """(M_eps, cutoff m) for this eps; cutoff is None in finite mode."""
        if self.mode == "finite-tree":
            return int(self.max_degree), None
        if eps <= 0:
            raise CertificateError("dominated certificates need eps > 0")
        m = 2
        while tail_entropy_bound(self.dominating, m) >= eps:
            m += 1
            if m > 1_000_000:
                raise CertificateError("no cutoff reaches the requested eps")
        return m - 1, m


def _rows_of(rows) -> list:
    if isinstance(rows, ForwardKernel):
        rows = [rows]
    out = []
    for r in rows:
        if isinstance(r, ForwardKernel):
            out.extend(r.row(x) for x in r.tree.interior if r.supported[x])
        else:
            out.append(r)
    return out


def certify_tightness(
    rows,
    mode: str = "finite-tree",
    dominating: LazyRow | None = None,
    *,
    comparability: float | None = None,
    P: LeafDistribution | None = None,
    Q: LeafDistribution | None = None,
    lazy_check_terms: int = 256,
) -> TightnessCertificate:
    """Check rows against a tightness mode and return the certificate.

    ``rows``: a kernel, a list of kernels, or a list of finite rows and
    :class:`LazyRow` objects.  When ``comparability`` is given together
    with ``P`` and ``Q``, ``Q/c <= P <= c Q`` is verified leafwise.
    """
    rows = _rows_of(rows)
    if comparability is not None and P is not None and Q is not None:
        c = float(comparability)
        p, q = P.leaf_mass, Q.leaf_mass
        if not c > 0 or (p > c * q * (1 + 1e-12)).any() or (q > c * p * (1 + 1e-12)).any():
            raise CertificateError(f"P and Q are not comparable with constant {c}")
    if mode == "finite-tree":
        if any(isinstance(r, LazyRow) for r in rows):
            raise CertificateError("countable rows need a dominated certificate")
        m = max((len(r) for r in rows), default=0)
        return TightnessCertificate("finite-tree", max_degree=m, comparability=comparability)
    if mode != "dominated":
        raise TreeRateError(f"unknown tightness mode {mode!r}")
    if dominating is None:
        raise CertificateError("dominated mode needs a dominating pmf")
    if not dominating.finite_mean:
        raise CertificateError(f"dominating {dominating.name} pmf has infinite mean")
    for i, r in enumerate(rows):
        if isinstance(r, LazyRow):
            ks = range(1, lazy_check_terms + 1)
            rt = np.array([r.tail(k) for k in ks])
        else:
            p = np.asarray(r, dtype=float)
            rt = np.cumsum(p[::-1])[::-1]
            ks = range(1, p.size + 1)
        dt = np.array([dominating.tail(k) for k in ks])
        bad = np.nonzero(rt > dt + 1e-12)[0]
        if bad.size:
            raise CertificateError(
                f"row {i} tail at k={bad[0] + 1} is {rt[bad[0]]:.3g} > dominating {dt[bad[0]]:.3g}"
            )
    return TightnessCertificate("dominated", dominating=dominating, comparability=comparability)


def _selection_sizes(tree: Tree, kp: ForwardKernel, kq: ForwardKernel, eps: float) -> np.ndarray:
    """Greedy |N_eps(x)| per interior node covering both p- and q-rows."""
    inner = tree.interior
    fp = phi(np.nan_to_num(kp.prob[1:]))
    fq = phi(np.nan_to_num(kq.prob[1:]))
    par = tree.parent[1:]
    order = np.lexsort((-np.maximum(fp, fq), par))
    starts = tree.first_child[inner] - 1
    cp = np.cumsum(fp[order])
    cq = np.cumsum(fq[order])
    base_p = np.concatenate([[0.0], cp])[starts]
    base_q = np.concatenate([[0.0], cq])[starts]
    tot_p = np.add.reduceat(fp, starts)
    tot_q = np.add.reduceat(fq, starts)
    rep = np.repeat(np.arange(inner.size), tree.degree[inner])
    left_p = tot_p[rep] - (cp - base_p[rep])
    left_q = tot_q[rep] - (cq - base_q[rep])
    rank = np.arange(fp.size) - starts[rep] + 1
    big = np.iinfo(np.int64).max
    cand = np.where((left_p < eps) & (left_q < eps), rank, big)
    first = np.minimum.reduceat(cand, starts)
    first = np.where(first == big, tree.degree[inner], first)
    none_needed = (tot_p < eps) & (tot_q < eps)
    return np.where(none_needed, 0, first)


def _check_dominated_tails(tree: Tree, kernel: ForwardKernel, cutoff: int, eps: float, name: str):
    fp = phi(np.nan_to_num(kernel.prob))
    rank = np.zeros(tree.n_nodes, dtype=np.int64)
    rank[1:] = np.arange(1, tree.n_nodes) - tree.first_child[tree.parent[1:]] + 1
    tail = tree.children_sums(np.where(rank >= cutoff, fp, 0.0))
    bad = np.nonzero(tail >= eps)[0]
    if bad.size:
        raise CertificateError(
            f"{name}-row at node {tree.labels[int(bad[0])]!r} has phi-tail {tail[bad[0]]:.3g} >= eps"
        )


# -- Q-types -------------------------------------------------------------


@dataclass(frozen=True)
class QTypePartition:
    type_of: np.ndarray  # per node, -1 at leaves and unsupported rows
    types: list

    @property
    def single_type(self) -> bool:
        return len(self.types) == 1


def q_type_partition(kernel_q: ForwardKernel, tol: float = TYPE_TOL) -> QTypePartition:
    """Group interior nodes whose rows agree up to a permutation of children."""
    tree = kernel_q.tree
    nodes = [int(x) for x in tree.interior if kernel_q.supported[x]]
    keyed = sorted(
        ((len(r), tuple(np.sort(r))), x)
        for x, r in ((x, kernel_q.row(x)) for x in nodes)
    )
    type_of = np.full(tree.n_nodes, -1, dtype=np.int64)
    types: list[list[int]] = []
    rep = None
    for (size, vec), x in keyed:
        v = np.asarray(vec)
        if rep is None or rep[0] != size or np.abs(rep[1] - v).max(initial=0.0) > tol:
            rep = (size, v)
            types.append([])
        types[-1].append(x)
        type_of[x] = len(types) - 1
    return QTypePartition(type_of, [np.array(sorted(t)) for t in types])


# -- the comparison bound ------------------------------------------------


@dataclass
class BoundReport:
    lhs: float
    L: float
    C: float
    A: float
    a: float
    eps: float
    delta: float
    M_eps: int
    term1: float
    term2: float
    term3: float
    rhs: float
    holds: bool
    H_P: float = math.nan
    H_Q: float = math.nan
    ell_P: float = math.nan
    ell_Q: float = math.nan
    D: float = math.nan
    mu_l1: float = math.nan
    sum_I: float = math.nan
    sum_II: float = math.nan
    sweep: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def best_rhs(self) -> float:
        return min([self.rhs] + [s["rhs"] for s in self.sweep])


def _terms(L, eps, m_eps, delta, D, ell_p, A, a, mu_l1):
    t1 = L * (2 * eps + m_eps * phi(delta))
    t2 = C_CONST * math.sqrt(L) / delta * math.sqrt(max(D, 0.0) / ell_p)
    t3 = (A - a) / 2 * mu_l1
    return t1, t2, t3


def _check_params(eps: float, delta: float):
    if not 0 < delta < 0.5:
        raise TreeRateError("delta must lie in (0, 1/2)")
    if eps < 0:
        raise TreeRateError("eps must be nonnegative")


def compare_bound(
    tree: Tree,
    P: LeafDistribution,
    Q: LeafDistribution,
    ell: LengthFunction,
    eps: float = 0.0,
    delta: float = 0.1,
    certificate: TightnessCertificate | None = None,
    *,
    sweep: bool = True,
) -> BoundReport:
    _check_params(eps, delta)
    if certificate is None:
        certificate = TightnessCertificate("finite-tree", max_degree=tree.max_degree)
    D = kl(P, Q)  # raises on support violation
    kp, kq = leaf_to_kernel(tree, P), leaf_to_kernel(tree, Q)
    H_P, H_Q = entropy(P), entropy(Q)
    ell_p, ell_q = expected_length(tree, P, ell), expected_length(tree, Q, ell)
    L = unit_expected_length(tree, P) / ell_p
    mu_p, mu_q = node_average(tree, P, ell), node_average(tree, Q, ell)
    mu_l1 = variational_distance(mu_p.mass, mu_q.mass)

    hp = local_entropies(tree, kp)
    hq = local_entropies(tree, kq)
    inner = tree.interior
    qok = inner[kq.supported[inner]]
    ratio = hq[qok] / ell.values[qok]
    A, a = float(ratio.max()), float(ratio.min())

    def m_for(e: float) -> int:
        if certificate.mode == "finite-tree":
            if e == 0:
                return int(certificate.max_degree)
            return int(_selection_sizes(tree, kp, kq, e).max(initial=0))
        m_eps, cutoff = certificate.select(e)
        _check_dominated_tails(tree, kp, cutoff, e, "p")
        _check_dominated_tails(tree, kq, cutoff, e, "q")
        return m_eps

    if certificate.mode == "dominated" and eps == 0:
        raise CertificateError("eps = 0 is only allowed for finite trees")
    m_eps = m_for(eps)
    lhs = abs(H_P / ell_p - H_Q / ell_q)
    t1, t2, t3 = _terms(L, eps, m_eps, delta, D, ell_p, A, a, mu_l1)
    rhs = t1 + t2 + t3

    w = mu_p.mass[inner]
    pos = w > 0
    ev = ell.values[inner]
    sum_I = fsum(w[pos] / ev[pos] * np.abs(hp[inner][pos] - hq[inner][pos]))
    hq_safe = np.nan_to_num(hq[inner])
    sum_II = fsum(hq_safe / ev * (w - mu_q.mass[inner]))

    points = []
    if sweep:
        eps_grid = [e for e in EPS_GRID if not (certificate.mode == "dominated" and e == 0)]
        for e in eps_grid:
            me = m_for(e)
            for d in DELTA_GRID:
                s1, s2, s3 = _terms(L, e, me, d, D, ell_p, A, a, mu_l1)
                points.append(
                    {"delta": d, "eps": e, "M_eps": me, "term1": s1, "term2": s2,
                     "term3": s3, "rhs": s1 + s2 + s3, "holds": bool(lhs <= s1 + s2 + s3 + HOLD_SLACK)}
                )
    return BoundReport(
        lhs=lhs, L=L, C=C_CONST, A=A, a=a, eps=eps, delta=delta, M_eps=m_eps,
        term1=t1, term2=t2, term3=t3, rhs=rhs, holds=bool(lhs <= rhs + HOLD_SLACK),
        H_P=H_P, H_Q=H_Q, ell_P=ell_p, ell_Q=ell_q, D=D, mu_l1=mu_l1,
        sum_I=sum_I, sum_II=sum_II, sweep=points,
    )


def _replace_term3(rep: BoundReport, term3: float, **extras) -> BoundReport:
    rep.extras.update(term3_original=rep.term3, **extras)
    rep.term3 = term3
    rep.rhs = rep.term1 + rep.term2 + term3
    rep.holds = bool(rep.lhs <= rep.rhs + HOLD_SLACK)
    for s in rep.sweep:
        s["term3"] = term3
        s["rhs"] = s["term1"] + s["term2"] + term3
        s["holds"] = bool(rep.lhs <= s["rhs"] + HOLD_SLACK)
    return rep


def boeam_bound(
    tree: Tree,
    P: LeafDistribution,
    q,
    delta: float = 0.1,
    eps: float = 0.0,
    certificate: TightnessCertificate | None = None,
) -> BoundReport:
    """Unit-length bound when every interior node has the same Q-type.

    ``q`` is either one row (assigned to every interior node in child
    order) or a kernel, which must then have a single Q-type.
    """
    if isinstance(q, ForwardKernel):
        part = q_type_partition(q)
        if not part.single_type or q.unsupported.size:
            raise QTypeError(f"Q has {len(part.types)} types; a single one is required")
        kq = q
        q_row = q.row(int(part.types[0][0]))
    else:
        q_row = np.asarray(q, dtype=float)
        inner = tree.interior
        bad = inner[tree.degree[inner] != q_row.size]
        if bad.size:
            raise QTypeError(
                f"node {tree.labels[int(bad[0])]!r} has degree {tree.degree[bad[0]]}, row has {q_row.size}"
            )
        prob = np.full(tree.n_nodes, np.nan)
        prob[1:] = np.tile(q_row, inner.size)
        kq = ForwardKernel(tree, prob)
    Q = kernel_to_leaf(tree, kq)
    rep = compare_bound(tree, P, Q, LengthFunction.unit(tree), eps, delta, certificate)
    h_q = entropy(q_row)
    depths = np.unique(tree.depth[tree.leaves])
    rep.extras.update(
        H_q=h_q,
        rate_P=rep.H_P / rep.ell_P,
        lhs_single_type=abs(rep.H_P / rep.ell_P - h_q),
        height=int(depths[0]) if depths.size == 1 else None,
    )
    return rep


def entropy_length_bound(
    tree: Tree,
    P: LeafDistribution,
    kernel_q: ForwardKernel,
    delta: float = 0.1,
    eps: float = 0.0,
    certificate: TightnessCertificate | None = None,
) -> BoundReport:
    """Bound with the length function ell_q(x) = H_q(x).

    With this length ``A = a = 1`` so term3 vanishes.  The factor ``L``
    stays in term1 and term2: it is below one only when every H_q(x) is
    at least one bit, and dropping it gives an inequality that fails on
    rows with small entropy.  The L-free value is reported in ``extras``.
    """
    hq = local_entropies(tree, kernel_q)
    inner = tree.interior
    bad = inner[~(hq[inner] > 0)]
    if bad.size:
        raise TreeRateError(
            f"H_q vanishes at node {tree.labels[int(bad[0])]!r}; ell_q must be positive"
        )
    ell_q = LengthFunction.validated(tree, "entropy-derived", hq)
    Q = kernel_to_leaf(tree, kernel_q)
    rep = compare_bound(tree, P, Q, ell_q, eps, delta, certificate)
    plain = (2 * eps + rep.M_eps * phi(delta)) + C_CONST / delta * math.sqrt(max(rep.D, 0.0) / rep.ell_P)
    rep.extras.update(
        lhs_vs_one=abs(rep.H_P / rep.ell_P - 1.0),
        rhs_without_L=plain,
        holds_without_L=bool(rep.lhs <= plain + HOLD_SLACK),
    )
    return rep


def section_variant_bound(
    tree: Tree,
    P: LeafDistribution,
    Q: LeafDistribution,
    ell: LengthFunction,
    S: CrossSection,
    eps: float = 0.0,
    delta: float = 0.1,
    certificate: TightnessCertificate | None = None,
) -> BoundReport:
    """Replace term3 by a split at the cross section ``S``.

    Outside T^S the spread of H_q/ell is ``A*_S - a*_S``; inside, the full
    spread is paid only on the share of expected length spent in T^S.
    """
    rep = compare_bound(tree, P, Q, ell, eps, delta, certificate)
    kq = leaf_to_kernel(tree, Q)
    hq = local_entropies(tree, kq)
    outside = ~tree.is_leaf & ~S.interior_mask & kq.supported
    if outside.any():
        r = hq[outside] / ell.values[outside]
        a_star_hi, a_star_lo = float(r.max()), float(r.min())
    else:
        a_star_hi = a_star_lo = 0.0
    share = max(
        expected_length(tree, P, ell, S) / rep.ell_P,
        expected_length(tree, Q, ell, S) / rep.ell_Q,
    )
    t3 = (a_star_hi - a_star_lo) / 2 * rep.mu_l1 + (rep.A - rep.a) * share
    return _replace_term3(rep, t3, A_star=a_star_hi, a_star=a_star_lo, section_share=share)


# -- the two-branch example ------------------------------------------------


def indisp_tree(theta: float, d1: int, d2: int, n: int, *, max_nodes: int | None = None):
    """Root with two branches of height n and degrees d1, d2.

    Returns ``(tree, P_theta, Q)`` where ``Q`` is the theta = 1/2 law.
    """
    _indisp_domain(theta, d1, d2, n)
    limit = DEFAULT_MAX_NODES if max_nodes is None else max_nodes
    size = 1 + sum(d1**k + d2**k for k in range(1, n + 1)) + 2
    if size > limit:
        raise GuardError(f"two-branch tree of height {n + 1} has {size} nodes, guard is {limit}")
    degrees = [2]
    for k in range(1, n + 1):
        degrees += [d1] * d1 ** (k - 1) + [d2] * d2 ** (k - 1)
    n_leaves = d1**n + d2**n
    degrees = np.concatenate([np.asarray(degrees, dtype=np.int64), np.zeros(n_leaves, dtype=np.int64)])
    kw = {} if max_nodes is None else {"max_nodes": max_nodes}
    tree = Tree.from_degrees(degrees, **kw)

    def law(t):
        m = np.concatenate([np.full(d1**n, t / d1**n), np.full(d2**n, (1 - t) / d2**n)])
        return LeafDistribution.from_leaf_masses(tree, m)

    return tree, law(theta), law(0.5)


def _indisp_domain(theta, d1, d2, n):
    if not 0 < theta < 1:
        raise TreeRateError("theta must lie in (0, 1)")
    if d1 < 2 or d2 < 2:
        raise TreeRateError("branch degrees must be at least 2")
    if n < 1:
        raise TreeRateError("branch height must be at least 1")


def indisp_example(theta: float, d1: int, d2: int, n: int, deltas: Sequence[float] | None = None) -> dict:
    """Closed forms for the two-branch example at height n + 1.

    ``best_term12`` is min over ``deltas`` of term1 + term2 (eps = 0,
    unit length, M = max degree), i.e. the bound without term3.
    """
    _indisp_domain(theta, d1, d2, n)
    l1, l2 = math.log2(d1), math.log2(d2)
    hb = binary_entropy(theta)
    H_P = hb + n * (theta * l1 + (1 - theta) * l2)
    H_Q = 1.0 + n * (0.5 * l1 + 0.5 * l2)
    D = 1.0 - hb
    ell = n + 1
    limit = abs((theta - 0.5) * l1 + (0.5 - theta) * l2)
    if deltas is None:
        deltas = np.logspace(-14, math.log10(0.49), 4000)
    deltas = np.asarray(deltas, dtype=float)
    M = max(2, d1, d2)
    t12 = M * phi(deltas) + C_CONST / deltas * math.sqrt(D / ell)
    i = int(np.argmin(t12))
    return {
        "theta": theta, "d1": d1, "d2": d2, "n": n,
        "H_P": H_P, "H_Q": H_Q, "ell_sharp": ell, "D": D, "D_over_n": D / n,
        "gap": abs(H_P - H_Q) / ell, "gap_over_n": abs(H_P - H_Q) / n,
        "gap_limit": limit, "best_term12": float(t12[i]), "best_delta": float(deltas[i]),
    }
