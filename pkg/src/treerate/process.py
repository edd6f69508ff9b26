"""Trajectory trees of stochastic processes, cut at the sections S(n).

A :class:`ProcessSpec` describes the forward kernel of a process whose rows
depend only on (level, state): at level ``k`` a node in state ``s`` moves
to symbol ``a`` with probability ``rows_at(k)[s, a]`` and its child is in
state ``next_at(k)[s, a]``.  Words are paths from the root, so the tree is
the set of positive-probability words.

Two representations of the section law at level n are offered:

* :func:`truncate` materializes T^{S(n)} and the leaf law (small n only);
* :func:`level_sums` runs a dynamic program over level-state occupancies,
  which makes n = 10^5 and beyond cheap.  Entropy, divergence and expected
  length collapse to occupancy-weighted sums of per-row quantities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._sum import compensated_cumsum, fsum
from .bounds import DELTA_GRID, EPS_GRID
from .entropy import C_CONST, entropy, kl, phi
from .errors import GuardError, SupportError, TreeRateError
from .measures import ForwardKernel, LeafDistribution, expected_length, kernel_to_leaf
from .tree import DEFAULT_MAX_NODES, LengthFunction, Tree

ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ProcessSpec:
    family: str
    n_symbols: int
    n_states: int
    start: int
    rows_at: Callable[[int], np.ndarray]
    next_at: Callable[[int], np.ndarray]
    length_at: Callable[[int], np.ndarray] | None = None
    stationary: bool = True
    level_rows: Callable[[int], np.ndarray] | None = None  # single-state shortcut
    params: dict = field(default_factory=dict)
    state_labels: Sequence | None = None

    def lengths(self, k: int) -> np.ndarray:
        if self.length_at is None:
            return np.ones(self.n_states)
        return np.asarray(self.length_at(k), dtype=float)

    def check_rows(self, k: int):
        R = np.asarray(self.rows_at(k), dtype=float)
        if R.shape != (self.n_states, self.n_symbols):
            raise TreeRateError(f"rows at level {k} have shape {R.shape}")
        if (R < 0).any():
            raise TreeRateError(f"negative probability at level {k}")
        s = R.sum(axis=1)
        bad = np.nonzero((np.abs(s - 1) > ROW_TOL) & (s != 0))[0]
        if bad.size:
            raise TreeRateError(f"row of state {int(bad[0])} at level {k} sums to {s[bad[0]]!r}")
        return R


def _const(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return lambda k: a


def _length_rule(rule, rows_at, n_states, stationary):
    """Turn a length rule into ``level -> per-state lengths``."""
    if rule is None or rule == "unit" or (isinstance(rule, dict) and rule.get("kind") == "unit"):
        return None
    if isinstance(rule, dict):
        kind = rule.get("kind")
        if kind == "constant":
            v = float(rule["value"])
            if not v > 0:
                raise TreeRateError("constant length must be positive")
            return _const(np.full(n_states, v))
        if kind == "state":
            vals = np.asarray(rule["values"], dtype=float)
            if vals.shape != (n_states,) or not (vals > 0).all():
                raise TreeRateError(f"state lengths need {n_states} positive values")
            return _const(vals)
        if kind == "entropy":
            if stationary:
                h = np.array([entropy(r) if r.sum() > 0 else 1.0 for r in rows_at(0)])
                return _const(h)
            return lambda k: np.array([entropy(r) if r.sum() > 0 else 1.0 for r in rows_at(k)])
        raise TreeRateError(f"unknown length rule {kind!r}")
    if callable(rule):
        return rule
    raise TreeRateError(f"cannot interpret length rule {rule!r}")


# -- families ------------------------------------------------------------


def iid(q, length=None) -> ProcessSpec:
    q = np.asarray(q, dtype=float)[None, :]
    rows = _const(q)
    return ProcessSpec(
        "iid", q.shape[1], 1, 0, rows, _const(np.zeros_like(q, dtype=np.int64)),
        _length_rule(length, rows, 1, True),
        level_rows=lambda n: np.broadcast_to(q, (n, q.shape[1])),
        params={"q": q[0].tolist()},
    )


def markov(matrix, initial=None, start_state: int | None = None, length=None) -> ProcessSpec:
    """Markov chain: the symbol emitted is the new state.

    Give either an ``initial`` law for X_1 or a ``start_state`` whose row
    is used for the first step.
    """
    Qm = np.asarray(matrix, dtype=float)
    S = Qm.shape[0]
    if Qm.shape != (S, S):
        raise TreeRateError("transition matrix must be square")
    nxt = np.tile(np.arange(S, dtype=np.int64), (S, 1))
    if initial is not None:
        nu = np.asarray(initial, dtype=float)
        rows = np.vstack([Qm, nu[None, :]])
        nxt = np.vstack([nxt, np.arange(S, dtype=np.int64)[None, :]])
        start, n_states = S, S + 1
    else:
        start, n_states, rows = int(start_state or 0), S, Qm
    rows_at = _const(rows)
    return ProcessSpec(
        "markov", S, n_states, start, rows_at, _const(nxt),
        _length_rule(length, rows_at, n_states, True),
        params={"matrix": Qm.tolist(), "initial": None if initial is None else list(map(float, initial)),
                "start_state": start_state},
    )


def product(rows: Callable[[int], np.ndarray] | np.ndarray, n_symbols: int | None = None,
            length=None, family: str = "product", params: dict | None = None) -> ProcessSpec:
    """Independent, non-identically distributed steps: level k uses row k.

    ``rows`` is an array (levels x symbols; the last row repeats) or a
    vectorized function from level indices to rows.
    """
    if callable(rows):
        fn = rows
        if n_symbols is None:
            n_symbols = np.asarray(fn(np.arange(1))).shape[1]
    else:
        table = np.asarray(rows, dtype=float)
        n_symbols = table.shape[1]

        def fn(ks):
            ks = np.minimum(np.asarray(ks), table.shape[0] - 1)
            return table[ks]

    def rows_at(k):
        return np.asarray(fn(np.array([k])), dtype=float)

    zeros = np.zeros((1, n_symbols), dtype=np.int64)
    return ProcessSpec(
        family, n_symbols, 1, 0, rows_at, _const(zeros),
        _length_rule(length, rows_at, 1, False), stationary=False,
        level_rows=lambda n: np.asarray(fn(np.arange(n)), dtype=float),
        params=params or {},
    )


def kakutani_f(alpha):
    """(1+a) log2(1+a) + (1-a) log2(1-a); equals 2 at a = 1."""
    a = np.asarray(alpha, dtype=float)
    if (a <= 0).any() or (a > 1).any():
        raise TreeRateError("alpha must lie in (0, 1]")
    out = (1 + a) * np.log2(1 + a) - phi(1 - a)
    return float(out) if out.ndim == 0 else out


def kakutani_row(M: int, alpha):
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    rows = np.full((a.size, M), 1.0 / M)
    rows[:, 0] = (1 + a) / M
    rows[:, 1] = (1 - a) / M
    return rows


def kakutani_alphas(beta: float, n: int) -> np.ndarray:
    """alpha_k = k^(-beta), k = 1..n."""
    if not beta > 0:
        raise TreeRateError("beta must be positive")
    return np.arange(1, n + 1, dtype=float) ** (-beta)


def kakutani(M: int, alphas=None, beta: float | None = None, length=None) -> ProcessSpec:
    """Product of p_{alpha_k}: the first two symbols tilted by +-alpha_k / M."""
    if M < 2:
        raise TreeRateError("M must be at least 2")
    if (alphas is None) == (beta is None):
        raise TreeRateError("give exactly one of alphas and beta")
    if alphas is not None:
        al = np.asarray(alphas, dtype=float)
        kakutani_f(al)  # domain check

        def alpha_at(ks):
            return al[np.minimum(ks, al.size - 1)]
    else:
        if not beta > 0:
            raise TreeRateError("beta must be positive")

        def alpha_at(ks):
            return (np.asarray(ks, dtype=float) + 1) ** (-beta)

    return product(lambda ks: kakutani_row(M, alpha_at(np.asarray(ks))), M, length,
                   family="kakutani", params={"M": M, "beta": beta})


def srw_regular(d: int, m: int | None = None, start: int = 0, length=None) -> ProcessSpec:
    """Simple random walk on the circulant digraph v -> v+1, ..., v+d (mod m)."""
    if d < 1:
        raise TreeRateError("out-degree must be positive")
    m = 2 * d + 1 if m is None else m
    if m <= d:
        raise TreeRateError("need more vertices than the out-degree")
    Qm = np.zeros((m, m))
    for v in range(m):
        Qm[v, [(v + j) % m for j in range(1, d + 1)]] = 1.0 / d
    spec = markov(Qm, start_state=start, length=length)
    return ProcessSpec(**{**spec.__dict__, "family": "srw", "params": {"d": d, "m": m, "start": start}})


def indisp_process(theta: float, d1: int, d2: int, length=None) -> ProcessSpec:
    """Coin flip between two branches, then uniform steps of degree d1 or d2."""
    if not 0 < theta < 1 or d1 < 2 or d2 < 2:
        raise TreeRateError("need 0 < theta < 1 and branch degrees >= 2")
    A = max(d1, d2)
    rows = np.zeros((3, A))
    rows[0, :2] = [theta, 1 - theta]
    rows[1, :d1] = 1.0 / d1
    rows[2, :d2] = 1.0 / d2
    nxt = np.zeros((3, A), dtype=np.int64)
    nxt[0, :2] = [1, 2]
    nxt[1, :] = 1
    nxt[2, :] = 2
    rows_at = _const(rows)
    return ProcessSpec("indisp", A, 3, 0, rows_at, _const(nxt),
                       _length_rule(length, rows_at, 3, True),
                       params={"theta": theta, "d1": d1, "d2": d2})


def custom(n_symbols, n_states, start, rows_at, next_at, length=None, stationary=False) -> ProcessSpec:
    return ProcessSpec("custom", n_symbols, n_states, start, rows_at, next_at,
                       _length_rule(length, rows_at, n_states, stationary), stationary=stationary)


def mixture(base: ProcessSpec, alt: ProcessSpec, deltas: np.ndarray) -> ProcessSpec:
    """Rows (1 - delta) base + delta alt; ``deltas[k]`` applies to steps out of level k."""
    if (base.n_states, base.n_symbols, base.start) != (alt.n_states, alt.n_symbols, alt.start):
        raise TreeRateError("base and alternate processes have different state structure")
    d = np.asarray(deltas, dtype=float)

    def rows_at(k):
        dk = d[k] if k < d.size else 0.0
        return (1 - dk) * base.rows_at(k) + dk * alt.rows_at(k)

    return ProcessSpec("mixture", base.n_symbols, base.n_states, base.start, rows_at,
                       base.next_at, base.length_at, stationary=False)


def spec_from_json(obj: dict) -> ProcessSpec:
    """``{family, parameters, stateSpace?, lengthRule?}``."""
    unknown = set(obj) - {"family", "parameters", "stateSpace", "lengthRule"}
    if unknown:
        raise TreeRateError(f"unknown process-spec keys: {sorted(unknown)}")
    fam = obj.get("family")
    p = dict(obj.get("parameters", {}))
    length = obj.get("lengthRule")
    try:
        if fam == "iid":
            spec = iid(p["q"], length)
        elif fam == "markov":
            spec = markov(p["matrix"], p.get("initial"), p.get("start_state"), length)
        elif fam == "product":
            spec = product(np.asarray(p["rows"], dtype=float), length=length)
        elif fam == "kakutani":
            spec = kakutani(int(p["M"]), p.get("alphas"), p.get("beta"), length)
        elif fam == "srw":
            spec = srw_regular(int(p["d"]), p.get("m"), int(p.get("start", 0)), length)
        elif fam == "indisp":
            spec = indisp_process(float(p["theta"]), int(p["d1"]), int(p["d2"]), length)
        else:
            raise TreeRateError(f"unknown process family {fam!r}")
    except KeyError as e:
        raise TreeRateError(f"process family {fam!r} is missing parameter {e.args[0]!r}") from None
    if obj.get("stateSpace") is not None:
        labels = list(obj["stateSpace"])
        object.__setattr__(spec, "state_labels", labels)
    return spec


# -- explicit truncation ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class SectionLaw:
    """T^{S(n)} for a reference process with leaf laws of companions."""

    n: int
    tree: Tree
    kernel: ForwardKernel
    lengths: LengthFunction
    companions: tuple = ()

    @property
    def law(self) -> LeafDistribution:
        return kernel_to_leaf(self.tree, self.kernel)

    def companion_law(self, i: int = 0) -> LeafDistribution:
        return kernel_to_leaf(self.tree, self.companions[i])


def truncate(
    spec: ProcessSpec,
    n: int,
    *,
    companions: Sequence[ProcessSpec] = (),
    max_nodes: int = DEFAULT_MAX_NODES,
) -> SectionLaw:
    """Build the tree of positive-probability words of length <= n.

    Companion processes are laid on the same tree; each must be supported
    within it (absolute continuity), else :class:`SupportError`.
    """
    states = np.array([spec.start])
    cstates = [np.array([c.start]) for c in companions]
    cmass = [np.ones(1) for _ in companions]
    degrees, probs, lens = [], [np.array([np.nan])], []
    cprobs = [[np.array([np.nan])] for _ in companions]
    total = 1
    for k in range(n):
        R = spec.check_rows(k)[states]
        N = np.asarray(spec.next_at(k))[states]
        lens.append(spec.lengths(k)[states])
        pos = R > 0
        deg = pos.sum(axis=1)
        total += int(deg.sum())
        if total > max_nodes:
            raise GuardError(f"truncation at level {n} exceeds {max_nodes} nodes")
        node, sym = np.nonzero(pos)
        degrees.append(deg)
        probs.append(R[node, sym])
        for i, c in enumerate(companions):
            Rc = c.check_rows(k)[cstates[i]]
            outside = np.where(pos, 0.0, Rc).sum(axis=1)
            leak = np.nonzero((outside > ROW_TOL) & (cmass[i] > 0))[0]
            if leak.size:
                raise SupportError(f"level {k} node {int(leak[0])}", float(outside[leak[0]]))
            inside = np.where(pos, Rc, 0.0).sum(axis=1)
            cp = Rc[node, sym]
            # rows of zero-mass companion nodes are left undetermined
            dead = np.abs(inside - 1) > ROW_TOL
            cp = np.where(dead[node], np.nan, cp)
            cprobs[i].append(cp)
            cmass[i] = cmass[i][node] * np.nan_to_num(cp)
            cstates[i] = np.asarray(c.next_at(k))[cstates[i][node], sym]
        states = N[node, sym]
    degrees.append(np.zeros(states.size, dtype=np.int64))
    lens.append(np.full(states.size, np.nan))
    tree = Tree.from_degrees(np.concatenate(degrees), allow_unary=True, max_nodes=max_nodes)
    kernel = ForwardKernel(tree, np.concatenate(probs))
    ell = np.concatenate(lens)
    ell[tree.is_leaf] = np.nan
    ell_fn = LengthFunction.validated(tree, "table", ell)
    comp = tuple(ForwardKernel(tree, np.concatenate(cp)) for cp in cprobs)
    return SectionLaw(n, tree, kernel, ell_fn, comp)


def explicit_functionals(section: SectionLaw, i: int | None = 0) -> dict:
    """H, ell, ell_sharp of the reference law and D of companion ``i`` against it."""
    t = section.tree
    Q = section.law
    out = {"H_Q": entropy(Q), "ell_Q": expected_length(t, Q, section.lengths)}
    if section.companions and i is not None:
        P = section.companion_law(i)
        out.update(
            H_P=entropy(P),
            ell_P=expected_length(t, P, section.lengths),
            ellsharp_P=fsum(t.depth[t.leaves] * P.leaf_mass),
            D=kl(P, Q),
        )
    return out


# -- aggregated dynamic program ---------------------------------------------


@dataclass
class LevelSums:
    """Per-level contributions; cumulative sums give the section values."""

    H: np.ndarray
    D: np.ndarray
    ell: np.ndarray
    active: np.ndarray  # mass still moving (not absorbed in a leaf)
    ratio_max: np.ndarray  # max/min of H_ref/ell over reference-reachable rows
    ratio_min: np.ndarray
    degree: np.ndarray  # max positive entries over reachable reference rows


def _row_entropies(R: np.ndarray) -> np.ndarray:
    return phi(np.clip(R, 0.0, 1.0)).sum(axis=-1)


def _row_kl(RP: np.ndarray, RQ: np.ndarray) -> np.ndarray:
    """Pairwise D(RP[i] || RQ[j]); inf where supports clash."""
    p = RP[:, None, :]
    q = RQ[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p / q), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def _level_sums_fast(spec_p: ProcessSpec, spec_q: ProcessSpec | None, n: int) -> LevelSums:
    RP = np.asarray(spec_p.level_rows(n), dtype=float)
    ref = spec_q if spec_q is not None else spec_p
    RQ = RP if spec_q is None else np.asarray(spec_q.level_rows(n), dtype=float)
    H = _row_entropies(RP)
    if spec_q is None:
        D = np.zeros(n)
    else:
        clash = np.nonzero(((RP > 0) & (RQ <= 0)).any(axis=1))[0]
        if clash.size:
            raise SupportError(f"level {int(clash[0])}", float(RP[clash[0]].max()))
        with np.errstate(divide="ignore", invalid="ignore"):
            D = np.maximum(np.where(RP > 0, RP * np.log2(RP / RQ), 0.0).sum(axis=1), 0.0)
    ell = np.array([ref.lengths(k)[0] for k in range(n)]) if ref.length_at is not None else np.ones(n)
    HQ = _row_entropies(RQ)
    return LevelSums(H, D, ell, np.ones(n), HQ / ell, HQ / ell, (RQ > 0).sum(axis=1).astype(float))


def _level_sums_dp(spec_p: ProcessSpec, spec_q: ProcessSpec | None, n: int) -> LevelSums:
    joint = spec_q is not None
    ref = spec_q if joint else spec_p
    Sp, Sq = spec_p.n_states, ref.n_states
    pi = np.zeros((Sp, Sq))
    pi[spec_p.start, ref.start] = 1.0
    piq = np.zeros(Sq)  # reference occupancy, for the reachable set of T
    piq[ref.start] = 1.0
    out = {k: np.zeros(n) for k in ("H", "D", "ell", "active", "rmax", "rmin", "deg")}
    cache = None
    for k in range(n):
        if cache is None or not (spec_p.stationary and ref.stationary):
            RP = spec_p.check_rows(k)
            NP = np.asarray(spec_p.next_at(k))
            RQ = ref.check_rows(k) if joint else RP
            NQ = np.asarray(ref.next_at(k)) if joint else NP
            hp = _row_entropies(RP)
            hq = _row_entropies(RQ)
            dmat = _row_kl(RP, RQ) if joint else np.zeros((Sp, Sq))
            alive_p = RP.sum(axis=1) > 0
            alive_q = RQ.sum(axis=1) > 0
            ellq = ref.lengths(k)
            degq = (RQ > 0).sum(axis=1)
            # transition index arrays over (sp, sq, a)
            sp, sq, a = np.meshgrid(np.arange(Sp), np.arange(Sq), np.arange(spec_p.n_symbols), indexing="ij")
            w_idx = (NP[sp, a], NQ[sq, a])
            wP = np.broadcast_to(RP[:, None, :], (Sp, Sq, spec_p.n_symbols))
            cache = True
        live = pi * alive_p[:, None]
        if joint:
            bad = (live > 0) & ~np.isfinite(dmat)
            if bad.any():
                i, j = map(int, np.argwhere(bad)[0])
                raise SupportError(f"level {k}, states ({i}, {j})", float(live[i, j]))
        out["H"][k] = fsum(live.sum(axis=1) * hp)
        out["D"][k] = fsum((live * np.where(live > 0, dmat, 0.0)).ravel())
        out["ell"][k] = fsum(live.sum(axis=0) * ellq)
        out["active"][k] = fsum(live.ravel())
        reach = (piq > 0) & alive_q
        if reach.any():
            r = hq[reach] / ellq[reach]
            out["rmax"][k], out["rmin"][k] = r.max(), r.min()
            out["deg"][k] = degq[reach].max()
        else:
            out["rmax"][k] = out["rmin"][k] = np.nan
        new = np.zeros((Sp, Sq))
        np.add.at(new, w_idx, live[:, :, None] * wP)
        pi = new
        newq = np.zeros(Sq)
        np.add.at(newq, NQ, (piq * alive_q)[:, None] * RQ)
        piq = newq
    return LevelSums(out["H"], out["D"], out["ell"], out["active"], out["rmax"], out["rmin"], out["deg"])


def _shared_states(spec_p: ProcessSpec, spec_q: ProcessSpec | None) -> bool:
    """True when P and Q walk through the same state on every word."""
    if spec_q is None:
        return True
    if (spec_p.n_states, spec_p.start, spec_p.n_symbols) != (spec_q.n_states, spec_q.start, spec_q.n_symbols):
        return False
    if spec_p.next_at is spec_q.next_at:
        return True
    return spec_p.stationary and spec_q.stationary and np.array_equal(spec_p.next_at(0), spec_q.next_at(0))


def _level_sums_diag(spec_p: ProcessSpec, spec_q: ProcessSpec | None, n: int) -> LevelSums:
    joint = spec_q is not None
    ref = spec_q if joint else spec_p
    S = spec_p.n_states
    pi = np.zeros(S)
    pi[spec_p.start] = 1.0
    piq = pi.copy()
    out = {k: np.zeros(n) for k in ("H", "D", "ell", "active", "rmax", "rmin", "deg")}
    fixed = spec_p.stationary and ref.stationary
    done = False
    for k in range(n):
        if not (fixed and done):
            RP = spec_p.check_rows(k)
            RQ = ref.check_rows(k) if joint else RP
            NX = np.asarray(spec_p.next_at(k))
            hp = _row_entropies(RP)
            hq = hp if not joint else _row_entropies(RQ)
            if joint:
                with np.errstate(divide="ignore", invalid="ignore"):
                    dk = np.where(RP > 0, RP * np.log2(RP / RQ), 0.0).sum(axis=1)
                dk = np.maximum(dk, 0.0)
            alive_p = RP.sum(axis=1) > 0
            alive_q = RQ.sum(axis=1) > 0
            ellq = ref.lengths(k)
            degq = (RQ > 0).sum(axis=1)
            done = True
        live = pi * alive_p
        out["H"][k] = fsum(live * hp)
        if joint:
            bad = (live > 0) & ~np.isfinite(dk)
            if bad.any():
                i = int(np.nonzero(bad)[0][0])
                raise SupportError(f"level {k}, state {i}", float(live[i]))
            out["D"][k] = fsum(np.where(live > 0, live * dk, 0.0))
        out["ell"][k] = fsum(live * ellq)
        out["active"][k] = fsum(live)
        reach = (piq > 0) & alive_q
        if reach.any():
            r = hq[reach] / ellq[reach]
            out["rmax"][k], out["rmin"][k] = r.max(), r.min()
            out["deg"][k] = degq[reach].max()
        else:
            out["rmax"][k] = out["rmin"][k] = np.nan
        new = np.zeros(S)
        np.add.at(new, NX, live[:, None] * RP)
        pi = new
        if joint:
            newq = np.zeros(S)
            np.add.at(newq, NX, (piq * alive_q)[:, None] * RQ)
            piq = newq
        else:
            piq = pi
    return LevelSums(out["H"], out["D"], out["ell"], out["active"], out["rmax"], out["rmin"], out["deg"])


def level_sums(spec_p: ProcessSpec, spec_q: ProcessSpec | None, n: int) -> LevelSums:
    fast = spec_p.level_rows is not None and spec_p.n_states == 1 and (
        spec_q is None or (spec_q.level_rows is not None and spec_q.n_states == 1)
    )
    if fast:
        return _level_sums_fast(spec_p, spec_q, n)
    if _shared_states(spec_p, spec_q):
        return _level_sums_diag(spec_p, spec_q, n)
    return _level_sums_dp(spec_p, spec_q, n)


@dataclass(frozen=True)
class AggregateEntry:
    n: int
    H_P: float
    ell_P: float
    ellsharp_P: float
    D: float


def aggregate_entropy(spec_p: ProcessSpec, n: int, spec_q: ProcessSpec | None = None) -> AggregateEntry:
    """Exact H(P_n), ell(P_n), ell_sharp(P_n) and D(P_n||Q_n) by level-state DP."""
    s = level_sums(spec_p, spec_q, n)
    return AggregateEntry(n, fsum(s.H), fsum(s.ell), fsum(s.active), fsum(s.D))


# -- rate sequences --------------------------------------------------------


RATE_COLUMNS = ("n", "H_P", "H_Q", "ell_P", "ell_Q", "D", "D_over_n", "rate_P", "rate_Q",
                "gap", "delta_n", "bound")


@dataclass
class RateSequence:
    n: np.ndarray
    H_P: np.ndarray
    H_Q: np.ndarray
    ell_P: np.ndarray
    ell_Q: np.ndarray
    ellsharp_P: np.ndarray
    D: np.ndarray
    bound: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def rate_P(self) -> np.ndarray:
        return self.H_P / self.ell_P

    @property
    def rate_Q(self) -> np.ndarray:
        return self.H_Q / self.ell_Q

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.rate_P - self.rate_Q)

    @property
    def D_over_n(self) -> np.ndarray:
        return self.D / self.n

    @property
    def delta_n(self) -> np.ndarray:
        return (np.maximum(self.D, 0.0) / self.ell_P) ** 0.25

    def rows(self, every: int = 1):
        cols = {c: getattr(self, c) for c in RATE_COLUMNS}
        idx = range(every - 1, self.n.size, every)
        if self.n.size and (self.n.size - 1) not in idx:
            idx = list(idx) + [self.n.size - 1]
        for i in idx:
            yield {c: (int(v[i]) if c == "n" else float(v[i])) for c, v in cols.items()}

    def monotone_kl(self) -> bool:
        return bool((np.diff(self.D) >= 0).all())


def _bound_sequence(sP: LevelSums, sQ: LevelSums, H_P, ell_P, ellsharp_P, ell_Q, D, eps_grid) -> np.ndarray:
    """Evaluate the asymptotic-proof bound at every n.

    Tightness uses eps = 0 with M the running max degree (finite rows);
    the section split uses the earliest level k from which H_q/ell varies
    by at most eps on all later levels, minimized over ``eps_grid``.
    """
    n = H_P.size
    with np.errstate(invalid="ignore", divide="ignore"):
        L = ellsharp_P / ell_P
    M = np.maximum.accumulate(sQ.degree)
    amax = np.fmax.accumulate(sQ.ratio_max)
    amin = np.fmin.accumulate(sQ.ratio_min)
    spread_all = amax - amin
    # suffix spread over levels [k, N)
    sufmax = np.fmax.accumulate(sQ.ratio_max[::-1])[::-1]
    sufmin = np.fmin.accumulate(sQ.ratio_min[::-1])[::-1]
    cumP = np.concatenate([[0.0], np.cumsum(sP.ell)])
    cumQ = np.concatenate([[0.0], np.cumsum(sQ.ell)])

    dn = np.where(D > 0, (np.maximum(D, 0.0) / ell_P) ** 0.25, 0.0)
    t12 = np.zeros(n)
    for i in range(n):
        if D[i] <= 0:
            continue
        if dn[i] < 0.5:
            t12[i] = L[i] * M[i] * phi(dn[i]) + C_CONST * math.sqrt(L[i]) * dn[i]
        else:
            t12[i] = min(
                L[i] * M[i] * phi(d) + C_CONST * math.sqrt(L[i]) / d * math.sqrt(D[i] / ell_P[i])
                for d in DELTA_GRID
            )
    best = np.full(n, np.inf)
    for eps in eps_grid:
        ok = np.nonzero((sufmax - sufmin) <= eps)[0]
        k = int(ok[0]) if ok.size else n
        t3 = spread_all.copy()  # fallback: term3 <= A - a
        m = np.arange(1, n + 1)
        late = m > k
        if k < n:
            share = np.maximum(cumP[k] / ell_P, cumQ[k] / ell_Q)
            spread_late = np.zeros(n)
            # spread over levels k..m-1 for each m > k
            lm = np.fmax.accumulate(np.where(np.arange(n) >= k, sQ.ratio_max, -np.inf))
            ln = np.fmin.accumulate(np.where(np.arange(n) >= k, sQ.ratio_min, np.inf))
            spread_late = np.where(late, lm - ln, 0.0)
            t3 = np.where(late, np.minimum(spread_late + spread_all * share, spread_all), spread_all)
        best = np.minimum(best, t12 + t3)
    return best


def rate_sequence(
    spec_p: ProcessSpec,
    spec_q: ProcessSpec,
    N: int,
    *,
    eps_grid: Sequence[float] = EPS_GRID,
    h: float | None = None,
) -> RateSequence:
    """Rates, divergences and the comparison bound for n = 1..N."""
    if N < 1:
        raise TreeRateError("need at least one level")
    sP = level_sums(spec_p, spec_q, N)
    sQ = level_sums(spec_q, None, N)
    H_P = compensated_cumsum(sP.H)
    H_Q = compensated_cumsum(sQ.H)
    ell_P = compensated_cumsum(sP.ell)
    ell_Q = compensated_cumsum(sQ.ell)
    ellsharp_P = compensated_cumsum(sP.active)
    D = compensated_cumsum(sP.D)
    bound = _bound_sequence(sP, sQ, H_P, ell_P, ellsharp_P, ell_Q, D, eps_grid)
    lens = sQ.ell / np.where(sQ.active > 0, sQ.active, 1.0)
    meta = {"c1": float(np.nanmin(lens)), "c2": float(np.nanmax(lens))}
    r = sQ.ratio_max[np.isfinite(sQ.ratio_max)]
    rmin = sQ.ratio_min[np.isfinite(sQ.ratio_min)]
    if h is not None:
        meta.update(h=float(h), h_source="declared")
    elif r.size and np.allclose(r, r[0], rtol=0, atol=1e-12) and np.allclose(rmin, r[0], rtol=0, atol=1e-12):
        meta.update(h=float(r[0]), h_source="constant H_q/ell")
    else:
        rq = H_Q / ell_Q
        meta.update(h=float(rq[-1]), h_source="estimated",
                    h_drift=float(abs(rq[-1] - rq[(N - 1) // 2])))
    return RateSequence(np.arange(1, N + 1), H_P, H_Q, ell_P, ell_Q, ellsharp_P, D, bound, meta)


# -- Kakutani products -------------------------------------------------------


@dataclass
class KakutaniResult:
    M: int
    alphas: np.ndarray
    f: np.ndarray
    D_row: np.ndarray  # D(p_alpha_k || uniform), closed form f/M
    D: np.ndarray  # partial sums D(P_n || Q_n)
    H_P: np.ndarray  # from per-level row entropies

    @property
    def n(self) -> np.ndarray:
        return np.arange(1, self.alphas.size + 1)

    @property
    def rate_gap(self) -> np.ndarray:
        return np.abs(self.H_P / self.n - math.log2(self.M))

    def rows(self, every: int = 1):
        n = self.alphas.size
        idx = list(range(every - 1, n, every))
        if idx[-1:] != [n - 1]:
            idx.append(n - 1)
        for i in idx:
            yield {
                "n": i + 1, "alpha": float(self.alphas[i]), "f_alpha": float(self.f[i]),
                "D_row": float(self.D_row[i]), "D": float(self.D[i]), "D_over_n": float(self.D[i] / (i + 1)),
                "H_P": float(self.H_P[i]), "rate_gap": float(abs(self.H_P[i] / (i + 1) - math.log2(self.M))),
            }


def kakutani_experiment(M: int, alphas=None, beta: float | None = None, n: int | None = None) -> KakutaniResult:
    """Closed-form divergences and DP entropies for the tilted uniform product."""
    if M < 2:
        raise TreeRateError("M must be at least 2")
    if alphas is None:
        if beta is None or n is None:
            raise TreeRateError("give alphas, or beta together with n")
        al = kakutani_alphas(beta, n)
    else:
        al = np.asarray(alphas, dtype=float)
        if n is not None:
            al = al[:n]
    f = kakutani_f(al)
    d_row = f / M
    spec = kakutani(M, alphas=al)
    sums = level_sums(spec, iid(np.full(M, 1.0 / M)), al.size)
    return KakutaniResult(M, al, f, d_row, compensated_cumsum(d_row), compensated_cumsum(sums.H))
