"""Randomly perturbed processes: rows (1 - delta_n) q + delta_n q'.

Randomness is confined to the delta sequence.  Each realization is then
evaluated exactly by the level-state dynamic program, so convergence in
probability is observed over a few hundred trials instead of sampled
trajectories.

``deltas[k]`` is delta_{k+1}: it mixes the step from level k to level k+1.
All draws come from numpy's PCG64 generator; Monte Carlo trials use child
seeds spawned from one ``SeedSequence``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._sum import compensated_cumsum, fsum
from .entropy import phi, tail_entropy_bound
from .errors import CertificateError, InvariantViolation, TreeRateError
from .measures import LazyRow
from .process import ProcessSpec, RateSequence, mixture, rate_sequence

CHECK_SLACK = 1e-12
THREADS_ENV = "TREERATE_THREADS"


@dataclass(frozen=True, eq=False)
class DeltaLaw:
    """How delta_1, delta_2, ... are produced.

    kinds: ``deterministic`` (a fixed sequence, zero-padded), ``constant``,
    ``bernoulli`` (P[delta_n = 1] = n^-beta, independent) and ``custom``
    (``sampler(rng, N) -> array``; declare ``vanishing`` yourself).
    """

    kind: str
    beta: float | None = None
    value: float | None = None
    sequence: np.ndarray | None = None
    sampler: Callable | None = None
    vanishing: bool | None = None

    def __post_init__(self):
        if self.kind == "bernoulli":
            if self.beta is None or not self.beta > 0:
                raise TreeRateError("bernoulli law needs beta > 0")
        elif self.kind == "constant":
            if self.value is None or not 0 <= self.value <= 1:
                raise TreeRateError("constant delta must lie in [0, 1]")
        elif self.kind == "deterministic":
            seq = np.asarray(self.sequence, dtype=float)
            if seq.ndim != 1 or (seq < 0).any() or (seq > 1).any():
                raise TreeRateError("delta sequence must be a 1-d array in [0, 1]")
        elif self.kind == "custom":
            if self.sampler is None:
                raise TreeRateError("custom law needs a sampler")
        else:
            raise TreeRateError(f"unknown delta law {self.kind!r}")

    @property
    def mean_vanishes(self) -> bool | None:
        """Whether E(delta_n) -> 0; None when it cannot be decided."""
        if self.kind == "bernoulli":
            return True
        if self.kind == "constant":
            return self.value == 0
        if self.kind == "deterministic":
            # a finite sequence is zero-padded afterwards
            return True
        return self.vanishing

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.beta is not None:
            d["beta"] = self.beta
        if self.value is not None:
            d["value"] = self.value
        return d


def bernoulli(beta: float) -> DeltaLaw:
    return DeltaLaw("bernoulli", beta=beta)


def constant(value: float) -> DeltaLaw:
    return DeltaLaw("constant", value=value)


def deterministic(sequence) -> DeltaLaw:
    return DeltaLaw("deterministic", sequence=np.asarray(sequence, dtype=float))


@dataclass(frozen=True, eq=False)
class Realization:
    seed: object
    deltas: np.ndarray

    @property
    def cumulative(self) -> np.ndarray:
        return compensated_cumsum(self.deltas)

    @property
    def running_mean(self) -> np.ndarray:
        return self.cumulative / np.arange(1, self.deltas.size + 1)


def _rng(seed) -> np.random.Generator:
    # seed: int, None or a spawned SeedSequence
    return np.random.Generator(np.random.PCG64(seed))


def sample_deltas(law: DeltaLaw, N: int, seed=None) -> Realization:
    if N < 1:
        raise TreeRateError("need N >= 1")
    if law.kind == "deterministic":
        seq = np.zeros(N)
        m = min(N, law.sequence.size)
        seq[:m] = law.sequence[:m]
        return Realization(seed, seq)
    if law.kind == "constant":
        return Realization(seed, np.full(N, float(law.value)))
    rng = _rng(seed)
    if law.kind == "bernoulli":
        p = np.arange(1, N + 1, dtype=float) ** (-law.beta)
        return Realization(seed, (rng.random(N) < p).astype(float))
    d = np.asarray(law.sampler(rng, N), dtype=float)
    if d.shape != (N,) or (d < 0).any() or (d > 1).any():
        raise TreeRateError("custom sampler must return N values in [0, 1]")
    return Realization(seed, d)


# -- tails of mixed rows ---------------------------------------------------

# phi(t + u) <= 2 (phi(t) + phi(u)) needs t, u <= 1/(2e); phi is increasing
# below 1/e, so scaling by (1 - delta) or delta only lowers each summand.
_SUBADDITIVE_MAX = 1.0 / (2.0 * math.e)


def mixed_phi_tail(q, q_alt, delta: float, m: int) -> tuple[float, float]:
    """(sum_{n>=m} phi(p(n)), 2 (phi-tail of q + phi-tail of q')) for finite rows.

    ``m`` counts from 1 like the children of a node.
    """
    q = np.asarray(q, dtype=float)
    qa = np.asarray(q_alt, dtype=float)
    if not 0 <= delta <= 1:
        raise TreeRateError("delta must lie in [0, 1]")
    tq, ta = q[m - 1:], qa[m - 1:]
    if (tq > _SUBADDITIVE_MAX).any() or (ta > _SUBADDITIVE_MAX).any():
        raise CertificateError(f"tail from {m} has entries above 1/(2e); combiner does not apply")
    direct = fsum(phi((1 - delta) * tq + delta * ta))
    return direct, 2.0 * (fsum(phi(tq)) + fsum(phi(ta)))


def mixed_lazy_tail_bound(row_q: LazyRow, row_alt: LazyRow, m: int) -> float:
    """Certified bound on sum_{n>=m} phi(p(n)) for any mixture of two countable rows."""
    for r in (row_q, row_alt):
        if not r.finite_mean:
            raise CertificateError(f"{r.name} row has infinite mean")
        # p(n) <= tail(m) for every n >= m
        if r.tail(m) > _SUBADDITIVE_MAX:
            raise CertificateError(f"{r.name} row is not below 1/(2e) from {m} on")
    return 2.0 * (tail_entropy_bound(row_q, m) + tail_entropy_bound(row_alt, m))


@dataclass(frozen=True, eq=False)
class PerturbationSpec:
    """Base process q, alternate q', delta law and the constants D, c1, h.

    ``D`` is the declared uniform bound on D(q'(.|x) || q(.|x)).  When it is
    None the largest materialized row divergence is used and recorded as such.
    """

    base: ProcessSpec
    alt: ProcessSpec
    law: DeltaLaw
    D: float | None = None
    c1: float | None = None
    h: float | None = None

    def __post_init__(self):
        b, a = self.base, self.alt
        if (b.n_states, b.n_symbols, b.start) != (a.n_states, a.n_symbols, a.start):
            raise TreeRateError("base and alternate processes have different state structure")


def _row_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log2(p / q), 0.0)
    return np.maximum(t.sum(axis=-1), 0.0)


def _levels(spec: PerturbationSpec, N: int) -> range:
    return range(1) if (spec.base.stationary and spec.alt.stationary) else range(N)


def verify_divergence_bound(spec: PerturbationSpec, N: int) -> tuple[float, str]:
    """Check D(q'||q) per materialized row against the declared bound.

    Returns (bound in force, its source).  Rows of q' leaving the support of
    q, or rows at or above a declared bound, raise with the (level, state).
    """
    worst = 0.0
    for k in _levels(spec, N):
        q = spec.base.check_rows(k)
        qa = spec.alt.check_rows(k)
        alive = q.sum(axis=1) > 0
        leak = ((qa > 0) & (q <= 0)).any(axis=1) & alive
        if leak.any():
            s = int(np.nonzero(leak)[0][0])
            raise InvariantViolation(f"alternate row leaves the base support at level {k}, state {s}")
        d = np.where(alive, _row_kl(qa, q), 0.0)
        if spec.D is not None and (d >= spec.D).any():
            s = int(np.argmax(d))
            raise InvariantViolation(f"D(q'||q) = {d[s]!r} at level {k}, state {s} is not below {spec.D!r}")
        worst = max(worst, float(d.max()))
    if spec.D is not None:
        return float(spec.D), "declared"
    return worst, "materialized max"


def _min_length(spec: PerturbationSpec, N: int) -> float:
    if spec.c1 is not None:
        return float(spec.c1)
    return float(min(np.min(spec.base.lengths(k)) for k in _levels(spec, N)))


@dataclass
class PerturbedRate:
    sequence: RateSequence
    realization: Realization
    D_bound: float
    D_source: str
    c1: float
    h: float
    convexity_max: float  # max over rows of D_{p,q} - delta * D_{q',q}
    chain_rhs: np.ndarray  # D/(c1 n) * sum_{k<=n} delta_k

    @property
    def chain_lhs(self) -> np.ndarray:
        return self.sequence.D / self.sequence.ell_P

    @property
    def rate(self) -> np.ndarray:
        return self.sequence.rate_P

    @property
    def error(self) -> np.ndarray:
        return np.abs(self.rate - self.h)


def _convexity_excess(spec: PerturbationSpec, deltas: np.ndarray) -> float:
    """max of D(p||q) - delta D(q'||q) over rows; must be <= 0."""
    worst = -math.inf
    if spec.base.stationary and spec.alt.stationary:
        q = spec.base.rows_at(0)
        qa = spec.alt.rows_at(0)
        alive = q.sum(axis=1) > 0
        dqq = _row_kl(qa, q)
        for d in np.unique(deltas):
            p = (1 - d) * q + d * qa
            ex = np.where(alive, _row_kl(p, q) - d * dqq, -math.inf)
            worst = max(worst, float(ex.max()))
        return worst
    for k, d in enumerate(deltas):
        q = spec.base.rows_at(k)
        qa = spec.alt.rows_at(k)
        alive = q.sum(axis=1) > 0
        ex = np.where(alive, _row_kl((1 - d) * q + d * qa, q) - d * _row_kl(qa, q), -math.inf)
        worst = max(worst, float(ex.max()))
    return worst


def perturbed_rate(spec: PerturbationSpec, N: int, realization: Realization) -> PerturbedRate:
    """Exact rates of the mixed process against the base, with runtime checks.

    Raises :class:`InvariantViolation` if the row convexity step or the
    chain D_n / ell(P_n) <= D/(c1 n) sum delta_k fails anywhere.
    """
    deltas = realization.deltas[:N]
    if deltas.size < N:
        raise TreeRateError("realization is shorter than N")
    D, src = verify_divergence_bound(spec, N)
    c1 = _min_length(spec, N)
    if not c1 > 0:
        raise TreeRateError("lengths must be bounded below by a positive c1")
    mixed = mixture(spec.base, spec.alt, deltas)
    seq = rate_sequence(mixed, spec.base, N, h=spec.h)
    h = spec.h
    if h is None:
        if seq.meta.get("h_source") != "constant H_q/ell":
            raise TreeRateError("limit h must be declared unless H_q/ell is constant")
        h = seq.meta["h"]
    excess = _convexity_excess(spec, deltas)
    if excess > CHECK_SLACK:
        raise InvariantViolation(f"row convexity fails by {excess!r}")
    rhs = D / (c1 * seq.n) * realization.cumulative[:N]
    lhs = seq.D / seq.ell_P
    bad = np.nonzero(lhs > rhs + CHECK_SLACK * (1 + rhs))[0]
    if bad.size:
        i = int(bad[0])
        raise InvariantViolation(f"divergence chain fails at n={i + 1}: {lhs[i]!r} > {rhs[i]!r}")
    if not seq.monotone_kl():
        i = int(np.nonzero(np.diff(seq.D) < 0)[0][0])
        raise InvariantViolation(f"D(P_n||Q_n) decreases at n={i + 2}")
    return PerturbedRate(seq, realization, D, src, c1, float(h), excess, rhs)


@dataclass
class MonteCarloReport:
    law: dict
    hypothesis_vanishing_mean: bool | None
    h: float
    N: int
    seed: int
    trials: list  # PerturbedRate per trial, in trial order
    tolerance: float

    @property
    def terminal_rates(self) -> np.ndarray:
        return np.array([t.rate[-1] for t in self.trials])

    def errors_at(self, n: int) -> np.ndarray:
        return np.array([t.error[n - 1] for t in self.trials])

    def mean_error(self, n: int) -> float:
        return float(np.mean(self.errors_at(n)))

    def quantiles(self, n: int, qs=(0.05, 0.5, 0.95)) -> dict:
        e = self.errors_at(n)
        return {f"q{int(round(100 * q)):02d}": float(np.quantile(e, q)) for q in qs}

    def fraction_within(self, n: int | None = None) -> float:
        n = self.N if n is None else n
        return float(np.mean(self.errors_at(n) < self.tolerance * self.h))

    @property
    def hypothesis_flag(self) -> str:
        v = self.hypothesis_vanishing_mean
        return "ok" if v else ("violated" if v is False else "unknown")

    def summary(self) -> dict:
        return {
            "law": self.law,
            "hypothesis": self.hypothesis_flag,
            "h": self.h,
            "N": self.N,
            "seed": self.seed,
            "trials": len(self.trials),
            "mean_error": self.mean_error(self.N),
            **self.quantiles(self.N),
            "fraction_within": self.fraction_within(),
            "tolerance": self.tolerance,
        }


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise TreeRateError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def randper_monte_carlo(
    spec: PerturbationSpec,
    N: int,
    trials: int,
    seed: int,
    *,
    tolerance: float = 0.05,
    workers: int | None = None,
) -> MonteCarloReport:
    """Independent realizations from spawned seeds; results kept in trial order."""
    if trials < 1:
        raise TreeRateError("need at least one trial")
    children = np.random.SeedSequence(seed).spawn(trials)

    def one(i):
        return perturbed_rate(spec, N, sample_deltas(spec.law, N, children[i]))

    workers = thread_count() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, range(trials)))
    else:
        results = [one(i) for i in range(trials)]
    return MonteCarloReport(
        spec.law.describe(), spec.law.mean_vanishes, results[0].h, N, seed, results, tolerance
    )
