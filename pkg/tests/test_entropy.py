import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from treerate.entropy import (
    C_CONST,
    LN2,
    MAX_PHI,
    binary_entropy,
    entropy,
    entropy_decomposition,
    half_l1_parts,
    kl,
    kl_decomposition,
    lazy_local_entropy,
    local_entropies,
    local_entropy,
    local_gap_bound,
    local_kl,
    phi,
    pinsker_check,
    selection_size,
    tail_entropy_bound,
    variational_distance,
)
from treerate.errors import CertificateError, SupportError, TreeRateError
from treerate.generators import random_lengths, random_leaf_law, random_prob_vector, random_tree, star
from treerate.measures import (
    LeafDistribution,
    expected_length,
    geometric_row,
    leaf_to_kernel,
    zeta_row,
)
from treerate.tree import LengthFunction

probs = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=64).filter(lambda v: sum(v) > 1e-3)


def _norm(v):
    a = np.asarray(v, dtype=float)
    return a / a.sum()


def test_phi_conventions_and_max():
    assert phi(0.0) == 0.0 and phi(1.0) == 0.0
    assert phi(1 / math.e) == pytest.approx(1 / (math.e * LN2), abs=1e-14)
    assert MAX_PHI == pytest.approx(0.5307, abs=1e-4)
    with pytest.raises(TreeRateError):
        phi(-0.1)
    with pytest.raises(TreeRateError):
        phi(1.5)


def test_constant_c():
    assert C_CONST == pytest.approx(2 * math.sqrt(2) / (math.e * math.sqrt(math.log(2))), rel=1e-15)
    assert round(C_CONST, 2) == 1.25


def test_entropy_values():
    assert entropy(np.full(8, 1 / 8)) == pytest.approx(3.0, abs=1e-15)
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.25) == pytest.approx(0.25 * 2 + 0.75 * math.log2(4 / 3), abs=1e-15)


def test_local_entropy_examples():
    t = star(4)
    P = LeafDistribution.from_leaf_masses(t, [1.0, 0, 0, 0])
    assert local_entropy(leaf_to_kernel(t, P), 0) == 0.0
    P = LeafDistribution.from_leaf_masses(t, np.full(4, 0.25))
    assert local_entropies(t, leaf_to_kernel(t, P))[0] == pytest.approx(2.0)


def test_kl_basics_and_support():
    p = np.array([0.2, 0.8])
    assert kl(p, p) == 0.0
    with pytest.raises(SupportError) as e:
        kl([0.5, 0.5], [1.0, 0.0])
    assert e.value.witness == 1
    t = star(2)
    P = LeafDistribution.from_leaf_masses(t, [0.5, 0.5])
    Q = LeafDistribution.from_leaf_masses(t, [1.0, 0.0])
    with pytest.raises(SupportError) as e:
        kl(P, Q)
    assert e.value.witness == t.labels[2]


def test_variational_extremes():
    assert variational_distance([1, 0], [0, 1]) == 2.0
    c = pinsker_check([0.3, 0.7], [0.3, 0.7])
    assert c.l1_squared == 0 and c.bound == 0 and c.holds


@settings(max_examples=300, deadline=None)
@given(probs, st.integers(0, 2**32 - 1))
def test_pinsker_and_half_l1(v, seed):
    p = _norm(v)
    q = random_prob_vector(np.random.default_rng(seed), p.size)
    c = pinsker_check(p, q)
    assert c.l1_squared <= c.bound + 1e-12
    pos, neg, half = half_l1_parts(p, q)
    assert abs(pos - neg) <= 1e-12 and abs(pos - half) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5))
def test_phi_shape_properties(t, u, d):
    # concavity, via midpoints
    assert phi((t + u) / 2) >= (phi(t) + phi(u)) / 2 - 1e-12
    assert phi(t) <= MAX_PHI + 1e-15
    # modulus of continuity
    if t + d <= 1:
        assert abs(phi(t + d) - phi(t)) <= max(phi(d), phi(1 - d)) + 1e-12
        assert max(phi(d), phi(1 - d)) == pytest.approx(phi(d), abs=1e-12) or d == 0.5
    # subadditivity near zero
    s, w = t / (2 * math.e), u / (2 * math.e)
    assert phi(s + w) <= 2 * (phi(s) + phi(w)) + 1e-12


def test_entropy_against_oracle(rng):
    for _ in range(20):
        p = random_prob_vector(rng, 30, zero_prob=0.2)
        q = random_prob_vector(rng, 30)
        assert entropy(p) == pytest.approx(oracles.entropy(p), abs=1e-12)
        assert kl(p, q) == pytest.approx(oracles.kl(p, q), abs=1e-12)


def test_entropy_length_gives_entropy(rng):
    t = random_tree(rng, 400)
    P = random_leaf_law(rng, t)
    hp = local_entropies(t, leaf_to_kernel(t, P))
    ell = LengthFunction.validated(t, "entropy-derived", hp)
    assert expected_length(t, P, ell) == pytest.approx(entropy(P), rel=1e-12)


def test_star_decomposition_exact():
    t = star(3)
    P = LeafDistribution.from_leaf_masses(t, [0.1, 0.6, 0.3])
    ell = LengthFunction.table(t, {"0": 1.7})
    a, b = entropy_decomposition(t, P, ell)
    assert a == pytest.approx(entropy([0.1, 0.6, 0.3]) / 1.7, abs=1e-15)
    assert a == pytest.approx(b, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_decompositions_random(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, int(rng.integers(3, 800)))
    P = random_leaf_law(rng, t, zero_prob=0.3)
    Q = random_leaf_law(rng, t)
    ell = random_lengths(rng, t)
    a, b = entropy_decomposition(t, P, ell)
    assert abs(a - b) <= 1e-10 * (1 + abs(a))
    c, d = kl_decomposition(t, P, Q, ell)
    assert abs(c - d) <= 1e-10 * (1 + abs(c))
    assert c >= 0


def test_local_entropy_average_oracle(rng):
    t = random_tree(rng, 50)
    P = random_leaf_law(rng, t)
    nt = oracles.from_tree(t)
    Pd = {t.labels[v]: m for v, m in zip(t.leaves, P.leaf_mass)}
    ell = LengthFunction.unit(t)
    _, rhs = entropy_decomposition(t, P, ell)
    ed = {t.labels[x]: 1.0 for x in t.interior}
    assert rhs == pytest.approx(oracles.local_entropy_average(nt, Pd, ed), abs=1e-12)


def test_local_kl_matches_rows(rng):
    t = random_tree(rng, 100)
    P, Q = random_leaf_law(rng, t), random_leaf_law(rng, t)
    kp, kq = leaf_to_kernel(t, P), leaf_to_kernel(t, Q)
    assert local_kl(kp, kq, 0) == pytest.approx(oracles.kl(kp.row(0), kq.row(0)), abs=1e-14)


def test_lazy_entropy_brackets_truth():
    row = geometric_row(0.6)
    n = np.arange(1, 1_000_001, dtype=float)
    truth = math.fsum(phi(row.pmf(n)))
    iv = lazy_local_entropy(row, 30)
    assert iv.lo <= truth <= iv.hi
    with pytest.raises(CertificateError):
        lazy_local_entropy(zeta_row(2.0), 30)
    z = zeta_row(3.0)
    iv = lazy_local_entropy(z, 50)
    truth = math.fsum(phi(z.pmf(n)))
    assert iv.lo <= truth <= iv.hi


def test_tail_bound_closed_form():
    row = geometric_row(0.5)
    m = 7
    n = np.arange(m, 5000, dtype=float)
    direct = math.fsum(n * (2.0**-n + row.pmf(n)))
    assert tail_entropy_bound(row, m) == pytest.approx(direct, rel=1e-12)


def test_local_gap_bound_examples():
    p = [0.5, 0.5]
    gap, bound = local_gap_bound(p, p, 0.0, 0.25)
    assert gap == 0 and bound > 0
    gap, bound = local_gap_bound([0.9, 0.1], [0.6, 0.4], 0.0, 0.5)
    assert bound == pytest.approx(2 * 0.5 + 2 * MAX_PHI / 0.5 * 0.6)
    with pytest.raises(TreeRateError):
        local_gap_bound(p, p, 0.0, 0.6)


def test_local_gap_bound_random(rng):
    for _ in range(1000):
        k = int(rng.integers(2, 30))
        p, q = random_prob_vector(rng, k, 0.2), random_prob_vector(rng, k, 0.2)
        eps = float(rng.choice([0.0, 0.01, 0.1]))
        gap, bound = local_gap_bound(p, q, eps, float(rng.uniform(1e-3, 0.5)))
        assert gap <= bound + 1e-12


def test_selection_size():
    p = np.array([0.7, 0.2, 0.05, 0.05])
    assert selection_size(p, p, 0.0) == 4
    m = selection_size(p, p, 0.5)
    order = np.argsort(-phi(p))
    assert math.fsum(phi(p[order[m:]])) < 0.5
    assert math.fsum(phi(p[order[m - 1:]])) >= 0.5
