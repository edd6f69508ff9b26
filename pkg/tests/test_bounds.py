
import numpy as np
import pytest

from treerate.bounds import (
    EPS_GRID,
    DELTA_GRID,
    QTypeError,
    TightnessCertificate,
    boeam_bound,
    certify_tightness,
    compare_bound,
    entropy_length_bound,
    indisp_example,
    indisp_tree,
    q_type_partition,
    section_variant_bound,
)
from treerate.entropy import binary_entropy, entropy, kl
from treerate.errors import CertificateError, GuardError, TreeRateError
from treerate.generators import complete, random_lengths, random_leaf_law, random_tree, star
from treerate.measures import (
    ForwardKernel,
    LeafDistribution,
    geometric_row,
    kernel_to_leaf,
    leaf_to_kernel,
    zeta_row,
)
from treerate.tree import LengthFunction, Tree, validate_cross_section


def row_kernel(t, row):
    prob = np.full(t.n_nodes, np.nan)
    prob[1:] = np.tile(row, t.interior.size)
    return ForwardKernel(t, prob)


def test_certificates():
    t = random_tree(np.random.default_rng(0), 200, max_degree=6)
    P = random_leaf_law(np.random.default_rng(1), t)
    c = certify_tightness(leaf_to_kernel(t, P))
    assert c.mode == "finite-tree" and c.max_degree == t.degree.max()
    geo = geometric_row(0.5)
    c = certify_tightness([geometric_row(0.4), [0.5, 0.3, 0.2]], "dominated", geo)
    m_eps, cutoff = c.select(0.01)
    assert m_eps == cutoff - 1
    from treerate.entropy import tail_entropy_bound

    assert tail_entropy_bound(geo, cutoff) < 0.01 <= tail_entropy_bound(geo, cutoff - 1)
    with pytest.raises(CertificateError):
        certify_tightness([[0.5, 0.5]], "dominated", zeta_row(2.0))
    with pytest.raises(CertificateError):
        certify_tightness([geometric_row(0.9)], "dominated", geo)


def test_comparability_check():
    t = star(2)
    P = LeafDistribution.from_leaf_masses(t, [0.5, 0.5])
    Q = LeafDistribution.from_leaf_masses(t, [0.9, 0.1])
    certify_tightness(leaf_to_kernel(t, P), comparability=5.0, P=P, Q=Q)
    with pytest.raises(CertificateError):
        certify_tightness(leaf_to_kernel(t, P), comparability=2.0, P=P, Q=Q)


def test_q_types():
    t = complete(3, 2)
    assert q_type_partition(row_kernel(t, [1 / 3] * 3)).single_type
    two = Tree.from_edges([("o", "a"), ("o", "b"), ("a", "c"), ("a", "d"), ("a", "e")])
    k = ForwardKernel.from_rows(two, {"o": {"a": 0.5, "b": 0.5}, "a": {"c": 0.5, "d": 0.3, "e": 0.2}})
    assert len(q_type_partition(k).types) == 2
    perm = Tree.from_edges([("o", "a"), ("o", "b"), ("o", "c"), ("a", "d"), ("a", "e"), ("a", "f")])
    k = ForwardKernel.from_rows(perm, {"o": {"a": 0.2, "b": 0.3, "c": 0.5}, "a": {"d": 0.5, "e": 0.2, "f": 0.3}})
    assert q_type_partition(k).single_type


def test_p_equals_q():
    rng = np.random.default_rng(2)
    t = random_tree(rng, 300)
    P = random_leaf_law(rng, t)
    rep = compare_bound(t, P, P, random_lengths(rng, t))
    assert rep.lhs == 0 and rep.term2 == 0 and rep.term3 == 0 and rep.holds


def test_constant_type_unit_length_matches_boeam():
    t = complete(3, 3)
    q = [0.5, 0.3, 0.2]
    rng = np.random.default_rng(3)
    P = random_leaf_law(rng, t)
    Q = kernel_to_leaf(t, row_kernel(t, q))
    rep = compare_bound(t, P, Q, LengthFunction.unit(t), 0.0, 0.1)
    b = boeam_bound(t, P, q, 0.1, 0.0)
    assert rep.A == rep.a and rep.term3 == 0.0
    assert b.rhs == pytest.approx(rep.rhs, rel=1e-14)
    assert b.extras["lhs_single_type"] == pytest.approx(rep.lhs, abs=1e-12)
    assert b.holds
    assert rep.H_Q / rep.ell_Q == pytest.approx(entropy(q), abs=1e-12)


def test_boeam_rejects_mixed_types():
    t = Tree.from_edges([("o", "a"), ("o", "b"), ("a", "c"), ("a", "d"), ("a", "e")])
    k = ForwardKernel.from_rows(t, {"o": {"a": 0.5, "b": 0.5}, "a": {"c": 0.5, "d": 0.3, "e": 0.2}})
    P = kernel_to_leaf(t, k)
    with pytest.raises(QTypeError):
        boeam_bound(t, P, k)


def test_boeam_perturbation_limit():
    t = complete(2, 6)
    q = np.array([0.7, 0.3])
    lhs = []
    for k in range(1, 8):
        s = 2.0**-k
        P = kernel_to_leaf(t, row_kernel(t, (1 - s) * q + s * np.array([0.2, 0.8])))
        rep = boeam_bound(t, P, q, 0.1)
        assert rep.holds
        lhs.append(rep.lhs)
    assert all(a > b for a, b in zip(lhs, lhs[1:]))
    assert lhs[-1] < 1e-2


def test_boeam_random_ternary():
    t = complete(3, 3)
    rng = np.random.default_rng(4)
    for _ in range(20):
        P = random_leaf_law(rng, t)
        assert boeam_bound(t, P, [1 / 3] * 3, float(rng.choice(DELTA_GRID))).holds


def test_entropy_length_bound():
    rng = np.random.default_rng(5)
    t = random_tree(rng, 300)
    Q = random_leaf_law(rng, t)
    kq = leaf_to_kernel(t, Q)
    rep = entropy_length_bound(t, Q, kq)
    assert rep.lhs == pytest.approx(0.0, abs=1e-12) and rep.term3 <= 1e-12
    for _ in range(20):
        P = random_leaf_law(rng, t)
        assert entropy_length_bound(t, P, kq, 0.25).holds
    det = star(2)
    k = ForwardKernel(det, np.array([np.nan, 1.0, 0.0]))
    with pytest.raises(TreeRateError):
        entropy_length_bound(det, kernel_to_leaf(det, k), k)


def test_entropy_length_needs_the_L_factor():
    # low-entropy q rows make L > 1; the L-free form then fails
    t = star(2)
    kq = ForwardKernel(t, np.array([np.nan, 0.999, 0.001]))
    P = LeafDistribution.from_leaf_masses(t, [0.99, 0.01])
    rep = entropy_length_bound(t, P, kq, 0.49)
    assert rep.holds
    assert not rep.extras["holds_without_L"]
    assert rep.L > 1


def test_section_variant_root_consistent():
    rng = np.random.default_rng(6)
    t = random_tree(rng, 300)
    P, Q = random_leaf_law(rng, t), random_leaf_law(rng, t)
    ell = random_lengths(rng, t)
    base = compare_bound(t, P, Q, ell)
    var = section_variant_bound(t, P, Q, ell, validate_cross_section(t, [0]))
    # S = {o}: nothing inside T^S, so term3 keeps only the outside spread
    assert var.extras["section_share"] == 0.0
    assert var.extras["A_star"] == base.A and var.extras["a_star"] == base.a
    assert var.rhs == pytest.approx(base.rhs, rel=1e-14)


def test_section_variant_constant_outside():
    theta, d1, d2, n = 0.25, 2, 4, 4
    t, P, Q = indisp_tree(theta, d1, d2, n)
    S = t.level_section(1)
    ell = LengthFunction.unit(t)
    rep = section_variant_bound(t, P, Q, ell, S)
    assert rep.holds
    # outside T^S both branch rows are uniform: H_q/ell is log d1 or log d2
    assert rep.extras["A_star"] == pytest.approx(2.0) and rep.extras["a_star"] == pytest.approx(1.0)
    assert rep.extras["section_share"] == pytest.approx(1 / (n + 1))


def test_sum_pieces_inside_terms():
    rng = np.random.default_rng(7)
    for _ in range(50):
        t = random_tree(rng, int(rng.integers(3, 400)))
        P, Q = random_leaf_law(rng, t, 0.2), random_leaf_law(rng, t)
        rep = compare_bound(t, P, Q, random_lengths(rng, t), float(rng.choice(EPS_GRID)),
                            float(rng.choice(DELTA_GRID)))
        assert rep.sum_I <= rep.term1 + rep.term2 + 1e-12
        assert abs(rep.sum_II) <= rep.term3 + 1e-12
        assert rep.lhs <= rep.sum_I + abs(rep.sum_II) + 1e-12
        assert rep.holds and all(s["holds"] for s in rep.sweep)


def test_indisp_closed_forms_match_tree():
    theta, d1, d2 = 0.25, 2, 4
    for n in range(1, 6):
        t, P, Q = indisp_tree(theta, d1, d2, n)
        ex = indisp_example(theta, d1, d2, n)
        assert entropy(P) == pytest.approx(ex["H_P"], abs=1e-10)
        assert kl(P, Q) == pytest.approx(1 - binary_entropy(theta), abs=1e-10)
        assert ex["ell_sharp"] == n + 1


def test_indisp_degenerate_cases():
    ex = indisp_example(0.5, 2, 4, 5)
    assert ex["D"] == 0 and ex["gap_limit"] == 0
    ex = indisp_example(0.3, 3, 3, 5)
    assert ex["gap_limit"] == 0


def test_indisp_term3_indispensable():
    ex = indisp_example(0.25, 2, 16, 10**12)
    assert ex["gap_limit"] > 10 * ex["best_term12"]


def test_indisp_guard():
    with pytest.raises(GuardError):
        indisp_tree(0.25, 2, 40, 6)


def test_dominated_certificate_rejects_eps_zero():
    t = star(3)
    P = LeafDistribution.from_leaf_masses(t, [0.5, 0.3, 0.2])
    cert = TightnessCertificate("dominated", dominating=geometric_row(0.5))
    with pytest.raises(CertificateError):
        compare_bound(t, P, P, LengthFunction.unit(t), 0.0, 0.1, cert)
    rep = compare_bound(t, P, P, LengthFunction.unit(t), 0.1, 0.1, cert)
    assert rep.holds
