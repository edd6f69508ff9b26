import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from treerate.bounds import indisp_tree
from treerate.errors import NormalizationError, TreeError
from treerate.generators import complete, random_lengths, random_leaf_law, random_tree, star
from treerate.measures import (
    ForwardKernel,
    LeafDistribution,
    expected_length,
    expected_length_interior,
    finite_row,
    geometric_row,
    kernel_to_leaf,
    leaf_to_kernel,
    node_average,
    section_distribution,
    unit_expected_length,
    zeta_row,
)
from treerate.tree import LengthFunction, validate_cross_section


def uniform_kernel(t):
    prob = np.full(t.n_nodes, np.nan)
    prob[1:] = 1.0 / t.degree[t.parent[1:]]
    return ForwardKernel(t, prob)


def test_star_uniform_row():
    t = star(5)
    P = kernel_to_leaf(t, uniform_kernel(t))
    assert np.allclose(P.leaf_mass, 0.2)


def test_binary_height2_quarters():
    t = complete(2, 2)
    assert np.allclose(kernel_to_leaf(t, uniform_kernel(t)).leaf_mass, 0.25)


def test_indisp_branch_masses():
    theta, d1, d2, n = 0.25, 2, 3, 3
    t, P, Q = indisp_tree(theta, d1, d2, n)
    first = P.leaf_mass[: d1**n]
    assert np.allclose(first, theta / d1**n, rtol=0, atol=1e-15)
    assert unit_expected_length(t, P) == pytest.approx(n + 1, abs=1e-12)


def test_leaf_law_validation():
    t = star(3)
    with pytest.raises(NormalizationError):
        LeafDistribution.from_leaf_masses(t, [0.5, 0.5, 0.5])
    with pytest.raises(NormalizationError):
        LeafDistribution.from_leaf_masses(t, [1.5, -0.5, 0.0])
    with pytest.raises(TreeError):
        LeafDistribution.from_leaf_masses(t, {"0": 1.0})


def test_kernel_row_validation():
    t = star(2)
    with pytest.raises(NormalizationError):
        ForwardKernel(t, np.array([np.nan, 0.3, 0.3]))


def test_degenerate_law_gives_deterministic_kernel():
    t = complete(2, 3)
    masses = np.zeros(t.leaves.size)
    masses[5] = 1.0
    P = LeafDistribution.from_leaf_masses(t, masses)
    k = leaf_to_kernel(t, P)
    v = int(t.leaves[5])
    path = t.path(v)
    for a, b in zip(path, path[1:]):
        assert k.prob[b] == 1.0
        assert k.supported[a]
    # rows off the path under zero mass are undetermined
    assert k.unsupported.size > 0


def test_round_trip_on_supported_nodes(rng):
    t = complete(2, 3)
    P = random_leaf_law(rng, t, zero_prob=0.3)
    k = leaf_to_kernel(t, P)
    back = kernel_to_leaf(t, k)
    assert np.allclose(back.leaf_mass, P.leaf_mass, rtol=0, atol=1e-12)


def test_products_reproduce_dirichlet_law(rng):
    t = complete(2, 3)
    P = random_leaf_law(rng, t)
    k = leaf_to_kernel(t, P)
    nt = oracles.from_tree(t)
    rows = {t.labels[x]: {t.labels[y]: k.prob[y] for y in t.children(x)} for x in t.interior}
    ref = oracles.leaf_law_from_rows(nt, rows)
    for i, v in enumerate(t.leaves):
        assert abs(ref[t.labels[v]] - P.leaf_mass[i]) <= 1e-12


def test_from_rows_matches_oracle():
    t_edges = [("o", "a"), ("o", "b"), ("a", "c"), ("a", "d"), ("a", "e")]
    from treerate.tree import Tree

    t = Tree.from_edges(t_edges)
    rows = {"o": {"a": 0.3, "b": 0.7}, "a": {"c": 0.2, "d": 0.5, "e": 0.3}}
    P = kernel_to_leaf(t, ForwardKernel.from_rows(t, rows))
    ref = oracles.leaf_law_from_rows(oracles.NaiveTree(t_edges, "o"), rows)
    assert P.mass("d") == pytest.approx(ref["d"], abs=1e-15)
    assert P.mass("a") == pytest.approx(0.3, abs=1e-15)


def test_section_distributions():
    t = complete(3, 2)
    rowvals = [0.5, 0.3, 0.2]
    prob = np.full(t.n_nodes, np.nan)
    prob[1:] = np.tile(rowvals, t.interior.size)
    P = kernel_to_leaf(t, ForwardKernel(t, prob))
    assert np.allclose(section_distribution(t, P, validate_cross_section(t, t.leaves)), P.leaf_mass)
    assert section_distribution(t, P, validate_cross_section(t, [0])).tolist() == [1.0]
    lvl1 = section_distribution(t, P, t.level_section(1))
    assert np.allclose(lvl1, rowvals)


def test_expected_length_constant_depth():
    t = complete(2, 4)
    P = kernel_to_leaf(t, uniform_kernel(t))
    assert expected_length(t, P, LengthFunction.unit(t)) == pytest.approx(4.0, abs=1e-14)


def test_node_average_star_and_normalization():
    t = star(3)
    P = kernel_to_leaf(t, uniform_kernel(t))
    mu = node_average(t, P, LengthFunction.unit(t))
    assert mu.mass[0] == 1.0
    t = complete(2, 2)
    P = kernel_to_leaf(t, uniform_kernel(t))
    mu = node_average(t, P, LengthFunction.unit(t))
    assert math.fsum(mu.mass) == pytest.approx(1.0, abs=1e-12)
    assert mu.mass[0] == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_measure_properties(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, int(rng.integers(3, 600)))
    P = random_leaf_law(rng, t, zero_prob=0.3)
    ell = random_lengths(rng, t)
    # boundary sum against interior sum
    a, b = expected_length(t, P, ell), expected_length_interior(t, P, ell)
    assert abs(a - b) <= 1e-12 * max(1.0, a)
    # sum mu / ell = ell_sharp / ell
    mu = node_average(t, P, ell)
    inner = t.interior
    lhs = math.fsum(mu.mass[inner] / ell.values[inner])
    rhs = unit_expected_length(t, P) / a
    assert abs(lhs - rhs) <= 1e-10 * rhs
    assert abs(math.fsum(mu.mass) - 1) <= 1e-12
    # cone masses decrease along edges and sections are normalized
    assert (P.cone[1:] <= P.cone[t.parent[1:]] + 1e-15).all()
    for n in range(min(t.height, 6) + 1):
        assert abs(math.fsum(section_distribution(t, P, t.level_section(n))) - 1) <= 1e-12
    # kernel duality on supported rows
    k = leaf_to_kernel(t, P)
    k2 = leaf_to_kernel(t, kernel_to_leaf(t, k))
    ok = ~np.isnan(k.prob)
    assert np.allclose(k.prob[ok], k2.prob[ok], rtol=0, atol=1e-12)


def test_lazy_rows_closed_forms():
    g = geometric_row(0.5)
    n = np.arange(1, 200, dtype=float)
    assert g.tail(5) == pytest.approx(math.fsum(g.pmf(np.arange(5, 400, dtype=float))), abs=1e-15)
    assert g.mean_tail(3) == pytest.approx(math.fsum(n[2:] * g.pmf(n[2:])), rel=1e-12)
    assert all(g.tail(k) >= g.tail(k + 1) for k in range(1, 30))
    z = zeta_row(2.0)
    assert not z.finite_mean
    z3 = zeta_row(3.0)
    m = np.arange(4, 2_000_000, dtype=float)
    assert z3.tail(4) == pytest.approx(math.fsum(z3.pmf(m)), rel=1e-5)
    f = finite_row([0.5, 0.25, 0.25])
    assert f.tail(2) == 0.5 and f.mean_tail(3) == 0.75
