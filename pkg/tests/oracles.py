"""Slow reference implementations on plain dicts, sharing no code with treerate."""
import math


class NaiveTree:
    def __init__(self, edges, root):
        self.root = root
        self.kids = {}
        self.parent = {}
        for p, c in edges:
            self.kids.setdefault(p, []).append(c)
            self.parent[c] = p
        self.nodes = [root] + [c for _, c in edges]

    def is_leaf(self, x):
        return not self.kids.get(x)

    def leaves(self):
        return [x for x in self.nodes if self.is_leaf(x)]

    def interior(self):
        return [x for x in self.nodes if not self.is_leaf(x)]

    def path(self, x):
        out = [x]
        while out[-1] != self.root:
            out.append(self.parent[out[-1]])
        return out[::-1]

    def dist(self, x, ell):
        return sum(ell[y] for y in self.path(x)[:-1])

    def cone_leaves(self, x):
        if self.is_leaf(x):
            return [x]
        return [v for y in self.kids[x] for v in self.cone_leaves(y)]


def from_tree(tree):
    return NaiveTree(tree.edges(), tree.labels[0])


def entropy(ps):
    return -sum(p * math.log2(p) for p in ps if p > 0)


def kl(ps, qs):
    return sum(p * math.log2(p / q) for p, q in zip(ps, qs) if p > 0)


def leaf_law_from_rows(nt, rows):
    """rows: {x: {y: p(y|x)}} -> {leaf: product along the geodesic}."""
    out = {}
    for v in nt.leaves():
        path = nt.path(v)
        out[v] = math.prod(rows[a][b] for a, b in zip(path, path[1:]))
    return out


def cone_mass(nt, P, x):
    return sum(P[v] for v in nt.cone_leaves(x))


def expected_length(nt, P, ell):
    return sum(P[v] * nt.dist(v, ell) for v in nt.leaves())


def lansit_lhs(nt, P, ell, f):
    return sum(P[v] * (f[v] - f[nt.root]) for v in nt.leaves()) / expected_length(nt, P, ell)


def lansit_rhs(nt, P, ell, f):
    lp = expected_length(nt, P, ell)
    total = 0.0
    for x in nt.interior():
        m = cone_mass(nt, P, x)
        if m == 0:
            continue
        lap = sum(cone_mass(nt, P, y) / m * (f[y] - f[x]) / ell[x] for y in nt.kids[x])
        total += ell[x] * m / lp * lap
    return total


def local_entropy_average(nt, P, ell):
    lp = expected_length(nt, P, ell)
    total = 0.0
    for x in nt.interior():
        m = cone_mass(nt, P, x)
        if m == 0:
            continue
        row = [cone_mass(nt, P, y) / m for y in nt.kids[x]]
        total += m / lp * entropy(row)
    return total
