"""Independent reference implementations used only by the tests.

Nothing here imports the refinement engine or the element kernels: the
bisector works on plain tuples of coordinates and the assembler builds dense
matrices from textbook P1 formulas.
"""
from __future__ import annotations

import functools
import math

import numpy as np

from leplume.mesh import MeshGraph, box_mesh

REL = 1e-12


# ----------------------------------------------------------------------
# naive recursive longest-edge bisection


def _precedes(p, q):
    """Edge p (pair of coordinate tuples) comes before q: longer first, then lexicographic."""
    lp = math.dist(*p)
    lq = math.dist(*q)
    if abs(lp - lq) > REL * max(lp, lq):
        return lp > lq
    return tuple(sorted(p)) < tuple(sorted(q))


def _cmp(p, q):
    if p == q:
        return 0
    return -1 if _precedes(p, q) else 1


class NaiveBisector:
    """Recursive Rivara refinement over an explicit list of tets.

    Tets are frozensets of point indices.  To bisect a tet, every tet
    sharing its refinement edge is first refined until that edge is the
    refinement edge of all of them; then they are all split together.
    """

    def __init__(self, points, tets):
        self.points = [tuple(map(float, p)) for p in points]
        self.index = {p: i for i, p in enumerate(self.points)}
        self.tets = {frozenset(int(i) for i in t) for t in tets}

    def ref_edge(self, tet):
        pts = sorted(tet)
        edges = [(pts[i], pts[j]) for i in range(4) for j in range(i + 1, 4)]
        key = functools.cmp_to_key(lambda a, b: _cmp(self._coords(a), self._coords(b)))
        return min(edges, key=key)

    def _coords(self, e):
        return tuple(sorted((self.points[e[0]], self.points[e[1]])))

    def _midpoint(self, e):
        a, b = self.points[e[0]], self.points[e[1]]
        m = tuple((x + y) / 2 for x, y in zip(a, b))
        if m not in self.index:
            self.index[m] = len(self.points)
            self.points.append(m)
        return self.index[m]

    def bisect(self, tet, depth=0):
        if depth > 500:
            raise RecursionError("naive bisection does not terminate")
        e = self.ref_edge(tet)
        while True:
            around = sorted((t for t in self.tets if e[0] in t and e[1] in t), key=sorted)
            bad = [t for t in around if self.ref_edge(t) != e]
            if not bad:
                break
            self.bisect(bad[0], depth + 1)
        m = self._midpoint(e)
        for t in around:
            self.tets.remove(t)
            self.tets.add(t - {e[1]} | {m})
            self.tets.add(t - {e[0]} | {m})

    def refine(self, marked):
        """Bisect each marked tet (given as sets of coordinates) once, if still present."""
        for coords in marked:
            tet = frozenset(self.index[c] for c in coords)
            if tet in self.tets:
                self.bisect(tet)

    def point_set(self):
        used = sorted({i for t in self.tets for i in t})
        return np.array(sorted(self.points[i] for i in used))


def tet_coords(mesh: MeshGraph, t: int) -> frozenset:
    return frozenset(mesh.points[p] for p in mesh.tet(t).points)


# ----------------------------------------------------------------------
# small mesh corpus


def _jittered_box(n, seed, amount=0.12):
    rng = np.random.default_rng(seed)
    base = box_mesh([[0, 1], [0, 1], [0, 1]], n)
    pts = base.points_array()
    h = 1.0 / np.asarray(n, dtype=float)
    pts = pts + rng.uniform(-amount, amount, pts.shape) * h
    return MeshGraph.from_arrays(pts, base.tet_array())


def _randomly_refined_box6(seed, limit=50):
    from leplume.refine import RefinePlan, refine
    rng = np.random.default_rng(seed)
    mesh = box_mesh([[0, 2], [0, 1], [0, 1.5]])
    while True:
        trial = mesh.copy()
        marked = rng.choice(trial.live_tets(), size=min(2, trial.n_tets), replace=False)
        refine(trial, RefinePlan(set(int(t) for t in marked)))
        if trial.n_tets > limit:
            return mesh
        mesh = trial


def corpus():
    """25 small meshes (at most 50 tets), as (name, MeshGraph) pairs."""
    out = [
        ("right-tet", MeshGraph.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])),
        ("long-tet", MeshGraph.from_arrays([[0, 0, 0], [2, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])),
        ("regular-tet", MeshGraph.from_arrays(
            [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], [[0, 1, 2, 3]])),
        ("sliver-ish", MeshGraph.from_arrays(
            [[0, 0, 0], [3, 0.1, 0], [1.4, 1, 0.2], [1.6, 0.4, 0.9]], [[0, 1, 2, 3]])),
        ("box6", box_mesh([[0, 1], [0, 1], [0, 1]])),
        ("box6-flat", box_mesh([[0, 4], [0, 1], [0, 2]])),
        ("box-2x1x1", box_mesh([[0, 2], [0, 1], [0, 1]], (2, 1, 1))),
        ("box-2x2x1", box_mesh([[0, 1], [0, 1], [0, 0.5]], (2, 2, 1))),
        ("box-2x2x2", box_mesh([[0, 1], [0, 1], [0, 1]], (2, 2, 2))),
        ("box-3x2x1", box_mesh([[0, 3], [0, 2], [0, 1]], (3, 2, 1))),
    ]
    for seed in range(5):
        out.append((f"jitter-box6-{seed}", _jittered_box((1, 1, 1), seed, 0.2)))
    for seed in range(4):
        out.append((f"jitter-2x2x2-{seed}", _jittered_box((2, 2, 2), 100 + seed)))
    for seed in range(6):
        out.append((f"random-refined-{seed}", _randomly_refined_box6(200 + seed)))
    assert len(out) == 25
    assert all(m.n_tets <= 50 for _, m in out)
    return out


# ----------------------------------------------------------------------
# dense P1 assembly


def p1_gradients(x):
    """Basis gradients of the linear tet with vertex rows ``x`` (4x3), and its volume."""
    a = np.hstack([np.ones((4, 1)), x])
    coef = np.linalg.inv(a)      # column i holds the coefficients of basis function i
    return coef[1:].T, abs(np.linalg.det(a)) / 6


def tau_reference(x, beta, eps):
    h = x.max(axis=0) - x.min(axis=0)
    adv = abs(beta[0] / h[0] + beta[1] / h[1] + beta[2] / h[2])
    dif = 3 * eps / (h[0] ** 2 + h[1] ** 2 + h[2] ** 2)
    return 0.0 if adv + dif == 0 else 1 / (adv + dif)


def dense_operator(points, tets, beta, eps, c, dt, stabilized=True):
    """Dense ``M + dt/2 B`` with constant ``beta``; plus the dense mass matrix."""
    n = len(points)
    a = np.zeros((n, n))
    mass = np.zeros((n, n))
    beta = np.asarray(beta, dtype=float)
    for cell in tets:
        x = points[cell]
        g, vol = p1_gradients(x)
        m = vol / 20 * (np.ones((4, 4)) + np.eye(4))
        bg = g @ beta
        k = np.outer(np.full(4, vol / 4), bg)          # (beta.grad phi_j, phi_i)
        k += eps * vol * g @ g.T
        k += c * m
        if stabilized:
            k += tau_reference(x, beta, eps) * vol * np.outer(bg, bg)
        a[np.ix_(cell, cell)] += m + dt / 2 * k
        mass[np.ix_(cell, cell)] += m
    return a, mass
