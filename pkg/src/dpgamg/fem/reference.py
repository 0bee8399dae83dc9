"""Reference-element bases: Lagrange (P_p / Q_p) and Raviart-Thomas.

Reference triangle: (0,0), (1,0), (0,1).  Reference square: [0,1]^2.
Local edge ``l`` runs from local vertex ``l`` to ``l+1`` (cyclically), so the
outward normal is the tangent rotated clockwise.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .quadrature import element_rule, line_rule, shifted_legendre, shifted_legendre_deriv

REF_VERTS = {
    "tri": np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    "quad": np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
}

MAX_LAGRANGE = 5
MAX_RT = 4


def ref_edges(kind):
    """(start, end, outward unit normal, length) for every local edge."""
    v = REF_VERTS[kind]
    out = []
    for l in range(len(v)):
        a, b = v[l], v[(l + 1) % len(v)]
        t = b - a
        length = float(np.hypot(*t))
        out.append((a, b, np.array([t[1], -t[0]]) / length, length))
    return out


def _exponents(kind, deg_x, deg_y=None, total=None):
    deg_y = deg_x if deg_y is None else deg_y
    ex = [(a, b) for b in range(deg_y + 1) for a in range(deg_x + 1)]
    if total is not None:
        ex = [(a, b) for a, b in ex if a + b <= total]
    return ex


class _PolySet:
    """Products L_a(x) L_b(y) of shifted Legendre polynomials, optionally times x or y.

    Terms are ``(a, b, mult)`` with ``mult`` in {0: 1, 1: x, 2: y}.
    """

    def __init__(self, terms):
        self.terms = [(int(a), int(b), int(m)) for a, b, m in terms]
        self.deg = max([max(a, b) for a, b, _ in self.terms] + [0])

    def __len__(self):
        return len(self.terms)

    def _tab(self, pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[:, 0], pts[:, 1]
        Lx, Ly = shifted_legendre(self.deg, x), shifted_legendre(self.deg, y)
        dLx, dLy = shifted_legendre_deriv(self.deg, x), shifted_legendre_deriv(self.deg, y)
        a = np.array([t[0] for t in self.terms])
        b = np.array([t[1] for t in self.terms])
        m = np.array([t[2] for t in self.terms])
        base = Lx[:, a] * Ly[:, b]
        bx = dLx[:, a] * Ly[:, b]
        by = Lx[:, a] * dLy[:, b]
        mult = np.where(m == 1, x[:, None], np.where(m == 2, y[:, None], 1.0))
        val = base * mult
        gx = bx * mult + np.where(m == 1, base, 0.0)
        gy = by * mult + np.where(m == 2, base, 0.0)
        return val, np.stack([gx, gy], axis=-1)

    def values(self, pts):
        return self._tab(pts)[0]

    def grads(self, pts):
        return self._tab(pts)[1]


class LagrangeElement:
    """Nodal P_p (triangle) or Q_p (square) element with equispaced nodes.

    Local node order: vertices, then edge-interior nodes edge by edge in the
    local edge direction, then element-interior nodes.
    """

    def __init__(self, kind: str, degree: int):
        if not 1 <= degree <= MAX_LAGRANGE:
            raise ValueError(f"Lagrange degree {degree} not supported")
        self.kind, self.degree = kind, degree
        p = degree
        verts = REF_VERTS[kind]
        nodes = [tuple(v) for v in verts]
        self.edge_nodes = []
        for a, b, _, _ in ref_edges(kind):
            start = len(nodes)
            nodes += [tuple(a + (b - a) * m / p) for m in range(1, p)]
            self.edge_nodes.append(np.arange(start, len(nodes)))
        if kind == "tri":
            inner = [(i / p, j / p) for j in range(1, p) for i in range(1, p - j)]
            span = _exponents(kind, p, total=p)
        else:
            inner = [(i / p, j / p) for j in range(1, p) for i in range(1, p)]
            span = _exponents(kind, p)
        nodes += inner
        self.nodes = np.array(nodes)
        self.nverts = len(verts)
        self.n_edge_interior = p - 1
        self.n_interior = len(inner)
        self.ndofs = len(nodes)
        self._poly = _PolySet([(a, b, 0) for a, b in span])
        self._coef = np.linalg.inv(self._poly.values(self.nodes))
        nv = self.nverts
        # all local nodes lying on closed edge l
        self.closed_edge_nodes = [
            np.concatenate([[l, (l + 1) % nv], self.edge_nodes[l]]) for l in range(nv)
        ]
        self.interior_nodes = np.arange(self.ndofs - self.n_interior, self.ndofs)

    def values(self, pts):
        return self._poly.values(pts) @ self._coef

    def grads(self, pts):
        return np.einsum("qmd,mj->qjd", self._poly.grads(pts), self._coef)


class RaviartThomasElement:
    """RT_k on the reference triangle or square, dual to moment DOFs.

    Edge DOFs: int_e sigma.n L_j(s) ds (L_j shifted Legendre, s along the local
    edge direction); interior DOFs: moments against Legendre-product test fields.
    """

    def __init__(self, kind: str, k: int):
        if not 0 <= k <= MAX_RT:
            raise ValueError(f"Raviart-Thomas index {k} not supported")
        self.kind, self.k = kind, k
        # spanning fields as (x-component terms, y-component terms)
        if kind == "tri":
            fields = []
            for a, b in _exponents(kind, k, total=k):
                fields += [([(a, b, 0)], []), ([], [(a, b, 0)])]
            for a in range(k + 1):
                fields.append(([(a, k - a, 1)], [(a, k - a, 2)]))
            tests = []
            if k > 0:
                for a, b in _exponents(kind, k - 1, total=k - 1):
                    tests += [([(a, b, 0)], []), ([], [(a, b, 0)])]
        else:
            fields = [([(a, b, 0)], []) for a, b in _exponents(kind, k + 1, k)]
            fields += [([], [(a, b, 0)]) for a, b in _exponents(kind, k, k + 1)]
            tests = []
            if k > 0:
                tests = [([(a, b, 0)], []) for a, b in _exponents(kind, k - 1, k)]
                tests += [([], [(a, b, 0)]) for a, b in _exponents(kind, k, k - 1)]
        self.nedges = len(REF_VERTS[kind])
        self.n_edge_dofs = self.nedges * (k + 1)
        self.n_interior = len(tests)
        self.ndofs = len(fields)
        assert self.ndofs == self.n_edge_dofs + self.n_interior
        self._span = _FieldSet(fields)
        self._tests = _FieldSet(tests) if tests else None
        vander = self.dofs_of_values(lambda pts: self._span.tabulate(pts)[0])
        self._coef = np.linalg.inv(vander)

    def edge_dof_weights(self):
        """Per local edge: (points on the reference edge, outward normal, weights (nq, k+1))."""
        s, w = line_rule(2 * self.k + 4)
        out = []
        for a, b, n, length in ref_edges(self.kind):
            pts = a + s[:, None] * (b - a)
            out.append((pts, n, (w * length)[:, None] * shifted_legendre(self.k, s)))
        return out

    def interior_dof_weights(self):
        """Quadrature points and weighted test fields, shape (nq, ntest, 2)."""
        pts, w = element_rule(self.kind, 2 * self.k + 4)
        psi = self._tests.tabulate(pts)[0]
        return pts, psi * w[:, None, None]

    def dofs_of_values(self, func):
        """Apply every DOF functional to fields given by ``func(pts) -> (nq, nf, 2)``."""
        rows = []
        for pts, n, lw in self.edge_dof_weights():
            rows.append(lw.T @ (func(pts) @ n))
        if self.n_interior:
            pts, psi = self.interior_dof_weights()
            rows.append(np.einsum("qtc,qnc->tn", psi, func(pts)))
        return np.vstack(rows)

    def values(self, pts):
        """Basis values, shape (nq, ndofs, 2)."""
        return np.einsum("qnc,nj->qjc", self._span.tabulate(pts)[0], self._coef)

    def divergence(self, pts):
        return self._span.tabulate(pts)[1] @ self._coef


class _FieldSet:
    """Vector fields whose components are sums of _PolySet terms."""

    def __init__(self, fields):
        terms = sorted({t for f in fields for comp in f for t in comp})
        self._poly = _PolySet(terms)
        index = {t: i for i, t in enumerate(terms)}
        self._coef = np.zeros((len(fields), 2, len(terms)))
        for n, comps in enumerate(fields):
            for c, comp in enumerate(comps):
                for t in comp:
                    self._coef[n, c, index[t]] += 1.0

    def tabulate(self, pts):
        val, grad = self._poly._tab(pts)
        v = np.einsum("nct,qt->qnc", self._coef, val)
        div = np.einsum("nt,qt->qn", self._coef[:, 0], grad[..., 0]) + np.einsum(
            "nt,qt->qn", self._coef[:, 1], grad[..., 1]
        )
        return v, div


@lru_cache(maxsize=None)
def lagrange_element(kind: str, degree: int) -> LagrangeElement:
    return LagrangeElement(kind, degree)


@lru_cache(maxsize=None)
def rt_element(kind: str, k: int) -> RaviartThomasElement:
    return RaviartThomasElement(kind, k)
