"""Gauss rules on the reference interval, triangle and square."""

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre


@lru_cache(maxsize=None)
def line_rule(degree: int):
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    n = degree // 2 + 1
    x, w = legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def square_rule(degree: int):
    s, w = line_rule(degree)
    X, Y = np.meshgrid(s, s, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1), np.outer(w, w).ravel()


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Collapsed (Duffy) tensor rule on the unit right triangle."""
    su, wu = line_rule(degree + 1)
    sv, wv = line_rule(degree)
    U, Vv = np.meshgrid(su, sv, indexing="ij")
    pts = np.stack([U.ravel(), (Vv * (1.0 - U)).ravel()], axis=1)
    wts = (np.outer(wu, wv) * (1.0 - U)).ravel()
    return pts, wts


def element_rule(kind: str, degree: int):
    return triangle_rule(degree) if kind == "tri" else square_rule(degree)


def shifted_legendre(n: int, s):
    """Values of the Legendre polynomials P_0..P_n mapped to [0, 1]; shape (len(s), n+1)."""
    return legendre.legvander(2.0 * np.asarray(s, dtype=float) - 1.0, n)


def shifted_legendre_deriv(n: int, s):
    t = 2.0 * np.asarray(s, dtype=float) - 1.0
    out = np.empty((t.size, n + 1))
    for j in range(n + 1):
        c = np.zeros(n + 1)
        c[j] = 1.0
        out[:, j] = 2.0 * legendre.legval(t, legendre.legder(c))
    return out
