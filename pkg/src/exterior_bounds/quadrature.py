"""Quadrature rules on the reference tetrahedron {x, y, z >= 0, x + y + z <= 1}."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points (nq, 4) and weights (nq,) summing to 1/6."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self) -> int:
        return len(self.weights)


def _orbit(bary):
    return sorted(set(permutations(bary)))


@lru_cache(maxsize=None)
def keast_degree5() -> QuadratureRule:
    """Symmetric 14-point rule, exact to degree 5, all weights positive."""
    a1 = 0.0927352503108912264
    a2 = 0.3108859192633006097
    b = 0.0455037041256496494
    w1 = 0.01224884051939365826
    w2 = 0.01878132095300264180
    w3 = 0.007091003462846911
    pts, wts = [], []
    for a, w in ((a1, w1), (a2, w2)):
        for p in _orbit((1.0 - 3.0 * a, a, a, a)):
            pts.append(p)
            wts.append(w)
    for p in _orbit((0.5 - b, 0.5 - b, b, b)):
        pts.append(p)
        wts.append(w3)
    return QuadratureRule(np.array(pts), np.array(wts), 5)


@lru_cache(maxsize=None)
def conical_product(degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi product rule exact to ``degree``.

    Not symmetric, but positive and available at any degree; used as a
    higher-order cross-check of the default rule.
    """
    n = degree // 2 + 1
    t0, w0 = roots_jacobi(n, 2.0, 0.0)
    t1, w1 = roots_jacobi(n, 1.0, 0.0)
    t2, w2 = roots_legendre(n)
    u, wu = (t0 + 1) / 2, w0 / 8
    v, wv = (t1 + 1) / 2, w1 / 4
    w, ww = (t2 + 1) / 2, w2 / 2
    U, V, W = np.meshgrid(u, v, w, indexing="ij")
    WT = np.einsum("i,j,k->ijk", wu, wv, ww)
    x = U
    y = V * (1 - U)
    z = W * (1 - U) * (1 - V)
    pts = np.stack([1 - x - y - z, x, y, z], axis=-1).reshape(-1, 4)
    return QuadratureRule(pts, WT.ravel(), 2 * n - 1)


def default_rule() -> QuadratureRule:
    return keast_degree5()


def rule_of_degree(degree: int) -> QuadratureRule:
    if degree <= 5:
        return keast_degree5()
    return conical_product(degree)


def monomial_integral(a: int, b: int, c: int) -> float:
    """Exact integral of x^a y^b z^c over the reference tetrahedron."""
    from math import factorial

    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
