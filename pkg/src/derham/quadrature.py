"""Symmetric quadrature on simplices via Grundmann-Moller rules.

Rules are generated for arbitrary simplex dimension and odd polynomial
degree; points are returned in barycentric coordinates so the same rule
serves cells and their faces.
"""

from functools import lru_cache
from itertools import combinations_with_replacement
from math import factorial

import numpy as np


@lru_cache(maxsize=None)
def simplex_rule(dim, degree):
    """Barycentric points and weights integrating exactly to `degree`.

    Weights sum to 1 (reference simplex of unit measure); scale by the
    physical simplex measure when integrating.

    Returns (points, weights) with points of shape (npts, dim+1).
    """
    s = max(0, (degree - 1) // 2 + (1 if degree % 2 == 0 else 0))
    # Grundmann-Moller rule of index s is exact for degree 2s+1.
    n = dim
    d = 2 * s + 1
    points = []
    weights = []
    for i in range(s + 1):
        w = (
            (-1) ** i
            * 2.0 ** (-2 * s)
            * (d + n - 2 * i) ** d
            / (factorial(i) * factorial(d + n - i))
        )
        for beta in combinations_with_replacement(range(n + 1), s - i):
            k = np.zeros(n + 1, dtype=int)
            for b in beta:
                k[b] += 1
            pt = (2.0 * k + 1.0) / (d + n - 2 * i)
            points.append(pt)
            weights.append(w)
    points = np.asarray(points)
    weights = np.asarray(weights)
    # raw weights sum to vol(reference simplex) = 1/n!; rescale to sum 1
    weights = weights / np.sum(weights)
    return points, weights


def map_points(vertices, bary):
    """Map barycentric points (npts, m+1) to coordinates of the simplex
    spanned by `vertices` (m+1, n)."""
    return bary @ vertices


def simplex_measure(vertices):
    """Measure of the simplex with rows of `vertices` as its corners.

    Works for simplices embedded in higher dimension (faces, edges).
    """
    v = np.asarray(vertices, dtype=float)
    e = v[1:] - v[0]
    m = e.shape[0]
    if e.shape[1] == m:
        return abs(np.linalg.det(e)) / factorial(m)
    g = e @ e.T
    return np.sqrt(max(np.linalg.det(g), 0.0)) / factorial(m)


def integrate(func, vertices, degree=4):
    """Integrate `func(x)` over a simplex; func maps (npts, n) -> (npts, ...)."""
    dim = len(vertices) - 1
    bary, w = simplex_rule(dim, degree)
    x = map_points(np.asarray(vertices, dtype=float), bary)
    vals = np.asarray(func(x), dtype=float)
    vol = simplex_measure(vertices)
    return vol * np.tensordot(w, vals, axes=(0, 0))
