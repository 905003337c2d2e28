"""Symmetric quadrature rules on the reference tetrahedron.

Rules are given in barycentric coordinates with weights summing to one, so
the integral of f over a tetrahedron of volume V is V * sum(w_i * f(p_i)).
"""

import numpy as np

__all__ = ["rule", "SUPPORTED_ORDERS"]


def _orbit4(a):
    # all placements of the odd coordinate
    b = (1.0 - a) / 3.0
    pts = np.full((4, 4), b)
    np.fill_diagonal(pts, a)
    return pts


def _orbit6(a):
    # pairs (a, a, b, b) in all 6 position choices
    b = 0.5 - a
    out = []
    for i in range(4):
        for j in range(i + 1, 4):
            p = np.full(4, b)
            p[i] = a
            p[j] = a
            out.append(p)
    return np.array(out)


def _build_rules():
    rules = {}

    # degree 1: centroid
    rules[1] = (np.full((1, 4), 0.25), np.array([1.0]))

    # degree 2: classic 4-point rule
    a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
    pts = _orbit4(a)
    rules[2] = (pts, np.full(4, 0.25))

    # degree 4: Keast 11-point rule (one negative centroid weight)
    pts = np.vstack([
        np.full((1, 4), 0.25),
        _orbit4(11.0 / 14.0),
        _orbit6(0.25 + 0.25 * np.sqrt(5.0 / 14.0)),
    ])
    wts = np.concatenate([
        np.array([-148.0 / 1875.0]),
        np.full(4, 343.0 / 7500.0),
        np.full(6, 56.0 / 375.0),
    ])
    rules[4] = (pts, wts)

    return rules


_RULES = _build_rules()
SUPPORTED_ORDERS = tuple(sorted(_RULES))


def rule(order):
    """Return (points, weights) exact for polynomials up to total degree `order`.

    points has shape (n, 4) in barycentric coordinates, weights sum to 1.
    """
    for avail in SUPPORTED_ORDERS:
        if avail >= order:
            pts, wts = _RULES[avail]
            return pts.copy(), wts.copy()
    raise ValueError(
        f"no tetrahedron rule of order {order}; supported up to {SUPPORTED_ORDERS[-1]}"
    )
