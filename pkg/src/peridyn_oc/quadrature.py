"""Quadrature rules and panel schedules for the pairwise assembly.

One-dimensional integrals use Gauss-Legendre rules mapped to [0, 1].
Triangle integrals use fully symmetric positive-weight rules in barycentric
coordinates (invariant under any relabeling of the triangle vertices, which
the assembly relies on for exact reflection equivariance of the scheme).

Near the kernel singularity the integration variable is the pair separation;
panels are graded geometrically toward zero separation with a configurable
ratio and level count.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature configuration for the nonlocal assembly.

    Attributes
    ----------
    outer_order : int
        Gauss order for the regular direction (cross-section sweeps and
        angular sectors); selects the triangle rule for 2-d clip polygons.
    inner_order : int
        Gauss order per panel in the separation direction, where the kernel
        may be singular.
    grading_levels : int
        Number of geometric panels toward zero separation for touching
        element pairs.
    grading_ratio : float
        Geometric ratio of consecutive panel widths, in (0, 1).
    """

    outer_order: int = 3
    inner_order: int = 3
    grading_levels: int = 20
    grading_ratio: float = 0.5

    def __post_init__(self):
        if self.outer_order < 1 or self.inner_order < 1:
            raise ConfigurationError("quadrature orders must be >= 1")
        if self.grading_levels < 0:
            raise ConfigurationError("grading levels must be >= 0")
        if not 0.0 < self.grading_ratio < 1.0:
            raise ConfigurationError("grading ratio must lie in (0, 1)")


def gauss_rule(order):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(int(order))
    return 0.5 * (x + 1.0), 0.5 * w


# ----------------------------------------------------------------------
# symmetric triangle rules (barycentric points, weights summing to one)

def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _orbit6(b, c):
    a = 1.0 - b - c
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


_S15 = np.sqrt(15.0)

_TRI_RULES = {
    1: (np.array([(1 / 3, 1 / 3, 1 / 3)]), np.array([1.0])),
    2: (np.array(_orbit3(1.0 / 6.0)), np.full(3, 1.0 / 3.0)),
    4: (
        np.array(_orbit3(0.445948490915965) + _orbit3(0.091576213509771)),
        np.concatenate([np.full(3, 0.223381589678011),
                        np.full(3, 0.109951743655322)]),
    ),
    5: (
        np.array([(1 / 3, 1 / 3, 1 / 3)]
                 + _orbit3((6.0 + _S15) / 21.0)
                 + _orbit3((6.0 - _S15) / 21.0)),
        np.concatenate([np.array([9.0 / 40.0]),
                        np.full(3, (155.0 + _S15) / 1200.0),
                        np.full(3, (155.0 - _S15) / 1200.0)]),
    ),
    6: (
        np.array(_orbit3(0.249286745170910) + _orbit3(0.063089014491502)
                 + _orbit6(0.310352451033785, 0.053145049844816)),
        np.concatenate([np.full(3, 0.116786275726379),
                        np.full(3, 0.050844906370207),
                        np.full(6, 0.082851075618374)]),
    ),
}

#: outer-order -> polynomial degree of the triangle rule used
_ORDER_TO_DEGREE = {1: 1, 2: 2, 3: 4, 4: 5}


def triangle_rule(order):
    """Symmetric positive triangle rule for a given Gauss-like order.

    Returns (points, weights) with barycentric points of shape (n, 3) and
    weights summing to one (multiply by the triangle area).
    """
    degree = _ORDER_TO_DEGREE.get(int(order), 6)
    pts, w = _TRI_RULES[degree]
    return np.array(pts, dtype=float), np.array(w, dtype=float)


def cell_rule(dim):
    """Reference rule for data integrals on a mesh cell.

    Returns (barycentric points, weights summing to one).  One dimension
    uses four-point Gauss; two dimensions a collapsed (square-to-triangle)
    tensor Gauss rule.  Both integrate cellwise polynomials of total degree
    six exactly, which covers quadratic data against squared P1 misfits.
    """
    gx, gw = gauss_rule(4)
    if dim == 1:
        bary = np.column_stack([1.0 - gx, gx])
        return bary, gw.copy()
    s = gx[:, None] + 0.0 * gx[None, :]
    t = 0.0 * gx[:, None] + gx[None, :]
    w = (gw[:, None] * gw[None, :]) * (1.0 - s)
    xi = s
    eta = t * (1.0 - s)
    bary = np.column_stack([(1.0 - xi - eta).reshape(-1), xi.reshape(-1),
                            eta.reshape(-1)])
    w = w.reshape(-1)
    return bary, w / w.sum()


def graded_panels(width, levels, ratio):
    """Ascending panel edges on [0, width], graded toward zero.

    Produces ``levels`` geometric panels plus a closing panel that reaches
    zero exactly, so no part of the interval is truncated:
    ``[0, w r^L], [w r^L, w r^{L-1}], ..., [w r, w]``.
    """
    if width <= 0:
        return np.zeros(1)
    edges = width * ratio ** np.arange(levels, -1, -1)
    return np.concatenate([[0.0], edges])


def panel_points(edges, gx, gw):
    """Tensor the [0,1] Gauss rule onto consecutive panels.

    Returns flat arrays (points, weights) over all panels in ascending
    order.
    """
    lo = edges[:-1]
    wid = edges[1:] - edges[:-1]
    pts = (lo[:, None] + wid[:, None] * gx[None, :]).reshape(-1)
    wts = (wid[:, None] * gw[None, :]).reshape(-1)
    return pts, wts
