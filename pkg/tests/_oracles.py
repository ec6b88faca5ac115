"""Independent reference computations that pin expected test values.

Everything in this module is coded straight from the mathematical
definitions with its own quadrature layout and its own normalization
formulas.  Nothing here calls into the package's assembly or quadrature
code, so agreement between the two is a genuine cross-check rather than
a tautology.
"""

import numpy as np


# ----------------------------------------------------------------------
# quadrature helpers (deliberately different layout from the package)

def _leg(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _panel_gauss(edges, n):
    """Gauss points/weights on consecutive panels given by sorted edges."""
    gx, gw = _leg(n)
    w = np.diff(edges)
    pts = (edges[:-1, None] + w[:, None] * gx[None, :]).reshape(-1)
    wts = (w[:, None] * gw[None, :]).reshape(-1)
    return pts, wts


def _edges_with_focus(lo, hi, interior, focus=None, levels=25):
    """Panel edges on [lo, hi] split at interior points, refined at focus.

    Refinement uses geometric shells centered at the focus spanning the
    whole window, so panels stay well-proportioned relative to their
    distance from the focus on both sides of every interior breakpoint.
    """
    pts = {lo, hi}
    pts.update(t for t in interior if lo + 1e-13 < t < hi - 1e-13)
    if focus is not None and lo + 1e-14 < focus < hi - 1e-14:
        pts.add(focus)
        radius = hi - lo
        for k in range(levels + 1):
            for sgn in (1.0, -1.0):
                e = focus + sgn * radius * 0.5 ** k
                if lo + 1e-14 < e < hi - 1e-14:
                    pts.add(e)
    return np.unique(np.asarray(sorted(pts)))


def _end_graded(p, q, levels=6):
    """Edges on [p, q] geometrically refined toward both ends."""
    w = q - p
    edges = [p, q, p + 0.5 * w]
    for k in range(2, levels + 2):
        edges.append(p + w * 0.5 ** k)
        edges.append(q - w * 0.5 ** k)
    return np.unique(np.asarray(edges))


# ----------------------------------------------------------------------
# kernel normalizations from the unit-mass condition (closed forms)

def const_kernel_1d(delta):
    c = 1.0 / (2.0 * delta)
    return lambda r: np.where(np.abs(r) < delta, c, 0.0)


def frac_kernel_1d(delta, s):
    c = (1.0 - s) / delta ** (2.0 - 2.0 * s)
    return lambda r: np.where(np.abs(r) < delta,
                              c * np.abs(r) ** (1.0 - 2.0 * s), 0.0)


def const_kernel_2d(delta):
    c = 1.0 / (np.pi * delta ** 2)
    return lambda r: np.where(np.abs(r) < delta, c, 0.0)


def frac_kernel_2d(delta, s):
    c = (1.0 - s) / (np.pi * delta ** (2.0 - 2.0 * s))
    return lambda r: np.where(np.abs(r) < delta,
                              c * np.abs(r) ** (-2.0 * s), 0.0)


# ----------------------------------------------------------------------
# brute-force dense stiffness matrix, one space dimension

def dense_stiffness_1d(xnodes, delta, kfun, hfun=None, gauss=8,
                       x_levels=6, y_levels=25):
    """Full double integral of the bond form against hat-function pairs.

    Outer variable x runs over the meshed interval split at every node
    and every node +- delta with end-graded panels; for each outer point
    the inner variable y covers the horizon window split at nodes with
    geometric refinement toward y = x.  Returns the dense matrix over all
    nodes: entry (i, j) is the ordered double integral of
    H(x,y) k(|x-y|) (phi_i(x)-phi_i(y)) (phi_j(x)-phi_j(y)) / (x-y)^2.
    """
    xnodes = np.asarray(xnodes, dtype=float)
    x0, x1 = xnodes[0], xnodes[-1]
    h = xnodes[1] - xnodes[0]
    n = xnodes.size
    bps = np.concatenate([xnodes, xnodes - delta, xnodes + delta])
    bps = np.unique(bps[(bps > x0 + 1e-13) & (bps < x1 - 1e-13)])
    xedges = np.concatenate([[x0], bps, [x1]])
    A = np.zeros((n, n))
    for p, q in zip(xedges[:-1], xedges[1:]):
        sub = _end_graded(p, q, x_levels)
        xq, xw = _panel_gauss(sub, gauss)
        for x, wxv in zip(xq, xw):
            lo, hi = max(x - delta, x0), min(x + delta, x1)
            yedges = _edges_with_focus(lo, hi, xnodes, focus=x,
                                       levels=y_levels)
            yq, yw = _panel_gauss(yedges, gauss)
            d = yq - x
            keep = d != 0.0          # zero-width panels collapse onto x
            yq, yw, d = yq[keep], yw[keep], d[keep]
            kv = kfun(d)
            hat_x = np.maximum(0.0, 1.0 - np.abs(x - xnodes) / h)
            hat_y = np.maximum(0.0, 1.0 - np.abs(yq[:, None]
                                                 - xnodes[None, :]) / h)
            diff = hat_x[None, :] - hat_y
            wfull = yw * kv / d ** 2
            if hfun is not None:
                wfull = wfull * 0.5 * (hfun(np.array([x]))[0] + hfun(yq))
            A += wxv * (diff.T * wfull[None, :]) @ diff
    return A


def interior_node_ids(xnodes, a, b):
    """Indices of nodes strictly inside (a, b), in node order."""
    return np.flatnonzero((xnodes > a + 1e-12) & (xnodes < b - 1e-12))


# ----------------------------------------------------------------------
# closed-form pair energy of the identity displacement on a square

def dilation_energy_square(delta, a, b):
    """Pair energy of u(x) = x on the square (a,b)^2, constant kernel.

    For the unit-mass constant kernel the full-ball density is exactly 1,
    so the energy is 2|domain| minus the integral of the clipped-disc
    mass.  Disc-minus-box areas reduce to circular-segment and corner
    terms; their domain integrals collapse to one smooth 1-d and one
    smooth 2-d (polar) integral, evaluated here to machine precision.
    """
    from scipy.integrate import quad as _sq

    L = b - a
    if not delta < 0.5 * L:
        raise ValueError("horizon must be smaller than half the side")
    area = L * L
    c = 1.0 / (np.pi * delta ** 2)

    def seg(t):
        # area of the disc part beyond a chord at distance t from center
        return delta * delta * np.arccos(t / delta) \
            - t * np.sqrt(delta * delta - t * t)

    seg_int = _sq(seg, 0.0, delta, epsabs=1e-14, epsrel=1e-13)[0]

    def lens(s, t):
        # area of the disc within the quadrant {u < -s, v < -t}
        if s * s + t * t >= delta * delta:
            return 0.0
        w = np.sqrt(delta * delta - t * t)

        def f(u):
            return np.sqrt(delta * delta - u * u) - t

        return _sq(f, s, w, epsabs=1e-14, epsrel=1e-13)[0]

    lens_int = _sq(lambda s: _sq(lambda t: lens(s, t), 0.0, delta,
                                 epsabs=1e-13, epsrel=1e-12)[0],
                   0.0, delta, epsabs=1e-13, epsrel=1e-12)[0]

    clipped_mass_int = c * (np.pi * delta ** 2 * area
                            - 4.0 * L * seg_int + 4.0 * lens_int)
    return 2.0 * area - clipped_mass_int


# ----------------------------------------------------------------------
# dense linear-quadratic control oracle (normal equations)

def kkt_dense_control(A, M, Mz, B, u_des_vec, lam):
    """Optimal control by eliminating the state from the optimality system.

    A: dense free-DOF stiffness, M: state mass, Mz: control mass
    (piecewise-constant space), B: control-to-load map (b = B g).
    Minimizes 1/2 |S g - u_des|_M^2 + lam/2 |g|_Mz^2 with S = A^{-1} B and
    returns (g, u, p): the reduced normal equations
    (S^T M S + lam Mz) g = S^T M u_des are formed and solved densely.
    """
    A = np.asarray(A)
    S = np.linalg.solve(A, np.asarray(B))
    H = S.T @ M @ S + lam * Mz
    rhs = S.T @ (M @ u_des_vec)
    g = np.linalg.solve(H, rhs)
    u = S @ g
    p = np.linalg.solve(A, M @ (u - u_des_vec))
    return g, u, p
