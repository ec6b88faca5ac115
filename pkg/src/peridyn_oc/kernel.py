"""Interaction kernels and the material coefficient field.

Two radial kernel families are built in, both supported on a ball of radius
``delta`` (the horizon) and normalized to unit mass:

* ``constant``:   k(r) = c                    for r < delta
* ``fractional``: k(r) = c * r**(2 - n - 2*s) for r < delta, 0 < s < 1, s != 1/2

The material coefficient ``h(x)`` enters all pairwise interactions through
the symmetric two-point average ``H(x, y) = (h(x) + h(y)) / 2``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ._expr import constant_value, parse_scalar
from .errors import ConfigurationError, DomainError

#: surface measure of the unit sphere S^{n-1} for n = 1, 2
_SPHERE_MEASURE = {1: 2.0, 2: 2.0 * np.pi}

#: volume of the unit ball for n = 1, 2
_BALL_VOLUME = {1: 2.0, 2: np.pi}


def normalize(family, delta, dim, s=None):
    """Return the constant c making the kernel integrate to one over R^n.

    Closed forms: ``c = 1/|B_delta|`` for the constant family and
    ``c = (2 - 2*s) / (omega_{n-1} * delta**(2 - 2*s))`` for the fractional
    family, where ``omega_{n-1}`` is the surface measure of the unit sphere.
    """
    if dim not in (1, 2):
        raise DomainError("dimension must be 1 or 2, got %r" % (dim,))
    if not delta > 0:
        raise DomainError("horizon delta must be positive, got %r" % (delta,))
    if family == "constant":
        return 1.0 / (_BALL_VOLUME[dim] * delta ** dim)
    if family == "fractional":
        if s is None:
            raise DomainError("fractional family requires the order s")
        if not 0.0 < s < 1.0:
            raise DomainError(
                "fractional order s must lie in (0, 1); s >= 1 is not "
                "normalizable (got %r)" % (s,))
        if s == 0.5:
            raise DomainError(
                "fractional order s = 1/2 is excluded; choose s != 1/2")
        return (2.0 - 2.0 * s) / (_SPHERE_MEASURE[dim] * delta ** (2.0 - 2.0 * s))
    raise DomainError("unknown kernel family %r" % (family,))


@dataclass(frozen=True)
class KernelSpec:
    """A member of a kernel family with its horizon and normalization.

    Attributes
    ----------
    family : str
        "constant" or "fractional".
    delta : float
        Horizon (interaction radius); the kernel vanishes for r >= delta.
    dim : int
        Spatial dimension, 1 or 2.
    s : float or None
        Order of the fractional family; None for the constant family.
    norm_const : float
        Normalization constant, computed on construction.
    """

    family: str
    delta: float
    dim: int
    s: float = None
    norm_const: float = field(init=False)

    def __post_init__(self):
        c = normalize(self.family, self.delta, self.dim, self.s)
        object.__setattr__(self, "norm_const", c)
        if self.family == "constant":
            object.__setattr__(self, "s", None)

    def eval(self, r):
        """Evaluate k(r) for r >= 0; exactly zero on r >= delta."""
        r = np.asarray(r, dtype=float)
        inside = r < self.delta
        if self.family == "constant":
            return np.where(inside, self.norm_const, 0.0)
        expo = 2.0 - self.dim - 2.0 * self.s
        with np.errstate(divide="ignore"):
            vals = self.norm_const * np.power(r, expo, where=r > 0,
                                              out=np.full_like(r, np.inf))
        return np.where(inside, vals, 0.0)

    def radial_exponent(self):
        """Exponent p with k(r) ~ r^p near zero (0 for the constant family)."""
        if self.family == "constant":
            return 0.0
        return 2.0 - self.dim - 2.0 * self.s


@dataclass
class KernelReport:
    """Result of the numerical kernel-assumption check."""

    mass_error: float
    monotonicity_ok: bool
    l1_of_k_over_r2: str  # "finite" or "infinite"
    ok: bool
    messages: list


def verify_assumptions(kernel, samples=256, tol=1e-10):
    """Numerically verify the structural kernel assumptions.

    Checks unit mass by quadrature (with the radial endpoint singularity of
    the fractional family handled by a weighted rule), verifies that
    ``k(r)/r**2`` is non-increasing on a geometric sample grid, and reports by
    exponent comparison whether ``k(|z|)/|z|**2`` is integrable near zero:
    the radial profile behaves like ``r**p`` with ``p = -2`` (constant) or
    ``p = -n - 2*s`` (fractional), and integrability over the ball requires
    ``p > -n``, which fails for both families in dimensions one and two.
    """
    if samples < 2:
        raise DomainError("samples must be at least 2")
    n, delta, c = kernel.dim, kernel.delta, kernel.norm_const
    surf = _SPHERE_MEASURE[n]
    if kernel.family == "constant":
        mass, _ = integrate.quad(lambda r: c * r ** (n - 1), 0.0, delta)
    else:
        # k(r) * r^(n-1) = c * r^(1 - 2 s): split off the algebraic factor
        # r^(1-2s) and integrate the smooth remainder with a weighted rule.
        alpha = 1.0 - 2.0 * kernel.s
        mass, _ = integrate.quad(lambda r: c, 0.0, delta,
                                 weight="alg", wvar=(alpha, 0.0))
    mass *= surf
    mass_error = abs(mass - 1.0)

    radii = delta * np.geomspace(1e-8, 1.0, samples, endpoint=False)
    ratio = kernel.eval(radii) / radii ** 2
    scale = np.max(np.abs(ratio))
    monotone = bool(np.all(np.diff(ratio) <= 1e-12 * scale))

    p = kernel.radial_exponent() - 2.0
    integrable = p > -n
    l1_label = "finite" if integrable else "infinite"

    messages = []
    if mass_error > tol:
        messages.append("unit-mass violation: |mass - 1| = %.3e > %.1e"
                        % (mass_error, tol))
    if not monotone:
        messages.append("k(r)/r^2 is not non-increasing on the sample grid")
    return KernelReport(
        mass_error=mass_error,
        monotonicity_ok=monotone,
        l1_of_k_over_r2=l1_label,
        ok=not messages,
        messages=messages,
    )


class MaterialField:
    """Scalar stiffness coefficient h(x) with certified bounds.

    Parameters
    ----------
    expr : str or callable
        Expression over ``x`` (and ``y`` in 2-d), or a callable mapping a
        point array of shape (m, dim) (or (m,) in 1-d) to (m,) values.
    hmin, hmax : float, optional
        Lower/upper bounds. When omitted they are inferred from a sample
        sweep with a 1% slack. ``hmin`` must be positive.
    dim : int
        Spatial dimension.
    """

    def __init__(self, expr="1", hmin=None, hmax=None, dim=1):
        self.dim = dim
        self.expr = expr
        if callable(expr):
            self._fn = expr
            self._const = None
            self._cellwise = False
        else:
            self._fn = parse_scalar(expr, dim)
            self._const = constant_value(expr, dim)
            self._cellwise = "box(" in expr.replace(" ", "")
        if hmin is None or hmax is None:
            t = np.linspace(-1.0, 2.0, 97)
            pts = t if dim == 1 else np.column_stack([t, t[::-1]])
            vals = self.evaluate(pts)
            lo, hi = float(np.min(vals)), float(np.max(vals))
            slack = 0.01 * max(abs(lo), abs(hi), 1.0)
            hmin = lo - slack if hmin is None else hmin
            hmax = hi + slack if hmax is None else hmax
        if not hmin > 0:
            raise ConfigurationError(
                "material lower bound hmin must be positive, got %r" % (hmin,))
        if hmax < hmin:
            raise ConfigurationError("material bounds require hmin <= hmax")
        self.hmin = float(hmin)
        self.hmax = float(hmax)

    def evaluate(self, points):
        """Evaluate h at an array of points."""
        return np.asarray(self._fn(points), dtype=float).reshape(-1)

    def pair_average(self, x, y):
        """Symmetric two-point coefficient H(x, y) = (h(x) + h(y)) / 2."""
        return 0.5 * (self.evaluate(x) + self.evaluate(y))

    def materialize(self, mesh):
        """Bind the field to a mesh for the assembly core.

        Returns ``(mode, data)`` where mode 0 is a global constant, mode 1
        holds one value per mesh node (evaluated exactly at nodes, hence
        exact for affine fields), and mode 2 holds one value per cell
        (midpoint values, used for discontinuous box-indicator fields so
        jumps never fall inside a cell's sample point).
        """
        if self._const is not None:
            self._check_bounds(np.array([self._const]))
            return 0, float(self._const)
        if self._cellwise:
            vals = self.evaluate(mesh.cell_centroids())
            self._check_bounds(vals)
            return 2, vals
        vals = self.evaluate(mesh.nodes)
        self._check_bounds(vals)
        return 1, vals

    def _check_bounds(self, vals):
        tol = 1e-12 * max(1.0, self.hmax)
        if np.min(vals) < self.hmin - tol or np.max(vals) > self.hmax + tol:
            raise ConfigurationError(
                "material values escape the declared bounds [%g, %g]: "
                "range [%g, %g]" % (self.hmin, self.hmax,
                                    float(np.min(vals)), float(np.max(vals))))
