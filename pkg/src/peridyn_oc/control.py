"""Box-constrained tracking control of the pairwise and limit models.

The problem minimizes

    (1/2) * integral over the domain of gamma |u - u_des|^2
    + (lambda/2) * integral of Gamma |g|^2

over piecewise-constant controls g in a per-component box, subject to
the state equation A u = load(g).  States and adjoints are P1 fields
vanishing on the constrained collar; controls live on the cells inside
the domain.  Everything downstream of the continuous statement is fully
discrete: the tracking term is a fixed Gauss quadrature (exact for
cellwise-quadratic data), its derivative is the exact derivative of the
quadrature, and the dense normal equations of a brute-force oracle agree
with the solver to solver tolerance.

The optimality system couples u, the adjoint p (same matrix: the solve
operator is self-adjoint), and the cellwise stationarity map
g = clamp(-(cell average of p)/lambda).  The projected-gradient solver
drives the fixed-point residual of that map to tolerance; a plain
fixed-point iteration is provided as well but contracts only when
lambda dominates the squared solve-operator norm.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ._expr import parse_scalar, parse_vector
from .errors import ConfigurationError, ConvergenceError, DomainError
from .kernel import KernelSpec, MaterialField
from .linalg import DENSE_LIMIT, solve_spd
from .local_assembly import assemble_stiffness_local
from .mesh import Mesh
from .nonlocal_assembly import assemble_stiffness_nonlocal
from .quadrature import QuadratureRule, cell_rule

#: relative slack when deciding that a control sits on a box face
BOUND_ATOL = 1e-12


@dataclass(frozen=True)
class ControlBox:
    """Per-component admissible interval [lower, upper] for the control."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi):
            raise DomainError("box bounds need matching component counts")
        for a, b in zip(lo, hi):
            if not a <= b:
                raise DomainError("box bounds must satisfy lower <= upper, "
                                  "got [%g, %g]" % (a, b))
            if a > 0.0 or b < 0.0:
                raise DomainError("the admissible box must contain zero, "
                                  "got [%g, %g]" % (a, b))

    @property
    def dim(self):
        return len(self.lower)

    @staticmethod
    def symmetric(bound, dim):
        b = abs(float(bound))
        return ControlBox((-b,) * dim, (b,) * dim)

    def clamp(self, z):
        z = np.asarray(z, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.clip(z, lo, hi)


@dataclass
class ControlProblem:
    """Data of one tracking problem on one mesh.

    ``kernel=None`` (or a zero-horizon kernel) selects the limit model;
    otherwise the pairwise stiffness is assembled with ``quad``.
    Tracking weight, control weight, and desired state accept expression
    strings or callables; the solver path requires control weight 1.
    """

    mesh: Mesh
    material: MaterialField
    box: ControlBox
    lam: float = 1.0
    kernel: KernelSpec = None
    quad: QuadratureRule = None
    track_weight: object = "1"
    control_weight: object = "1"
    u_des: object = None
    inner_tol: float = 1e-10

    @property
    def is_local(self):
        return self.kernel is None or self.kernel.delta == 0.0


@dataclass
class SolutionTriple:
    """State, control, adjoint, and the certificates that bind them."""

    state: np.ndarray
    control: np.ndarray
    adjoint: np.ndarray
    kkt_residual: float
    objective: float
    iterations: int
    diagnostics: dict = field(default_factory=dict)


@dataclass
class KKTReport:
    state_res: float
    adjoint_res: float
    max_sign_violation: float


def project_box(box, z):
    """Componentwise clamp of a per-cell control to the admissible box."""
    return box.clamp(z)


def _vector_field(data, dim):
    if data is None:
        return lambda pts: np.zeros((np.asarray(pts).reshape(
            -1, dim if dim > 1 else 1).shape[0], dim))
    if callable(data):
        return lambda pts: np.asarray(data(pts), dtype=float).reshape(-1, dim)
    fn = parse_vector(data, dim)
    return lambda pts: fn(pts).reshape(-1, dim)


def _scalar_field(data, dim):
    if callable(data):
        return lambda pts: np.asarray(data(pts), dtype=float).reshape(-1)
    return parse_scalar(str(data), dim)


_cell_rule = cell_rule


class _Factored:
    """Reusable SPD solver: one Cholesky factorization for small systems,
    Jacobi-CG via ``solve_spd`` otherwise.  Counts calls and iterations."""

    def __init__(self, A, tol):
        self.A = A.tocsr()
        self.tol = tol
        self.calls = 0
        self.iterations = 0
        if A.shape[0] <= DENSE_LIMIT:
            try:
                self._chol = sla.cho_factor(self.A.toarray(), lower=True)
            except sla.LinAlgError as exc:
                from .errors import MatrixError
                raise MatrixError("dense Cholesky failed: %s" % exc)
        else:
            self._chol = None

    def __call__(self, rhs):
        self.calls += 1
        if self._chol is not None:
            return sla.cho_solve(self._chol, rhs)
        x, rep = solve_spd(self.A, rhs, tol=self.tol)
        self.iterations += rep.iterations
        return x


@dataclass
class ControlOperators:
    """Assembled discrete operators of one control problem."""

    problem: ControlProblem
    stiffness: sp.csr_matrix
    load_map: sp.csr_matrix       # free DOFs x control DOFs
    proj0: sp.csr_matrix          # control DOFs x free DOFs (cell averages)
    track_mass: sp.csr_matrix     # gamma-weighted P1 mass on free DOFs
    track_load: np.ndarray        # integral of gamma * u_des * basis
    track_const: float            # (1/2) integral of gamma |u_des|^2
    mz_diag: np.ndarray           # P0 mass diagonal (cell volume per comp)
    ctrl_weight: np.ndarray       # cell averages of the control weight
    gamma_is_one: bool
    omega_cells: np.ndarray
    n_ctrl_cells: int
    solver: object = None

    def solve(self, rhs):
        if self.solver is None:
            self.solver = _Factored(self.stiffness, self.problem.inner_tol)
        return self.solver(rhs)

    def control_shape(self):
        return (self.n_ctrl_cells, self.problem.mesh.dim)


def build_operators(problem, threads=1, backend=None):
    """Assemble every matrix and vector the optimality system needs."""
    mesh = problem.mesh
    dim = mesh.dim
    if problem.is_local:
        A = assemble_stiffness_local(mesh, problem.material).matrix
    else:
        quad = problem.quad if problem.quad is not None else QuadratureRule()
        A = assemble_stiffness_nonlocal(mesh, problem.kernel,
                                        problem.material, quad,
                                        threads=threads,
                                        backend=backend).matrix
    ocells = np.flatnonzero(mesh.cell_in_omega)
    ncells = ocells.size
    vols = mesh.cell_volumes()[ocells]
    cells = mesh.cells[ocells]          # (C, nvert)
    nvert = cells.shape[1]
    verts = mesh.nodes[cells]           # (C, nvert, dim)
    bary, refw = _cell_rule(dim)
    nq = refw.size
    pts = np.einsum("qp,cpd->cqd", bary, verts)     # (C, nq, dim)
    flat_pts = pts.reshape(-1, dim) if dim > 1 else pts.reshape(-1)

    gam_fn = _scalar_field(problem.track_weight, dim)
    gam = gam_fn(flat_pts).reshape(ncells, nq)
    if np.any(gam < 0.0):
        raise DomainError("tracking weight must be nonnegative at "
                          "quadrature points")
    udes_fn = _vector_field(problem.u_des, dim)
    udes = udes_fn(flat_pts).reshape(ncells, nq, dim)
    w = vols[:, None] * refw[None, :]

    ctrl_fn = _scalar_field(problem.control_weight, dim)
    ctrl_q = ctrl_fn(flat_pts).reshape(ncells, nq)
    ctrl_weight = (w * ctrl_q).sum(axis=1) / vols
    gamma_is_one = bool(np.all(ctrl_q == 1.0))

    # gamma-weighted P1 mass and data load, scattered to free DOFs
    blocks = np.einsum("cq,qp,qr->cpr", w * gam, bary, bary)
    fdata = np.einsum("cq,qp,cqd->cpd", w * gam, bary, udes)
    track_const = 0.5 * float(np.einsum("cq,cqd,cqd->", w * gam, udes, udes))

    dof = mesh.dof_of_node[cells]                     # (C, nvert)
    ndof = mesh.n_free
    rows1 = np.repeat(dof[:, :, None], nvert, axis=2)
    cols1 = np.repeat(dof[:, None, :], nvert, axis=1)
    keep = (rows1 >= 0) & (cols1 >= 0)
    mats = []
    for c in range(dim):
        mats.append(sp.coo_matrix(
            (blocks[keep], (dim * rows1[keep] + c, dim * cols1[keep] + c)),
            shape=(ndof, ndof)))
    track_mass = sum(mats).tocsr()
    track_mass.sum_duplicates()
    track_mass.sort_indices()

    track_load = np.zeros(ndof)
    kp = dof >= 0
    for c in range(dim):
        np.add.at(track_load, dim * dof[kp] + c, fdata[:, :, c][kp])

    # load map: integral of each hat over each cell, per component
    nctrl = ncells * dim
    cload = np.full((ncells, nvert), 1.0 / nvert) * vols[:, None]
    rr, cc, vv = [], [], []
    crange = np.arange(ncells)
    for p in range(nvert):
        for c in range(dim):
            sel = dof[:, p] >= 0
            rr.append(dim * dof[sel, p] + c)
            cc.append(dim * crange[sel] + c)
            vv.append(cload[sel, p])
    load_map = sp.coo_matrix(
        (np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
        shape=(ndof, nctrl)).tocsr()
    load_map.sum_duplicates()
    load_map.sort_indices()

    # cell-average map (exact P0 projection of P1 fields)
    rr, cc, vv = [], [], []
    for p in range(nvert):
        for c in range(dim):
            sel = dof[:, p] >= 0
            rr.append(dim * crange[sel] + c)
            cc.append(dim * dof[sel, p] + c)
            vv.append(np.full(sel.sum(), 1.0 / nvert))
    proj0 = sp.coo_matrix(
        (np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
        shape=(nctrl, ndof)).tocsr()
    proj0.sum_duplicates()
    proj0.sort_indices()

    mz_diag = np.repeat(vols, dim)
    return ControlOperators(
        problem=problem, stiffness=A, load_map=load_map, proj0=proj0,
        track_mass=track_mass, track_load=track_load,
        track_const=track_const, mz_diag=mz_diag, ctrl_weight=ctrl_weight,
        gamma_is_one=gamma_is_one, omega_cells=ocells, n_ctrl_cells=ncells)


def _as_control(ops, g):
    shape = ops.control_shape()
    if g is None:
        return np.zeros(shape)
    g = np.asarray(g, dtype=float)
    if g.size != shape[0] * shape[1]:
        raise ConfigurationError(
            "control has %d values; expected %d cells x %d components"
            % (g.size, shape[0], shape[1]))
    return g.reshape(shape)


def _as_state(ops, u):
    mesh = ops.problem.mesh
    if callable(u) or isinstance(u, str):
        vals = mesh.interpolate_vector(u)
        return mesh.free_values(mesh.zero_constrained(vals))
    u = np.asarray(u, dtype=float)
    if u.size == mesh.n_free:
        return u.reshape(-1)
    if u.size == mesh.n_nodes * mesh.dim:
        return mesh.free_values(u.reshape(mesh.n_nodes, mesh.dim))
    raise ConfigurationError(
        "state has %d values; expected %d free DOFs" % (u.size, mesh.n_free))


def _objective_parts(ops, u, gflat):
    lam = ops.problem.lam
    track = (0.5 * float(u @ (ops.track_mass @ u))
             - float(u @ ops.track_load) + ops.track_const)
    vols = ops.mz_diag[::ops.problem.mesh.dim]
    g2 = (gflat.reshape(-1, ops.problem.mesh.dim) ** 2).sum(axis=1)
    ctrl = 0.5 * lam * float(np.sum(vols * ops.ctrl_weight * g2))
    return track, ctrl


def objective(problem, u, g, operators=None):
    """Value of the tracking objective for a given state and control."""
    ops = operators if operators is not None else build_operators(problem)
    uf = _as_state(ops, u)
    gflat = _as_control(ops, g).reshape(-1)
    track, ctrl = _objective_parts(ops, uf, gflat)
    return track + ctrl


def _state_adjoint(ops, gflat):
    u = ops.solve(ops.load_map @ gflat)
    p = ops.solve(ops.track_mass @ u - ops.track_load)
    return u, p


def _require_unit_control_weight(ops):
    if not ops.gamma_is_one:
        raise ConfigurationError(
            "the optimality solver supports control weight 1 only; the "
            "supplied control weight varies (objective evaluation still "
            "accepts it)")


def reduced_gradient(problem, operators, g):
    """Cellwise gradient of the reduced objective at control g."""
    ops = operators if operators is not None else build_operators(problem)
    _require_unit_control_weight(ops)
    gflat = _as_control(ops, g).reshape(-1)
    _u, p = _state_adjoint(ops, gflat)
    grad = ops.proj0 @ p + problem.lam * gflat
    return grad.reshape(ops.control_shape())


def _ctrl_norm(ops, vec):
    return float(np.sqrt(np.sum(ops.mz_diag * vec * vec)))


def _stationarity_residual(ops, gflat, p):
    lam = ops.problem.lam
    box = ops.problem.box
    gstar = box.clamp((-(ops.proj0 @ p) / lam).reshape(
        ops.control_shape())).reshape(-1)
    return _ctrl_norm(ops, gflat - gstar)


def _triple(ops, gflat, u, p, res, iters, extra=None):
    track, ctrl = _objective_parts(ops, u, gflat)
    diag = {"solver_calls": ops.solver.calls if ops.solver else 0}
    if extra:
        diag.update(extra)
    return SolutionTriple(
        state=u.copy(), control=gflat.reshape(ops.control_shape()).copy(),
        adjoint=p.copy(), kkt_residual=res, objective=track + ctrl,
        iterations=iters, diagnostics=diag)


def solve_kkt_projected_gradient(problem, operators=None, tol=1e-8,
                                 maxit=500):
    """Projected-gradient solve of the discrete optimality system.

    Iterates g <- clamp(g - s * (cell-avg p + lambda g)) with Armijo
    backtracking from s = 1/lambda, stopping when the stationarity map
    fixed-point residual drops below ``tol`` in the control L2 norm.
    """
    if not problem.lam > 0.0:
        raise DomainError("regularization weight lambda must be positive, "
                          "got %g" % problem.lam)
    ops = operators if operators is not None else build_operators(problem)
    _require_unit_control_weight(ops)
    lam = problem.lam
    box = problem.box
    t0 = time.perf_counter()
    g = box.clamp(np.zeros(ops.control_shape())).reshape(-1)
    u, p = _state_adjoint(ops, g)
    best = None
    best_res = np.inf
    for it in range(maxit + 1):
        res = _stationarity_residual(ops, g, p)
        if res < best_res:
            best_res = res
            best = (g.copy(), u.copy(), p.copy())
        if res <= tol:
            return _triple(ops, g, u, p, res, it,
                           {"wall_time": time.perf_counter() - t0})
        if it == maxit:
            break
        mu = ops.proj0 @ p + lam * g
        s = 1.0 / lam
        accepted = False
        for _bt in range(60):
            gtry = box.clamp((g - s * mu).reshape(
                ops.control_shape())).reshape(-1)
            d = gtry - g
            slope = float(np.sum(ops.mz_diag * mu * d))
            if slope >= 0.0:
                break       # projection arc collapsed: nothing left to try
            # objective change evaluated in increment form, so the
            # sufficient-decrease test never subtracts near-equal numbers
            du = ops.solve(ops.load_map @ d)
            dj = (0.5 * float(du @ (ops.track_mass @ (2.0 * u + du)))
                  - float(du @ ops.track_load)
                  + 0.5 * lam * float(np.sum(ops.mz_diag * d * (g + gtry))))
            if dj <= 1e-4 * slope:
                g = gtry
                u = u + du
                accepted = True
                break
            s *= 0.5
        if not accepted:
            gb, ub, pb = best
            raise ConvergenceError(
                "projected gradient reached numerical stationarity at "
                "residual %g before tolerance %g (iteration %d)"
                % (best_res, tol, it),
                best=_triple(ops, gb, ub, pb, best_res, it))
        p = ops.solve(ops.track_mass @ u - ops.track_load)
    gb, ub, pb = best
    raise ConvergenceError(
        "projected gradient did not reach tolerance %g in %d iterations "
        "(best residual %g)" % (tol, maxit, best_res),
        best=_triple(ops, gb, ub, pb, best_res, maxit))


def solve_kkt_fixed_point(problem, operators=None, tol=1e-8, maxit=500):
    """Plain stationarity fixed-point iteration.

    g <- clamp(-(cell-avg p)/lambda) contracts only when lambda exceeds
    the squared norm of the solve operator; prefer the projected
    gradient solver when in doubt.
    """
    if not problem.lam > 0.0:
        raise DomainError("regularization weight lambda must be positive, "
                          "got %g" % problem.lam)
    ops = operators if operators is not None else build_operators(problem)
    _require_unit_control_weight(ops)
    lam = problem.lam
    box = problem.box
    g = box.clamp(np.zeros(ops.control_shape())).reshape(-1)
    u, p = _state_adjoint(ops, g)
    for it in range(maxit + 1):
        res = _stationarity_residual(ops, g, p)
        if res <= tol:
            return _triple(ops, g, u, p, res, it)
        if it == maxit:
            break
        g = box.clamp((-(ops.proj0 @ p) / lam).reshape(
            ops.control_shape())).reshape(-1)
        u, p = _state_adjoint(ops, g)
    raise ConvergenceError(
        "fixed-point iteration did not reach tolerance %g in %d iterations "
        "(residual %g); the contraction condition likely fails"
        % (tol, maxit, res), best=_triple(ops, g, u, p, res, maxit))


def verify_kkt(problem, triple, tol=1e-8, operators=None):
    """A posteriori check of the discrete first-order conditions."""
    ops = operators if operators is not None else build_operators(problem)
    gflat = _as_control(ops, triple.control).reshape(-1)
    u = np.asarray(triple.state, dtype=float).reshape(-1)
    p = np.asarray(triple.adjoint, dtype=float).reshape(-1)
    bu = ops.load_map @ gflat
    bp = ops.track_mass @ u - ops.track_load
    scale_u = max(float(np.linalg.norm(bu)), 1e-300)
    scale_p = max(float(np.linalg.norm(bp)), 1e-300)
    state_res = float(np.linalg.norm(ops.stiffness @ u - bu)) / scale_u
    adjoint_res = float(np.linalg.norm(ops.stiffness @ p - bp)) / scale_p
    mu = (ops.proj0 @ p + problem.lam * gflat).reshape(ops.control_shape())
    g = gflat.reshape(ops.control_shape())
    lo = np.asarray(problem.box.lower)
    hi = np.asarray(problem.box.upper)
    atol = BOUND_ATOL * (1.0 + np.maximum(np.abs(lo), np.abs(hi)))
    at_lo = g <= lo + atol
    at_hi = g >= hi - atol
    interior = ~(at_lo | at_hi)
    viol = np.zeros_like(mu)
    viol[at_lo] = np.maximum(0.0, -mu[at_lo])
    viol[at_hi] = np.maximum(viol[at_hi], np.maximum(0.0, mu[at_hi]))
    both = at_lo & at_hi          # degenerate single-point interval
    viol[both] = 0.0
    viol[interior] = np.abs(mu[interior])
    return KKTReport(state_res=state_res, adjoint_res=adjoint_res,
                     max_sign_violation=float(viol.max(initial=0.0)))


def export_solution(problem, triple, state_path, control_path,
                    operators=None):
    """Write per-node state/adjoint and per-cell control CSV files."""
    ops = operators if operators is not None else build_operators(problem)
    mesh = problem.mesh
    dim = mesh.dim
    ufull = mesh.expand_free(np.asarray(triple.state))
    pfull = mesh.expand_free(np.asarray(triple.adjoint))
    comps = ["x", "y"][:dim]
    with open(state_path, "w") as fh:
        cols = (["node"] + [c for c in comps]
                + ["u_" + c for c in comps] + ["p_" + c for c in comps])
        fh.write(",".join(cols) + "\n")
        for i in range(mesh.n_nodes):
            vals = list(mesh.nodes[i]) + list(ufull[i]) + list(pfull[i])
            fh.write("%d," % i + ",".join("%.17g" % v for v in vals) + "\n")
    g = _as_control(ops, triple.control)
    cent = mesh.cell_centroids()[ops.omega_cells]
    with open(control_path, "w") as fh:
        cols = ["cell"] + ["c" + c for c in comps] + ["g_" + c for c in comps]
        fh.write(",".join(cols) + "\n")
        for k, cid in enumerate(ops.omega_cells):
            vals = list(cent[k]) + list(g[k])
            fh.write("%d," % cid + ",".join("%.17g" % v for v in vals) + "\n")
