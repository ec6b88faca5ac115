"""Symmetric positive definite solves and smallest-eigenvalue estimation.

Two deliberately simple algorithms cover every system in the package:
dense Cholesky for small matrices and Jacobi-preconditioned conjugate
gradients for the rest.  Both are deterministic — no randomized starts,
fixed reduction order — so repeated runs give bit-identical results.
"""

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConvergenceError, MatrixError

#: largest dimension still solved by dense Cholesky
DENSE_LIMIT = 512


@dataclass
class SolveReport:
    """What a linear solve did: iteration count, residual, wall time."""

    iterations: int
    rel_residual: float
    wall_time: float
    method: str = "cg"


def _as_csr(A):
    if sp.issparse(A):
        return A.tocsr()
    return sp.csr_matrix(np.asarray(A, dtype=float))


def solve_spd(A, b, tol=1e-10, maxit=None):
    """Solve A x = b for symmetric positive definite A.

    Returns ``(x, SolveReport)`` with relative residual ``|Ax-b|/|b|``
    at most ``tol`` on success.  Dimension up to ``DENSE_LIMIT`` goes
    through dense Cholesky; larger systems run conjugate gradients from
    x0 = 0 with diagonal (Jacobi) preconditioning.  Detected negative
    curvature raises ``MatrixError``; exceeding ``maxit`` raises
    ``ConvergenceError`` carrying the report and best iterate.
    """
    t0 = time.perf_counter()
    A = _as_csr(A)
    b = np.asarray(b, dtype=float).reshape(-1)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.size != n:
        raise MatrixError("solve_spd needs a square matrix matching b: "
                          "%s vs %d" % (A.shape, b.size))
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, time.perf_counter() - t0,
                                        "trivial")
    if n <= DENSE_LIMIT:
        try:
            chol = sla.cho_factor(A.toarray(), lower=True)
        except sla.LinAlgError as exc:
            raise MatrixError("dense Cholesky failed: %s" % exc)
        x = sla.cho_solve(chol, b)
        res = float(np.linalg.norm(A @ x - b)) / bnorm
        return x, SolveReport(0, res, time.perf_counter() - t0, "cholesky")

    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise MatrixError("matrix has nonpositive diagonal entries and "
                          "cannot be positive definite")
    inv_diag = 1.0 / diag
    if maxit is None:
        maxit = max(1000, 10 * n)
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    res = 1.0
    for it in range(1, maxit + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise MatrixError("negative curvature encountered in CG: "
                              "matrix is not positive definite")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = float(np.linalg.norm(r)) / bnorm
        if res <= tol:
            return x, SolveReport(it, res, time.perf_counter() - t0, "cg")
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    report = SolveReport(maxit, res, time.perf_counter() - t0, "cg")
    raise ConvergenceError(
        "CG did not reach tolerance %g in %d iterations (residual %g)"
        % (tol, maxit, res), report=report, best=x)


def smallest_eig(A, M, tol=1e-8, maxit=200, solve_tol=None):
    """Smallest eigenvalue of A x = lambda M x by inverse power iteration.

    Both matrices must be symmetric positive definite.  The iteration
    starts from the normalized all-ones vector, solves A y = M x with
    ``solve_spd`` each step, and stops when the Rayleigh quotient is
    stable to relative ``tol``.
    """
    A = _as_csr(A)
    M = _as_csr(M)
    n = A.shape[0]
    if M.shape != A.shape:
        raise MatrixError("matrix dimensions differ: %s vs %s"
                          % (A.shape, M.shape))
    if solve_tol is None:
        solve_tol = min(1e-10, tol * 1e-2)
    x = np.ones(n)
    x /= np.sqrt(float(x @ (M @ x)))
    lam = float(x @ (A @ x))
    for _ in range(maxit):
        y, _rep = solve_spd(A, M @ x, tol=solve_tol)
        x = y / np.sqrt(float(y @ (M @ y)))
        lam_new = float(x @ (A @ x))
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise ConvergenceError(
        "inverse power iteration did not stabilize to %g in %d steps"
        % (tol, maxit), best=lam)
