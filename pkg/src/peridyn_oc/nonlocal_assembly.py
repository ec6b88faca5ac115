"""Assembly of the horizon-limited pairwise stiffness form and friends.

The bilinear form couples every pair of mesh elements closer than the
horizon.  Assembly iterates over unordered element pairs, integrates a
per-pair slot block (hat functions of both elements against the bond
kernel), and scatters symmetric triplets.  Pairs are enumerated in a
canonical order, processed in fixed-size blocks (possibly across worker
threads), and merged in block order, so the assembled matrix is
bit-identical for any thread count.

The quadratic form of the assembled matrix over functions vanishing on
the constrained collar equals the pairwise energy of the underlying
continuous form restricted to the padded box; for such functions the box
coincides with the horizon-enlarged domain up to cells the integrand
cannot reach.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _expr
from .backend import get_backend
from .errors import ConfigurationError, DomainError
from .kernel import KernelSpec, MaterialField
from .mesh import Mesh
from .quadrature import (QuadratureRule, gauss_rule, graded_panels,
                         panel_points, triangle_rule)

#: pairs per work unit; fixed so the merge schedule is thread-invariant
BLOCK_PAIRS = 4096
#: accumulate into a dense buffer when the DOF count is at most this
DENSE_DOF_LIMIT = 4096
#: flush triplets to a sparse partial sum after this many entries
FLUSH_TRIPLETS = 8_000_000


# ----------------------------------------------------------------------
# pair enumeration

def _pairs_1d(mesh):
    ncells = mesh.cells.shape[0]
    kmax = int(math.ceil(mesh.delta / mesh.h)) + 1
    pa, pb = [], []
    for k in range(kmax + 1):
        if k >= ncells:
            break
        a = np.arange(0, ncells - k, dtype=np.int64)
        pa.append(a)
        pb.append(a + k)
    pa = np.concatenate(pa)
    pb = np.concatenate(pb)
    order = np.lexsort((pb, pa))
    return pa[order], pb[order]


def _pairs_2d(mesh):
    """Unordered triangle pairs within horizon reach, classified.

    Returns (singular_a, singular_b, separated_a, separated_b): pairs
    sharing at least one vertex take the graded polar path, the rest the
    tensor rule with kernel indicator.  A pair is enumerated when the
    axis-aligned squares of the two cells are closer than delta, which
    never discards an interacting pair.
    """
    cx, cy = mesh.cells_per_axis
    h, delta = mesh.h, mesh.delta
    kmax = int(math.ceil(delta / h)) + 1
    cells = mesh.cells
    pa_all, pb_all = [], []
    ii = np.arange(cx, dtype=np.int64)
    jj = np.arange(cy, dtype=np.int64)
    for dj in range(0, kmax + 1):
        gy = max(dj - 1, 0) * h
        for di in range(-kmax, kmax + 1):
            gx = max(abs(di) - 1, 0) * h
            if gx * gx + gy * gy >= delta * delta:
                continue
            i0 = ii[max(0, -di):cx - max(0, di)]
            j0 = jj[:cy - dj]
            if i0.size == 0 or j0.size == 0:
                continue
            sq_a = (j0[:, None] * cx + i0[None, :]).reshape(-1)
            sq_b = sq_a + dj * cx + di
            for ta in range(2):
                for tb in range(2):
                    a = 2 * sq_a + ta
                    b = 2 * sq_b + tb
                    keep = b >= a
                    pa_all.append(a[keep])
                    pb_all.append(b[keep])
    pa = np.concatenate(pa_all)
    pb = np.concatenate(pb_all)
    pa, pb = np.unique(np.stack([pa, pb]), axis=1)
    shared = np.zeros(pa.shape[0], dtype=np.int64)
    for p in range(3):
        for q in range(3):
            shared += cells[pa, p] == cells[pb, q]
    sing = shared > 0
    order = np.lexsort((pb[sing], pa[sing]))
    sing_a, sing_b = pa[sing][order], pb[sing][order]
    sep = ~sing
    order = np.lexsort((pb[sep], pa[sep]))
    return sing_a, sing_b, pa[sep][order], pb[sep][order]


def _dofmap(mesh, restrict):
    n = mesh.nodes.shape[0]
    dim = mesh.dim
    dm = np.empty((n, dim), dtype=np.int64)
    if restrict:
        base = mesh.dof_of_node
        for c in range(dim):
            dm[:, c] = np.where(base < 0, -1, base * dim + c)
    else:
        for c in range(dim):
            dm[:, c] = np.arange(n, dtype=np.int64) * dim + c
    return np.ascontiguousarray(dm)


# ----------------------------------------------------------------------
# deterministic triplet merging

class _TripletMerger:
    """Accumulates (row, col, value) triplet streams in a fixed order.

    Small systems go through a dense buffer (unbuffered in-place adds in
    stream order); large ones through sorted partial sparse sums flushed
    at a deterministic cadence.  Either way the result is independent of
    how the triplet blocks were computed, as long as they arrive in the
    canonical block order.
    """

    def __init__(self, ndof):
        self.ndof = ndof
        self._dense = np.zeros((ndof, ndof)) if ndof <= DENSE_DOF_LIMIT else None
        self._acc = None
        self._chunks = []
        self._pending = 0

    def add(self, rows, cols, vals):
        if rows.size == 0:
            return
        if self._dense is not None:
            np.add.at(self._dense, (rows, cols), vals)
            return
        self._chunks.append((rows, cols, vals))
        self._pending += rows.size
        if self._pending >= FLUSH_TRIPLETS:
            self._flush()

    def _flush(self):
        if not self._chunks:
            return
        rows = np.concatenate([c[0] for c in self._chunks])
        cols = np.concatenate([c[1] for c in self._chunks])
        vals = np.concatenate([c[2] for c in self._chunks])
        self._chunks, self._pending = [], 0
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        newgrp = np.empty(rows.size, dtype=bool)
        newgrp[0] = True
        np.not_equal(rows[1:], rows[:-1], out=newgrp[1:])
        newgrp[1:] |= cols[1:] != cols[:-1]
        starts = np.flatnonzero(newgrp)
        sums = np.add.reduceat(vals, starts)
        part = sp.csr_matrix((sums, (rows[starts], cols[starts])),
                             shape=(self.ndof, self.ndof))
        self._acc = part if self._acc is None else self._acc + part

    def tocsr(self):
        if self._dense is not None:
            return sp.csr_matrix(self._dense)
        self._flush()
        if self._acc is None:
            return sp.csr_matrix((self.ndof, self.ndof))
        return self._acc.tocsr()


def _run_blocks(fn_args_list, threads):
    """Run the per-block backend calls, in order, possibly in parallel."""
    if threads is None:
        threads = 1
    if threads <= 1 or len(fn_args_list) <= 1:
        return [fn(*args) for fn, args in fn_args_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futs = [pool.submit(fn, *args) for fn, args in fn_args_list]
        return [f.result() for f in futs]


# ----------------------------------------------------------------------
# stiffness assembly

@dataclass
class StiffnessNonlocal:
    """Assembled pairwise stiffness matrix plus its provenance."""

    matrix: sp.csr_matrix
    mesh: Mesh
    kernel: KernelSpec
    material: MaterialField
    quad: QuadratureRule
    restricted: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.matrix.shape


def _material_arrays(material, mesh):
    mode, payload = material.materialize(mesh)
    nodal = np.zeros(0)
    cellv = np.zeros(0)
    const = 1.0
    if mode == 0:
        const = float(payload)
    elif mode == 1:
        nodal = np.ascontiguousarray(payload, dtype=np.float64)
    else:
        cellv = np.ascontiguousarray(payload, dtype=np.float64)
    return mode, const, nodal, cellv


def _check_mesh_kernel(mesh, kernel):
    if kernel.dim != mesh.dim:
        raise ConfigurationError("kernel dimension %d does not match mesh "
                                 "dimension %d" % (kernel.dim, mesh.dim))
    if abs(mesh.delta - kernel.delta) > 1e-12 * max(1.0, kernel.delta):
        raise ConfigurationError(
            "mesh was padded for horizon %g but the kernel has horizon %g; "
            "rebuild the mesh with the kernel's delta" %
            (mesh.delta, kernel.delta))


def assemble_stiffness_nonlocal(mesh, kernel, material, quad,
                                threads=1, restrict=True, backend=None):
    """Assemble the pairwise stiffness matrix.

    With ``restrict=True`` (default) rows and columns run over the free
    DOFs; ``restrict=False`` keeps every nodal DOF, which is what the
    lifting of inhomogeneous constraint data needs.  The result is exactly
    symmetric and bit-identical for any ``threads``.
    """
    _check_mesh_kernel(mesh, kernel)
    if restrict and mesh.n_free == 0:
        raise ConfigurationError("mesh has no free DOFs inside the domain")
    impl, impl_name = get_backend(backend)
    mode, const, nodal, cellv = _material_arrays(material, mesh)
    gd_x, gd_w = gauss_rule(quad.inner_order)
    gs_x, gs_w = gauss_rule(quad.outer_order)
    dm = _dofmap(mesh, restrict)
    ndof = mesh.n_free if restrict else mesh.nodes.shape[0] * mesh.dim
    xs = np.ascontiguousarray(mesh.nodes[:, 0]) if mesh.dim == 1 else None
    nodes2 = np.ascontiguousarray(mesh.nodes) if mesh.dim == 2 else None
    cells = np.ascontiguousarray(mesh.cells, dtype=np.int64)
    s = kernel.s if kernel.s is not None else 0.0
    family = 0 if kernel.family == "constant" else 1
    common = (family, kernel.norm_const, kernel.delta, s,
              mode, const, nodal, cellv)

    calls = []
    pair_count = 0
    if mesh.dim == 1:
        pa, pb = _pairs_1d(mesh)
        pair_count = pa.size
        for lo in range(0, pa.size, BLOCK_PAIRS):
            hi = min(lo + BLOCK_PAIRS, pa.size)
            calls.append((impl.assemble_pairs_1d,
                          (xs, cells, pa[lo:hi], pb[lo:hi]) + common
                          + (gd_x, gd_w, gs_x, gs_w,
                             quad.grading_levels, quad.grading_ratio, dm)))
    else:
        sing_a, sing_b, sep_a, sep_b = _pairs_2d(mesh)
        pair_count = sing_a.size + sep_a.size
        xbary, xw = triangle_rule(2)
        obary, ow = triangle_rule(quad.outer_order)
        xbary = np.ascontiguousarray(xbary)
        obary = np.ascontiguousarray(obary)
        for lo in range(0, sing_a.size, BLOCK_PAIRS):
            hi = min(lo + BLOCK_PAIRS, sing_a.size)
            calls.append((impl.assemble_pairs_2d_singular,
                          (nodes2, cells, sing_a[lo:hi], sing_b[lo:hi])
                          + common
                          + (gd_x, gd_w, gs_x, gs_w, 8,
                             quad.grading_levels, quad.grading_ratio,
                             xbary, xw, dm)))
        for lo in range(0, sep_a.size, BLOCK_PAIRS):
            hi = min(lo + BLOCK_PAIRS, sep_a.size)
            calls.append((impl.assemble_pairs_2d_separated,
                          (nodes2, cells, sep_a[lo:hi], sep_b[lo:hi])
                          + common + (obary, ow, obary, ow, dm)))
    if pair_count == 0:
        raise ConfigurationError("no interacting element pairs; horizon or "
                                 "mesh size is degenerate")

    merger = _TripletMerger(ndof)
    for rows, cols, vals in _run_blocks(calls, threads):
        merger.add(rows, cols, vals)
    mat = merger.tocsr()
    diag = {
        "pair_count": int(pair_count),
        "backend": impl_name,
        "threads": int(threads if threads else 1),
        "min_entry": float(mat.data.min()) if mat.nnz else 0.0,
        "max_entry": float(mat.data.max()) if mat.nnz else 0.0,
    }
    return StiffnessNonlocal(mat, mesh, kernel, material, quad,
                             restrict, diag)


# ----------------------------------------------------------------------
# mass, loads, projection

def assemble_mass(mesh, restrict=True):
    """P1 mass matrix over the domain part of the mesh (closed form)."""
    dim = mesh.dim
    cells = mesh.cells[mesh.cell_in_omega]
    vols = mesh.cell_volumes()[mesh.cell_in_omega]
    nv = cells.shape[1]
    if dim == 1:
        local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    else:
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    dm = _dofmap(mesh, restrict)
    ndof = mesh.n_free if restrict else mesh.nodes.shape[0] * dim
    rows, cols, vals = [], [], []
    for p in range(nv):
        for q in range(nv):
            for c in range(dim):
                i = dm[cells[:, p], c]
                j = dm[cells[:, q], c]
                keep = (i >= 0) & (j >= 0)
                rows.append(i[keep])
                cols.append(j[keep])
                vals.append(local[p, q] * vols[keep])
    mat = sp.csr_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(ndof, ndof))
    mat.sum_duplicates()
    return mat


def _as_point_fn(g, mesh):
    """Normalize a load/field spec to a callable points -> (m, dim)."""
    dim = mesh.dim
    if isinstance(g, str):
        fn = _expr.parse_vector(g, dim)
        return lambda pts: fn(pts).reshape(-1, dim)
    if isinstance(g, np.ndarray):
        if g.shape[0] != mesh.nodes.shape[0]:
            raise ConfigurationError("nodal field has %d rows, mesh has %d "
                                     "nodes" % (g.shape[0], mesh.nodes.shape[0]))
        vals = g.reshape(mesh.nodes.shape[0], dim)
        return lambda pts: mesh.eval_p1(vals, pts).reshape(-1, dim)
    if callable(g):
        def wrapped(pts):
            out = np.asarray(g(pts), dtype=float)
            if out.ndim == 1:
                out = out[:, None]
            return out.reshape(-1, dim)
        return wrapped
    raise ConfigurationError("unsupported field specification %r" % (g,))


def _cell_quad_points(mesh, order):
    """Quadrature points/weights on every domain cell.

    Returns (points, weights, cell_index) flat arrays; weights include
    cell measures.
    """
    cells = mesh.cells[mesh.cell_in_omega]
    vols = mesh.cell_volumes()[mesh.cell_in_omega]
    verts = mesh.nodes[cells]
    if mesh.dim == 1:
        gx, gw = gauss_rule(order)
        a = verts[:, 0, 0][:, None]
        b = verts[:, 1, 0][:, None]
        pts = (a + (b - a) * gx[None, :]).reshape(-1, 1)
        wts = ((b - a) * gw[None, :]).reshape(-1)
        lam = np.stack([1.0 - gx, gx], axis=1)
    else:
        bary, bw = triangle_rule(order)
        pts = np.einsum("qk,ckd->cqd", bary, verts).reshape(-1, 2)
        wts = (vols[:, None] * bw[None, :]).reshape(-1)
        lam = bary
    nq = lam.shape[0]
    cidx = np.repeat(np.flatnonzero(mesh.cell_in_omega), nq)
    return pts, wts, cidx, lam, cells


def assemble_load(mesh, g, quad=None):
    """Load vector b_i = ∫ g·φ_i over the domain, free DOFs only."""
    quad = quad or QuadratureRule()
    fn = _as_point_fn(g, mesh)
    pts, wts, _, lam, cells = _cell_quad_points(mesh, quad.outer_order)
    gv = fn(pts).reshape(cells.shape[0], -1, mesh.dim)
    w = wts.reshape(cells.shape[0], -1)
    b = np.zeros(mesh.n_free)
    dm = _dofmap(mesh, True)
    for p in range(cells.shape[1]):
        contrib = np.einsum("cq,cqd,q->cd", w, gv, lam[:, p])
        for c in range(mesh.dim):
            dofs = dm[cells[:, p], c]
            keep = dofs >= 0
            np.add.at(b, dofs[keep], contrib[keep, c])
    return b


def assemble_lifting_load(mesh, A_full, u0):
    """Right-hand side correction lifting constraint data into the solve.

    ``u0`` supplies values at constrained nodes (collar and domain
    boundary): a mapping node -> value, a nodal array that is zero at
    free nodes, an expression string, or a callable.  Returns
    f_i = −(A_full ũ0)_i over free DOFs for the interpolant ũ0 equal to
    the data at constrained nodes and zero at free nodes.
    """
    n, dim = mesh.nodes.shape[0], mesh.dim
    if A_full.matrix.shape[0] != n * dim:
        raise ConfigurationError("assemble_lifting_load needs the "
                                 "unrestricted assembly (restrict=False)")
    lifted = np.zeros((n, dim))
    constrained = mesh.node_tag != 0
    if isinstance(u0, dict):
        for node, val in u0.items():
            if mesh.node_tag[node] == 0:
                raise DomainError("constraint data given at free node %d"
                                  % node)
            lifted[node] = val
    elif isinstance(u0, np.ndarray):
        vals = u0.reshape(n, dim)
        bad = np.any(vals != 0.0, axis=1) & ~constrained
        if bad.any():
            raise DomainError("constraint data nonzero at free node %d"
                              % int(np.flatnonzero(bad)[0]))
        lifted[constrained] = vals[constrained]
    else:
        fn = _as_point_fn(u0, mesh)
        lifted[constrained] = fn(mesh.nodes[constrained])
    resid = A_full.matrix @ lifted.reshape(-1)
    free_rows = _dofmap(mesh, False)[mesh.free_nodes].reshape(-1)
    return -resid[free_rows]


def project_Pi0(mesh, f):
    """Cellwise mean values (componentwise) of a field.

    Nodal P1 data projects exactly (vertex average); expressions and
    callables are averaged by Gauss quadrature.
    """
    if isinstance(f, np.ndarray) and f.shape[0] == mesh.nodes.shape[0]:
        vals = f.reshape(mesh.nodes.shape[0], -1)
        return vals[mesh.cells].mean(axis=1)
    fn = _as_point_fn(f, mesh)
    cells = mesh.cells
    verts = mesh.nodes[cells]
    if mesh.dim == 1:
        gx, gw = gauss_rule(3)
        a = verts[:, 0, 0][:, None]
        b = verts[:, 1, 0][:, None]
        pts = (a + (b - a) * gx[None, :]).reshape(-1, 1)
        wref = gw
    else:
        bary, wref = triangle_rule(3)
        pts = np.einsum("qk,ckd->cqd", bary, verts).reshape(-1, 2)
    gv = fn(pts).reshape(cells.shape[0], len(wref), mesh.dim)
    return np.einsum("cqd,q->cd", gv, wref)


# ----------------------------------------------------------------------
# energy and seminorm

def _nodal_field(mesh, u):
    if isinstance(u, np.ndarray):
        return u.reshape(mesh.nodes.shape[0], mesh.dim)
    if isinstance(u, str) or callable(u):
        return mesh.interpolate_vector(u)
    raise ConfigurationError("unsupported displacement specification")


def _quadratic_form(mesh, kernel, material, quad, u_nodal, threads=1):
    A = assemble_stiffness_nonlocal(mesh, kernel, material, quad,
                                    threads=threads, restrict=False)
    v = u_nodal.reshape(-1)
    return float(v @ (A.matrix @ v))


def energy_nonlocal(mesh, kernel, material, quad, u, threads=1):
    """Pairwise energy of a finite element displacement field.

    For fields vanishing on all constrained nodes this is the quadratic
    form of the assembled matrix; otherwise the energy is integrated
    directly over the domain-anchored pair set (twice the domain-by-box
    integral minus the domain-by-domain integral).
    """
    u_nodal = _nodal_field(mesh, u)
    constrained = mesh.node_tag != 0
    if not np.any(u_nodal[constrained]):
        return _quadratic_form(mesh, kernel, material, quad, u_nodal,
                               threads=threads)
    if mesh.dim == 1:
        return _energy_direct_1d(mesh, kernel, material, quad, u_nodal)
    return _energy_direct_2d(mesh, kernel, material, quad, u_nodal)


def seminorm_X(mesh, kernel, quad, u, threads=1):
    """Square root of the unit-material quadratic form of the pair energy."""
    u_nodal = _nodal_field(mesh, u)
    val = _quadratic_form(mesh, kernel, MaterialField("1", dim=mesh.dim),
                          quad, u_nodal, threads=threads)
    return math.sqrt(max(val, 0.0))


def _bond_density_1d(mesh, kernel, material, quad, u_nodal, x, hx, lo, hi):
    """Inner bond-energy integral at one outer point (1-d).

    Panels split at mesh nodes and follow geometric shells centered at
    the outer point across the whole window, so panel widths stay
    proportional to the bond length on both sides of every node.
    """
    if hi <= lo:
        return 0.0
    xs = mesh.nodes[:, 0]
    pts = {lo, hi}
    pts.update(xs[(xs > lo + 1e-14) & (xs < hi - 1e-14)])
    radius = hi - lo
    for k in range(quad.grading_levels + 1):
        for sgn in (1.0, -1.0):
            e = x + sgn * radius * quad.grading_ratio ** k
            if lo + 1e-14 < e < hi - 1e-14:
                pts.add(e)
    if lo + 1e-14 < x < hi - 1e-14:
        pts.add(x)
    edges = np.unique(np.asarray(sorted(pts)))
    # ratio-0.5 shells need a high per-panel order against the rational
    # bond factor; this path is a diagnostic, not the assembly hot loop
    gx, gw = gauss_rule(max(quad.inner_order, 8))
    y, wy = panel_points(edges, gx, gw)
    d = np.abs(y - x)
    ok = d > 0
    y, wy, d = y[ok], wy[ok], d[ok]
    kv = kernel.eval(d)
    uy = mesh.eval_p1(u_nodal, y[:, None]).reshape(-1)
    ux = mesh.eval_p1(u_nodal, np.array([[x]]))[0, 0]
    H = 0.5 * (hx + material.evaluate(y[:, None]))
    du2 = (ux - uy) ** 2
    return float(np.sum(wy * H * kv * du2 / d ** 2))


def _energy_direct_1d(mesh, kernel, material, quad, u_nodal):
    (a, b), = mesh.domain.bounds
    delta = kernel.delta
    xs = mesh.nodes[:, 0]
    # outer panels split where the inner window structure changes slope
    # (nodes, and wherever x +- delta crosses a node or the boundary);
    # the layer-side window integral behaves like 1/(x - boundary), so
    # panels also follow geometric shells toward both domain ends
    pts = {a, b}
    for t in np.concatenate([xs, xs - delta, xs + delta,
                             [a + delta, b - delta]]):
        if a + 1e-14 < t < b - 1e-14:
            pts.add(float(t))
    for k in range(quad.grading_levels + 1):
        for t in (a + (b - a) * quad.grading_ratio ** k,
                  b - (b - a) * quad.grading_ratio ** k):
            if a + 1e-14 < t < b - 1e-14:
                pts.add(t)
    xedges = np.unique(np.asarray(sorted(pts)))
    gx, gw = gauss_rule(max(quad.outer_order, 6))
    xq, xw = panel_points(xedges, gx, gw)
    hx = material.evaluate(xq[:, None])
    total = 0.0
    for k in range(xq.size):
        x = xq[k]
        dA = _bond_density_1d(mesh, kernel, material, quad, u_nodal, x,
                              hx[k], x - delta, x + delta)
        if x - delta >= a and x + delta <= b:
            dB = dA
        else:
            dB = _bond_density_1d(mesh, kernel, material, quad, u_nodal, x,
                                  hx[k], max(x - delta, a), min(x + delta, b))
        total += xw[k] * (2.0 * dA - dB)
    return total


def _radial_edges(rmax, h, levels, ratio):
    """Graded-toward-zero radial edges, none wider than the mesh size."""
    base = graded_panels(rmax, levels, ratio)
    out = [0.0]
    for p, q in zip(base[:-1], base[1:]):
        n = max(1, int(math.ceil((q - p) / h - 1e-12)))
        for k in range(1, n + 1):
            out.append(p + (q - p) * k / n)
    return np.asarray(out)


def _shell_unit_edges(levels, ratio, both_ends=True, max_width=None):
    """Panel edges on [0, 1], geometrically refined toward the ends."""
    pts = {0.0, 1.0}
    for k in range(1, levels + 1):
        pts.add(0.5 * ratio ** k / ratio)
        if both_ends:
            pts.add(1.0 - 0.5 * ratio ** k / ratio)
    edges = np.unique(np.asarray(sorted(pts)))
    if max_width is not None:
        out = [edges[0]]
        for p, q in zip(edges[:-1], edges[1:]):
            n = max(1, int(math.ceil((q - p) / max_width - 1e-12)))
            out.extend(p + (q - p) * (np.arange(1, n + 1) / n))
        edges = np.asarray(out)
    return edges


def _cap_integrals(mesh, kernel, material, quad, u_nodal, pts, ux, hx,
                   dists, nhat, that, chi_lo, chi_hi):
    """Bond-energy integral over a wedge of the horizon ball, batched.

    The wedge at point x spans directions cos(chi) nhat + sin(chi) that
    for chi in (chi_lo, chi_hi) and radii from dist/cos(chi) out to the
    horizon.  The scaled angular/radial grids are shared by all points,
    so everything vectorizes across the batch.
    """
    delta = kernel.delta
    h = mesh.h
    sedges = _shell_unit_edges(10, quad.grading_ratio)
    gs = gauss_rule(max(quad.outer_order, 3))
    sq, sw = panel_points(sedges, *gs)
    rad_levels = 2 if kernel.radial_exponent() >= 0 else 10
    tedges = _shell_unit_edges(rad_levels, quad.grading_ratio,
                               both_ends=False, max_width=h / delta)
    gt = gauss_rule(max(quad.inner_order, 3))
    tq, twt = panel_points(tedges, *gt)

    total = np.zeros(pts.shape[0])
    batch = max(1, int(4e6 // (sq.size * tq.size)))
    for lo in range(0, pts.shape[0], batch):
        hi = min(lo + batch, pts.shape[0])
        m = hi - lo
        span = (chi_hi[lo:hi] - chi_lo[lo:hi])[:, None]
        chi = chi_lo[lo:hi, None] + span * sq[None, :]
        cc, ss = np.cos(chi), np.sin(chi)
        zdir = cc[..., None] * nhat[lo:hi, None, :] \
            + ss[..., None] * that[lo:hi, None, :]
        rlo = dists[lo:hi, None] / cc
        rspan = np.maximum(delta - rlo, 0.0)
        r = rlo[..., None] + rspan[..., None] * tq[None, None, :]
        z = zdir[:, :, None, :] * r[..., None]
        y = pts[lo:hi, None, None, :] + z
        du = mesh.eval_p1(u_nodal, y.reshape(-1, 2)).reshape(m, sq.size,
                                                             tq.size, 2) \
            - ux[lo:hi, None, None, :]
        proj = (du * zdir[:, :, None, :]).sum(-1)
        hy = material.evaluate(y.reshape(-1, 2)).reshape(m, sq.size, tq.size)
        H = 0.5 * (hx[lo:hi, None, None] + hy)
        vals = H * kernel.eval(r) * proj ** 2 / r    # density times r
        w = span[..., None] * sw[None, :, None] * rspan[..., None] \
            * twt[None, None, :]
        total[lo:hi] = (vals * w).sum(axis=(1, 2))
    return total


def _density_2d_at(mesh, kernel, material, quad, u_nodal, pts):
    """Pair-energy densities at arbitrary interior points (2-d).

    Returns (dA, dB): the bond-energy integral over the full horizon
    ball and over the ball clipped to the domain box.
    """
    bounds = mesh.domain.bounds
    (ax, bx), (ay, by) = bounds
    delta = kernel.delta
    h = mesh.h
    hx = material.evaluate(pts)

    if 2.0 * delta > min(bx - ax, by - ay):
        raise ConfigurationError(
            "direct energy evaluation needs the horizon to fit within "
            "half the domain width")

    # Radial grading toward r = 0 only pays off when the kernel itself is
    # singular there; the constant family needs no more than the h-sized
    # panels that track the displacement kinks.
    rad_levels = 2 if kernel.radial_exponent() >= 0 else 10
    redges = _radial_edges(delta, h, min(quad.grading_levels, rad_levels),
                           quad.grading_ratio)
    gr_x, gr_w = gauss_rule(max(quad.inner_order, 3))
    rho, rw = panel_points(redges, gr_x, gr_w)
    nsec = 8
    gt_x, gt_w = gauss_rule(max(quad.outer_order, 3))
    sector = 2.0 * np.pi / nsec
    theta = (sector * (np.arange(nsec)[:, None] + gt_x[None, :])).reshape(-1)
    tw = np.tile(sector * gt_w, nsec)
    zdir = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    kfac = kernel.eval(rho) * rho * rw          # radial measure and kernel

    # full-ball densities, batched over evaluation points
    dA = np.zeros(pts.shape[0])
    z = rho[:, None, None] * zdir[None, :, :]   # (nr, nth, 2)
    batch = max(1, int(2e6 // (rho.size * theta.size)))
    ux = mesh.eval_p1(u_nodal, pts)
    for lo in range(0, pts.shape[0], batch):
        hi = min(lo + batch, pts.shape[0])
        y = pts[lo:hi, None, None, :] + z[None, :, :, :]
        ydisp = mesh.eval_p1(u_nodal, y.reshape(-1, 2))
        du = ydisp.reshape(hi - lo, rho.size, theta.size, 2) \
            - ux[lo:hi, None, None, :]
        proj = du[..., 0] * zdir[None, None, :, 0] \
            + du[..., 1] * zdir[None, None, :, 1]
        hy = material.evaluate(y.reshape(-1, 2)).reshape(hi - lo, rho.size,
                                                         theta.size)
        H = 0.5 * (hx[lo:hi, None, None] + hy)
        dens = proj ** 2 / rho[None, :, None] ** 2 * H
        dA[lo:hi] = np.einsum("xrt,r,t->x", dens, kfac, tw)

    # The clipped-ball density differs from dA only for points within a
    # horizon of the boundary.  There the clipped part is a union of
    # circular caps, one per nearby side; subtract each cap and add back
    # the corner lenses that two overlapping caps both removed.
    dB = dA.copy()
    eps = 1e-12 * delta
    margins = ((pts[:, 0] - ax, np.array([-1.0, 0.0])),
               (bx - pts[:, 0], np.array([1.0, 0.0])),
               (pts[:, 1] - ay, np.array([0.0, -1.0])),
               (by - pts[:, 1], np.array([0.0, 1.0])))
    for dist, nhat in margins:
        sel = np.flatnonzero(dist < delta - eps)
        if sel.size == 0:
            continue
        d = dist[sel]
        alpha = np.arccos(np.minimum(d / delta, 1.0))
        nh = np.broadcast_to(nhat, (sel.size, 2))
        th = np.broadcast_to(np.array([-nhat[1], nhat[0]]), (sel.size, 2))
        dB[sel] -= _cap_integrals(mesh, kernel, material, quad, u_nodal,
                                  pts[sel], ux[sel], hx[sel], d, nh, th,
                                  -alpha, alpha)
    for dist1, n1 in margins[:2]:
        for dist2, n2 in margins[2:]:
            rsq = dist1 ** 2 + dist2 ** 2
            sel = np.flatnonzero(rsq < (delta - eps) ** 2)
            if sel.size == 0:
                continue
            rc = np.sqrt(rsq[sel])
            # one wedge per side chord, split at the corner direction
            for dchord, nn, tt in ((dist1[sel], n1, n2),
                                   (dist2[sel], n2, n1)):
                nh = np.broadcast_to(nn, (sel.size, 2))
                th = np.broadcast_to(tt, (sel.size, 2))
                dB[sel] += _cap_integrals(
                    mesh, kernel, material, quad, u_nodal, pts[sel],
                    ux[sel], hx[sel], dchord, nh, th,
                    np.arccos(np.minimum(dchord / rc, 1.0)),
                    np.arccos(np.minimum(dchord / delta, 1.0)))
    return dA, dB


def energy_density_nonlocal(mesh, kernel, material, quad, u, points):
    """Pair-energy density 2 dA - dB at given points inside the domain.

    dA integrates bonds over the full horizon ball, dB over the ball
    clipped to the domain; away from the boundary the two coincide and
    the density reduces to the plain bond-energy density.
    """
    u_nodal = _nodal_field(mesh, u)
    pts = np.asarray(points, dtype=float).reshape(-1, mesh.dim)
    if mesh.dim == 1:
        (a, b), = mesh.domain.bounds
        delta = kernel.delta
        hx = material.evaluate(pts)
        out = np.empty(pts.shape[0])
        for k in range(pts.shape[0]):
            x = float(pts[k, 0])
            dA = _bond_density_1d(mesh, kernel, material, quad, u_nodal, x,
                                  hx[k], x - delta, x + delta)
            if x - delta >= a and x + delta <= b:
                dB = dA
            else:
                dB = _bond_density_1d(mesh, kernel, material, quad, u_nodal,
                                      x, hx[k], max(x - delta, a),
                                      min(x + delta, b))
            out[k] = 2.0 * dA - dB
        return out
    dA, dB = _density_2d_at(mesh, kernel, material, quad, u_nodal, pts)
    return 2.0 * dA - dB


def _energy_direct_2d(mesh, kernel, material, quad, u_nodal):
    pts, wts, _, _, _ = _cell_quad_points(mesh, quad.outer_order)
    dA, dB = _density_2d_at(mesh, kernel, material, quad, u_nodal, pts)
    # the pair set counts domain-exterior bonds once and domain-interior
    # bonds twice: integrate 2 dA - dB over the domain
    return float(np.sum(wts * (2.0 * dA - dB)))


# ----------------------------------------------------------------------
# text export

def export_matrix_text(matrix, path):
    """Coordinate text dump (row, column, value) with 17 digits."""
    mat = matrix.matrix if isinstance(matrix, StiffnessNonlocal) else matrix
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write("%d %d %d\n" % (coo.shape[0], coo.shape[1], coo.nnz))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write("%d %d %.17g\n" % (r, c, v))
