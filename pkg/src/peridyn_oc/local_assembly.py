"""Assembly of the zero-horizon limit form on P1 elements.

The limit bilinear form couples symmetrized gradients and divergences,

    (1 / (n (n + 2))) * integral over the domain of
        h(x) * (2 <Sym grad u, Sym grad v>_F + div u * div v),

and P1 gradients are constant per cell, so each element block is exact
linear algebra; only the material coefficient needs quadrature, sampled
at cell midpoints (exact for constants and cellwise-constant fields,
second order otherwise).  In one dimension the form collapses to the
weighted Laplacian ``integral h u' v'``.

Everything here lives on an unpadded mesh (``restrict_to_omega`` of a
horizon mesh, or any mesh built with ``delta = 0``); free DOFs are the
nodes strictly inside the domain.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .kernel import MaterialField
from .mesh import Mesh


@dataclass
class StiffnessLocal:
    """Assembled zero-horizon stiffness matrix plus its provenance."""

    matrix: sp.csr_matrix
    mesh: Mesh
    material: MaterialField
    restricted: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.matrix.shape


def _require_unpadded(mesh):
    if mesh.pad_cells != 0:
        raise ConfigurationError(
            "local assembly needs an unpadded mesh; pass the mesh through "
            "restrict_to_omega first")


def _cell_gradients(mesh):
    """Constant P1 basis gradients per cell, shape (n_cells, nvert, dim)."""
    verts = mesh.nodes[mesh.cells]  # (C, nvert, dim)
    if mesh.dim == 1:
        length = verts[:, 1, 0] - verts[:, 0, 0]
        grads = np.empty((mesh.n_cells, 2, 1))
        grads[:, 0, 0] = -1.0 / length
        grads[:, 1, 0] = 1.0 / length
        return grads
    e1 = verts[:, 1] - verts[:, 0]
    e2 = verts[:, 2] - verts[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    grads = np.empty((mesh.n_cells, 3, 2))
    # gradient of the barycentric coordinate of each vertex
    grads[:, 1, 0] = e2[:, 1] / det
    grads[:, 1, 1] = -e2[:, 0] / det
    grads[:, 2, 0] = -e1[:, 1] / det
    grads[:, 2, 1] = e1[:, 0] / det
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return grads


def _material_midpoints(material, mesh):
    mode, payload = material.materialize(mesh)
    if mode == 0:
        return np.full(mesh.n_cells, float(payload))
    if mode == 2:
        return np.asarray(payload, dtype=float)
    return material.evaluate(mesh.cell_centroids())


def _element_blocks(mesh, hbar):
    """Per-cell DOF blocks of the limit form, shape (C, nvert*dim, ...)."""
    n = mesh.dim
    grads = _cell_gradients(mesh)
    vols = mesh.cell_volumes()
    scale = (hbar * vols) / (n * (n + 2))
    gdot = np.einsum("cpd,cqd->cpq", grads, grads)
    nvert = grads.shape[1]
    ndl = nvert * n
    blocks = np.zeros((mesh.n_cells, ndl, ndl))
    for c in range(n):
        for d in range(n):
            term = grads[:, :, None, d] * grads[:, None, :, c]
            term = term + grads[:, :, None, c] * grads[:, None, :, d]
            if c == d:
                term = term + gdot
            blocks[:, c::n, d::n] = term * scale[:, None, None]
    return blocks


def assemble_stiffness_local(mesh, material, restrict=True):
    """Assemble the limit stiffness matrix on an unpadded mesh.

    With ``restrict=True`` rows and columns run over the free DOFs
    (interior nodes); ``restrict=False`` keeps every nodal DOF.
    """
    _require_unpadded(mesh)
    if restrict and mesh.n_free == 0:
        raise ConfigurationError("mesh has no free DOFs inside the domain")
    hbar = _material_midpoints(material, mesh)
    blocks = _element_blocks(mesh, hbar)
    n = mesh.dim
    nvert = mesh.cells.shape[1]
    if restrict:
        dof = mesh.dof_of_node[mesh.cells]  # (C, nvert), -1 when constrained
        cdof = np.where(dof < 0, -1, n * dof)
        ndof = mesh.n_free
    else:
        cdof = n * mesh.cells
        ndof = mesh.n_nodes * n
    slot = np.empty((mesh.n_cells, nvert * n), dtype=np.int64)
    for c in range(n):
        slot[:, c::n] = np.where(cdof < 0, -1, cdof + c)
    rows = np.repeat(slot[:, :, None], nvert * n, axis=2)
    cols = np.repeat(slot[:, None, :], nvert * n, axis=1)
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix(
        (blocks[keep], (rows[keep], cols[keep])), shape=(ndof, ndof)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return StiffnessLocal(matrix=mat, mesh=mesh, material=material,
                          restricted=restrict,
                          diagnostics={"cells": int(mesh.n_cells)})


def assemble_mass(mesh, restrict=True, weight=None):
    """Consistent P1 mass matrix over the same DOF layout.

    ``weight`` is an optional per-cell array multiplying each element
    block (used for cellwise tracking weights).  Vector meshes get one
    scalar mass block per component.
    """
    _require_unpadded(mesh)
    n = mesh.dim
    nvert = mesh.cells.shape[1]
    vols = mesh.cell_volumes()
    if weight is not None:
        vols = vols * np.asarray(weight, dtype=float)
    base = (np.ones((nvert, nvert)) + np.eye(nvert))
    base /= (nvert * (nvert + 1))
    blocks = np.zeros((mesh.n_cells, nvert * n, nvert * n))
    for c in range(n):
        blocks[:, c::n, c::n] = vols[:, None, None] * base[None, :, :]
    if restrict:
        dof = mesh.dof_of_node[mesh.cells]
        cdof = np.where(dof < 0, -1, n * dof)
        ndof = mesh.n_free
    else:
        cdof = n * mesh.cells
        ndof = mesh.n_nodes * n
    slot = np.empty((mesh.n_cells, nvert * n), dtype=np.int64)
    for c in range(n):
        slot[:, c::n] = np.where(cdof < 0, -1, cdof + c)
    rows = np.repeat(slot[:, :, None], nvert * n, axis=2)
    cols = np.repeat(slot[:, None, :], nvert * n, axis=1)
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix(
        (blocks[keep], (rows[keep], cols[keep])), shape=(ndof, ndof)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _nodal_field(mesh, u):
    if callable(u) or isinstance(u, str):
        return mesh.interpolate_vector(u)
    arr = np.asarray(u, dtype=float)
    if arr.size == mesh.n_nodes * mesh.dim:
        return arr.reshape(mesh.n_nodes, mesh.dim)
    raise ConfigurationError(
        "field has %d values; expected %d nodal components"
        % (arr.size, mesh.n_nodes * mesh.dim))


def seminorm_H1(mesh, u):
    """First-order seminorm: L2 norm of the (cellwise constant) gradient."""
    _require_unpadded(mesh)
    vals = _nodal_field(mesh, u)
    grads = _cell_gradients(mesh)
    gu = np.einsum("cpd,cpk->ckd", grads, vals[mesh.cells])
    vols = mesh.cell_volumes()
    return float(np.sqrt(np.einsum("ckd,ckd,c->", gu, gu, vols)))


def energy_local(mesh, material, u):
    """Limit energy of a P1 displacement field (quadratic form of B_0)."""
    _require_unpadded(mesh)
    vals = _nodal_field(mesh, u)
    n = mesh.dim
    hbar = _material_midpoints(material, mesh)
    grads = _cell_gradients(mesh)
    gu = np.einsum("cpd,cpk->ckd", grads, vals[mesh.cells])  # (C, k, d)
    sym = 0.5 * (gu + np.swapaxes(gu, 1, 2))
    div = np.trace(gu, axis1=1, axis2=2)
    dens = 2.0 * np.einsum("ckd,ckd->c", sym, sym) + div * div
    vols = mesh.cell_volumes()
    return float(np.sum(hbar * vols * dens) / (n * (n + 2)))


def export_matrix_text(matrix, path):
    """Coordinate text dump (row, column, value) with 17 digits."""
    mat = matrix.matrix if isinstance(matrix, StiffnessLocal) else matrix
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write("%d %d %d\n" % (coo.shape[0], coo.shape[1], coo.nnz))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write("%d %d %.17g\n" % (r, c, v))
