"""Structured simplicial meshes of a padded interval or rectangle.

The computational domain is an interval or an axis-aligned rectangle, padded
by whole cells so that the interaction collar of width ``delta`` (the
volumetric boundary layer) is resolved exactly.  Nodes are tagged as
``interior`` (strictly inside the domain), ``closure-boundary`` (on the
domain boundary), or ``layer`` (in the padding); only interior nodes carry
free degrees of freedom, one per spatial component.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

TAG_INTERIOR = 0
TAG_BOUNDARY = 1
TAG_LAYER = 2

_TAG_NAMES = {TAG_INTERIOR: "interior", TAG_BOUNDARY: "closure-boundary",
              TAG_LAYER: "layer"}

#: quasi-uniformity ratio (diameter / inscribed diameter) of the cell shapes
_RATIO_INTERVAL = 1.0
_RATIO_RIGHT_TRIANGLE = math.sqrt(2.0) / (2.0 - math.sqrt(2.0))


@dataclass(frozen=True)
class Domain:
    """An open interval (dim 1) or axis-aligned rectangle (dim 2).

    ``bounds`` holds one (lo, hi) pair per axis.
    """

    dim: int
    bounds: tuple

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError("dimension must be 1 or 2")
        if len(self.bounds) != self.dim:
            raise DomainError("need one (lo, hi) pair per axis")
        for lo, hi in self.bounds:
            if not hi > lo:
                raise DomainError("domain must have nonempty interior")

    @staticmethod
    def interval(a, b):
        return Domain(1, ((float(a), float(b)),))

    @staticmethod
    def rectangle(ax, bx, ay, by):
        return Domain(2, ((float(ax), float(bx)), (float(ay), float(by))))

    def side_lengths(self):
        return tuple(hi - lo for lo, hi in self.bounds)


class Mesh:
    """A uniform simplicial mesh of the padded domain.

    Attributes
    ----------
    domain : Domain
        The unpadded domain whose interior carries the free DOFs.
    dim : int
        Spatial dimension (1 or 2).
    h : float
        Mesh size: the grid spacing in 1-d, the maximal cell diameter in 2-d
        is ``h * sqrt(2)``.
    delta : float
        Horizon the padding was built for.
    nodes : ndarray, shape (n_nodes, dim)
        Vertex coordinates.
    cells : ndarray, shape (n_cells, dim + 1)
        Vertex indices per segment/triangle.
    node_tag : ndarray, shape (n_nodes,)
        Region tag per node (interior / closure-boundary / layer).
    dof_of_node : ndarray, shape (n_nodes,)
        Free-node rank, or -1 for constrained nodes.  The DOF index of
        (node, component) is ``dof_of_node[node] * dim + component``.
    cell_in_omega : ndarray of bool, shape (n_cells,)
        Whether the cell lies in the closure of the domain.
    """

    def __init__(self, domain, h, delta, pad_cells, origin, cells_per_axis):
        self.domain = domain
        self.dim = domain.dim
        self.h = float(h)
        self.delta = float(delta)
        self.pad_cells = int(pad_cells)
        self.origin = tuple(float(o) for o in origin)
        self.cells_per_axis = tuple(int(c) for c in cells_per_axis)
        self._build_grid()

    # ------------------------------------------------------------------
    # construction helpers

    def _axis_coords(self, axis):
        n = self.cells_per_axis[axis] + 1
        return self.origin[axis] + self.h * np.arange(n)

    def _inner_cell_range(self, axis):
        """Index range [lo, hi) of cells inside the domain along an axis."""
        lo = self.pad_cells
        hi = self.cells_per_axis[axis] - self.pad_cells
        return lo, hi

    def _build_grid(self):
        p = self.pad_cells
        if self.dim == 1:
            x = self._axis_coords(0)
            self.nodes = x.reshape(-1, 1)
            n_cells = self.cells_per_axis[0]
            idx = np.arange(n_cells)
            self.cells = np.column_stack([idx, idx + 1]).astype(np.int64)
            m = n_cells - 2 * p
            k = np.arange(len(x))
            tags = np.full(len(x), TAG_LAYER, dtype=np.uint8)
            tags[(k > p) & (k < p + m)] = TAG_INTERIOR
            tags[(k == p) | (k == p + m)] = TAG_BOUNDARY
            self.node_tag = tags
            self.cell_in_omega = (idx >= p) & (idx < p + m)
            self.quasi_uniformity_ratio = _RATIO_INTERVAL
        else:
            xs = self._axis_coords(0)
            ys = self._axis_coords(1)
            nx, ny = len(xs), len(ys)
            X, Y = np.meshgrid(xs, ys, indexing="xy")
            # node id = j * nx + i (x fastest)
            self.nodes = np.column_stack([X.reshape(-1), Y.reshape(-1)])
            cx, cy = self.cells_per_axis
            mx, my = cx - 2 * p, cy - 2 * p
            cells = []
            for j in range(cy):
                for i in range(cx):
                    n00 = j * nx + i
                    n10 = j * nx + i + 1
                    n01 = (j + 1) * nx + i
                    n11 = (j + 1) * nx + i + 1
                    cells.append((n00, n10, n11))  # lower (below the diagonal)
                    cells.append((n00, n11, n01))  # upper
            self.cells = np.asarray(cells, dtype=np.int64)
            ii = np.tile(np.arange(nx), ny)
            jj = np.repeat(np.arange(ny), nx)
            in_x = (ii >= p) & (ii <= p + mx)
            in_y = (jj >= p) & (jj <= p + my)
            strict_x = (ii > p) & (ii < p + mx)
            strict_y = (jj > p) & (jj < p + my)
            tags = np.full(nx * ny, TAG_LAYER, dtype=np.uint8)
            tags[in_x & in_y] = TAG_BOUNDARY
            tags[strict_x & strict_y] = TAG_INTERIOR
            self.node_tag = tags
            ci = np.tile(np.repeat(np.arange(cx), 2), cy)
            cj = np.repeat(np.arange(cy), 2 * cx)
            self.cell_in_omega = ((ci >= p) & (ci < p + mx)
                                  & (cj >= p) & (cj < p + my))
            self.quasi_uniformity_ratio = _RATIO_RIGHT_TRIANGLE

        self.n_nodes = len(self.nodes)
        self.n_cells = len(self.cells)
        free = np.flatnonzero(self.node_tag == TAG_INTERIOR)
        self.free_nodes = free
        self.dof_of_node = np.full(self.n_nodes, -1, dtype=np.int64)
        self.dof_of_node[free] = np.arange(len(free))
        self.n_free = len(free) * self.dim

    # ------------------------------------------------------------------
    # queries

    def cell_volumes(self):
        """Length (1-d) or area (2-d) per cell; uniform for these meshes."""
        vol = self.h if self.dim == 1 else 0.5 * self.h ** 2
        return np.full(self.n_cells, vol)

    def cell_centroids(self):
        verts = self.nodes[self.cells]  # (C, dim+1, dim)
        return verts.mean(axis=1)

    def interpolate_scalar(self, field):
        """Nodal values of a scalar field (callable or expression string)."""
        fn = self._as_callable(field, vector=False)
        return np.asarray(fn(self._eval_points()), dtype=float).reshape(-1)

    def interpolate_vector(self, field):
        """Nodal values (n_nodes, dim) of a displacement-type field."""
        fn = self._as_callable(field, vector=True)
        vals = np.asarray(fn(self._eval_points()), dtype=float)
        return vals.reshape(self.n_nodes, self.dim)

    def zero_constrained(self, nodal_values):
        """Copy of nodal values with layer and boundary nodes set to zero."""
        out = np.array(nodal_values, dtype=float, copy=True)
        out[self.node_tag != TAG_INTERIOR] = 0.0
        return out

    def free_values(self, nodal_values):
        """Restrict (n_nodes, dim) nodal values to the free-DOF vector."""
        vals = np.asarray(nodal_values, dtype=float).reshape(self.n_nodes,
                                                             self.dim)
        return vals[self.free_nodes].reshape(-1)

    def expand_free(self, dof_values):
        """Scatter a free-DOF vector to (n_nodes, dim) with zeros elsewhere."""
        out = np.zeros((self.n_nodes, self.dim))
        out[self.free_nodes] = np.asarray(dof_values, dtype=float).reshape(
            len(self.free_nodes), self.dim)
        return out

    def _eval_points(self):
        return self.nodes[:, 0] if self.dim == 1 else self.nodes

    def _as_callable(self, field, vector):
        if callable(field):
            return field
        from ._expr import parse_scalar, parse_vector
        if vector:
            return parse_vector(field, self.dim)
        return parse_scalar(field, self.dim)

    def eval_p1(self, nodal_values, points):
        """Evaluate the piecewise-linear interpolant at arbitrary points.

        ``nodal_values`` has shape (n_nodes,) or (n_nodes, k); points outside
        the meshed box are clamped to its closure before evaluation.
        """
        vals = np.asarray(nodal_values, dtype=float)
        squeeze = vals.ndim == 1
        vals = vals.reshape(self.n_nodes, -1)
        pts = np.asarray(points, dtype=float)
        if self.dim == 1:
            x = pts.reshape(-1)
            t = (x - self.origin[0]) / self.h
            i = np.clip(np.floor(t).astype(np.int64), 0,
                        self.cells_per_axis[0] - 1)
            f = t - i
            out = (1.0 - f)[:, None] * vals[i] + f[:, None] * vals[i + 1]
        else:
            nx = self.cells_per_axis[0] + 1
            tx = (pts[:, 0] - self.origin[0]) / self.h
            ty = (pts[:, 1] - self.origin[1]) / self.h
            i = np.clip(np.floor(tx).astype(np.int64), 0,
                        self.cells_per_axis[0] - 1)
            j = np.clip(np.floor(ty).astype(np.int64), 0,
                        self.cells_per_axis[1] - 1)
            fx = np.clip(tx - i, 0.0, 1.0)
            fy = np.clip(ty - j, 0.0, 1.0)
            n00 = j * nx + i
            n10 = n00 + 1
            n01 = n00 + nx
            n11 = n01 + 1
            lower = fy <= fx
            # lower triangle (n00, n10, n11): u = u00 + fx*(u10-u00) + fy*(u11-u10)
            # upper triangle (n00, n11, n01): u = u00 + fx*(u11-u01) + fy*(u01-u00)
            out = np.where(
                lower[:, None],
                vals[n00] + fx[:, None] * (vals[n10] - vals[n00])
                + fy[:, None] * (vals[n11] - vals[n10]),
                vals[n00] + fx[:, None] * (vals[n11] - vals[n01])
                + fy[:, None] * (vals[n01] - vals[n00]),
            )
        return out.reshape(-1) if squeeze else out

    def tag_name(self, node):
        return _TAG_NAMES[int(self.node_tag[node])]


def _cell_count(length, h, what):
    m = length / h
    m_round = round(m)
    if m_round < 1 or abs(m - m_round) > 1e-9 * max(1.0, abs(m)):
        raise ConfigurationError(
            "mesh size h = %g must divide the %s length %g exactly"
            % (h, what, length))
    return int(m_round)


def _padding_cells(delta, h):
    if delta < 0:
        raise DomainError("horizon delta must be nonnegative, got %g" % delta)
    if delta == 0:
        return 0
    return int(math.ceil(delta / h - 1e-12))


def build_interval_mesh(domain, delta, h):
    """Uniform mesh of the padded interval; padding rounds delta up to cells."""
    if domain.dim != 1:
        raise DomainError("build_interval_mesh needs a one-dimensional domain")
    if not h > 0:
        raise ConfigurationError("mesh size h must be positive")
    (a, b), = domain.bounds
    m = _cell_count(b - a, h, "interval")
    p = _padding_cells(delta, h)
    return Mesh(domain, h, delta, p, (a - p * h,), (m + 2 * p,))


def build_rect_mesh(domain, delta, h):
    """Uniform triangulated mesh of the padded rectangle.

    Every grid square is split along the same diagonal into two triangles,
    so the triangulation is invariant under point reflection through any
    grid node.
    """
    if domain.dim != 2:
        raise DomainError("build_rect_mesh needs a two-dimensional domain")
    if not h > 0:
        raise ConfigurationError("mesh size h must be positive")
    (ax, bx), (ay, by) = domain.bounds
    mx = _cell_count(bx - ax, h, "x side")
    my = _cell_count(by - ay, h, "y side")
    p = _padding_cells(delta, h)
    return Mesh(domain, h, delta, p, (ax - p * h, ay - p * h),
                (mx + 2 * p, my + 2 * p))


def build_mesh(domain, delta, h):
    """Dimension-dispatching mesh builder."""
    if domain.dim == 1:
        return build_interval_mesh(domain, delta, h)
    return build_rect_mesh(domain, delta, h)


def restrict_to_omega(mesh):
    """The companion mesh holding only the cells inside the domain closure.

    Free DOFs of the result are the interior nodes (homogeneous boundary
    condition on the domain boundary); for a mesh built with ``delta = 0``
    this is the identity construction.
    """
    if mesh.dim == 1:
        return build_interval_mesh(mesh.domain, 0.0, mesh.h)
    return build_rect_mesh(mesh.domain, 0.0, mesh.h)


def export_mesh_text(mesh, path):
    """Plain-text export: vertices, cells, and one tag line per node."""
    with open(path, "w") as fh:
        for i, xy in enumerate(mesh.nodes):
            coords = " ".join("%.17g" % c for c in xy)
            fh.write("vertex %d %s\n" % (i, coords))
        for i, cell in enumerate(mesh.cells):
            fh.write("cell %d %s\n" % (i, " ".join(str(v) for v in cell)))
        for i in range(mesh.n_nodes):
            fh.write("tag %d %s\n" % (i, mesh.tag_name(i)))
