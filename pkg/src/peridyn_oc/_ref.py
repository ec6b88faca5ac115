"""Pure-Python reference implementation of the pairwise assembly kernels.

This module mirrors the compiled extension ``_accel`` operation for
operation.  It is the fallback when the extension is unavailable and the
ground truth the extension is tested against.  Semantics that both
implementations share:

* Element pairs arrive as index arrays ``(pa, pb)`` with ``pa <= pb``; each
  unordered pair appears exactly once.
* For distinct elements the computed block covers the ordered product
  domain once and is emitted with a factor 2 (the reversed ordering
  contributes the same values by symmetry of the integrand).
* For an identical pair in 1-d only the positive-separation half is
  integrated; the negative half is recovered by the slot relabeling that
  swaps the two elements' hat-function slots.
* Output triplets are exactly symmetric: the upper block (including the
  diagonal) is computed once and mirrored bitwise.

Within one backend the triplet stream is a deterministic function of the
pair block, so assembly is bit-identical for any thread count.  Across
backends the summation order differs (vectorized reductions here, scalar
loops in the extension), so the assembled matrices agree to a few ulps
of the slot-integral magnitudes rather than bitwise.

Slot layout: hat functions of the first element enter with a plus sign
(evaluated at the first integration point), those of the second element
with a minus sign (evaluated at the second point), so that summing slots
of a shared vertex reproduces the projected difference of its basis
function.
"""

import math

import numpy as np

from .quadrature import graded_panels

_EDGE_TOL = 1e-14


_PANEL_GROWTH = 1.2


def _d_edges(dlo, dhi, bps, levels, ratio):
    """Panel edges in the separation variable on [dlo, dhi].

    Breakpoints split the interval where the inner cross-section changes
    slope.  The leading interval is graded toward zero separation when
    the pair touches; every other interval gets panels whose width stays
    proportional to the separation, which keeps a fixed Gauss order
    accurate against the 1/d^2 bond factor.
    """
    tiny = _EDGE_TOL * dhi
    segs = [dlo]
    for b in sorted(bps):
        if b > segs[-1] + tiny and b < dhi - tiny:
            segs.append(b)
    segs.append(dhi)
    edges = []
    for p, q in zip(segs[:-1], segs[1:]):
        if q - p <= tiny:
            continue
        if p <= tiny:
            sub = graded_panels(q, levels, ratio)
        else:
            # scalar libm calls keep this bitwise identical to the
            # compiled backend (vectorized pow may differ by an ulp)
            n = max(1, int(math.ceil(math.log(q / p)
                                     / math.log(_PANEL_GROWTH))))
            sub = [p * math.pow(q / p, j / n) for j in range(n + 1)]
        for e in sub:
            if not edges or e > edges[-1] + tiny:
                edges.append(e)
    return np.asarray(edges)


def _kernel_radial(family, knorm, s, dim, r):
    if family == 0:
        return np.full_like(r, knorm)
    return knorm * r ** (2.0 - dim - 2.0 * s)


def assemble_pairs_1d(xs, cells, pa, pb, family, knorm, delta, s,
                      mat_mode, mat_const, mat_nodal, mat_cell,
                      gd_x, gd_w, gs_x, gs_w, levels, ratio, dofmap):
    """Stiffness triplets for a block of 1-d element pairs.

    The outer integration runs over the separation d = y - x on graded,
    kink-split panels; the inner integration over the x cross-section slab
    is a plain Gauss rule (the integrand is polynomial there).
    """
    rows, cols, vals = [], [], []
    sigma = np.array([2, 3, 0, 1])
    for a, b in zip(pa, pb):
        na0, na1 = cells[a, 0], cells[a, 1]
        nb0, nb1 = cells[b, 0], cells[b, 1]
        a0, a1 = xs[na0], xs[na1]
        b0, b1 = xs[nb0], xs[nb1]
        ha, hb = a1 - a0, b1 - b0
        dlo = max(b0 - a1, 0.0)
        dhi = min(b1 - a0, delta)
        if dhi - dlo <= _EDGE_TOL * delta:
            continue
        edges = _d_edges(dlo, dhi, (b0 - a0, b1 - a1), levels, ratio)
        wid = edges[1:] - edges[:-1]
        d = (edges[:-1, None] + wid[:, None] * gd_x[None, :]).reshape(-1)
        wd = (wid[:, None] * gd_w[None, :]).reshape(-1)
        keep = d > 0.0
        d, wd = d[keep], wd[keep]

        kv = _kernel_radial(family, knorm, s, 1, d)
        xlo = np.maximum(a0, b0 - d)
        xhi = np.minimum(a1, b1 - d)
        sl = xhi - xlo
        ok = sl > 0.0
        d, wd, kv, xlo, sl = d[ok], wd[ok], kv[ok], xlo[ok], sl[ok]
        if d.size == 0:
            continue

        x = xlo[:, None] + sl[:, None] * gs_x[None, :]
        wx = sl[:, None] * gs_w[None, :]
        y = x + d[:, None]
        psi = np.stack([
            (a1 - x) / ha,
            (x - a0) / ha,
            -(b1 - y) / hb,
            -(y - b0) / hb,
        ])
        if mat_mode == 0:
            hpair = mat_const
        elif mat_mode == 1:
            hx = psi[0] * mat_nodal[na0] + psi[1] * mat_nodal[na1]
            hy = -psi[2] * mat_nodal[nb0] - psi[3] * mat_nodal[nb1]
            hpair = 0.5 * (hx + hy)
        else:
            hpair = 0.5 * (mat_cell[a] + mat_cell[b])
        w = (wd * kv / d ** 2)[:, None] * wx * hpair
        S = np.einsum("smk,tmk,mk->st", psi, psi, w)

        if a == b:
            M = S + S[np.ix_(sigma, sigma)]
        else:
            M = 2.0 * S
        slot_nodes = (na0, na1, nb0, nb1)
        for u in range(4):
            i = dofmap[slot_nodes[u], 0]
            if i < 0:
                continue
            for t in range(u, 4):
                j = dofmap[slot_nodes[t], 0]
                if j < 0:
                    continue
                v = M[u, t]
                rows.append(i)
                cols.append(j)
                vals.append(v)
                if t != u:
                    rows.append(j)
                    cols.append(i)
                    vals.append(v)
    return (np.asarray(rows, dtype=np.int64),
            np.asarray(cols, dtype=np.int64),
            np.asarray(vals, dtype=np.float64))


def _emit_block_2d(block, slot_nodes, dofmap, factor, rows, cols, vals):
    """Mirror the upper 12x12 block into symmetric triplets."""
    for alpha in range(12):
        i = dofmap[slot_nodes[alpha // 2], alpha % 2]
        if i < 0:
            continue
        for beta in range(alpha, 12):
            j = dofmap[slot_nodes[beta // 2], beta % 2]
            if j < 0:
                continue
            v = factor * block[alpha, beta]
            if v == 0.0:
                continue
            rows.append(i)
            cols.append(j)
            vals.append(v)
            if beta != alpha:
                rows.append(j)
                cols.append(i)
                vals.append(v)


def _pair_material(mat_mode, mat_const, mat_cell, a, b):
    if mat_mode == 0:
        return mat_const
    if mat_mode == 2:
        return 0.5 * (mat_cell[a] + mat_cell[b])
    return None


def assemble_pairs_2d_separated(nodes, cells, pa, pb, family, knorm, delta, s,
                                mat_mode, mat_const, mat_nodal, mat_cell,
                                obary, ow, ibary, iw, dofmap):
    """Stiffness triplets for vertex-disjoint triangle pairs (tensor rule).

    The kernel cutoff enters as an indicator on the quadrature points,
    which is first-order accurate and only used for pairs bounded away
    from the singularity.
    """
    rows, cols, vals = [], [], []
    # Strict cutoff with a one-in-1e12 exclusion band: on meshes where
    # delta is an exact multiple of h, tensor points of translated cell
    # copies land exactly on the horizon sphere and a bare r2 < delta2
    # comparison would be decided by rounding noise, breaking the exact
    # interior annihilation of affine fields.
    d2 = delta * delta * (1.0 - 1e-12)
    for a, b in zip(pa, pb):
        ta, tb = cells[a], cells[b]
        va, vb = nodes[ta], nodes[tb]
        ea, fa = va[1] - va[0], va[2] - va[0]
        eb, fb = vb[1] - vb[0], vb[2] - vb[0]
        area_a = 0.5 * abs(ea[0] * fa[1] - ea[1] * fa[0])
        area_b = 0.5 * abs(eb[0] * fb[1] - eb[1] * fb[0])
        xp = obary @ va
        yq = ibary @ vb
        z = xp[:, None, :] - yq[None, :, :]
        r2 = z[..., 0] ** 2 + z[..., 1] ** 2
        inside = r2 < d2
        if not inside.any():
            continue
        if family == 0:
            kv = np.where(inside, knorm, 0.0)
        else:
            kv = np.where(inside, knorm * r2 ** (-s), 0.0)
        hpair = _pair_material(mat_mode, mat_const, mat_cell, a, b)
        if hpair is None:
            hx = obary @ mat_nodal[ta]
            hy = ibary @ mat_nodal[tb]
            hpair = 0.5 * (hx[:, None] + hy[None, :])
        w = (ow[:, None] * iw[None, :]) * (area_a * area_b) * kv * hpair / r2 ** 2
        psi = np.zeros((6, len(ow), len(iw)))
        for u in range(3):
            psi[u] = obary[:, u][:, None]
            psi[3 + u] = -ibary[:, u][None, :]
        block = np.einsum("spq,tpq,pq,pqc,pqd->sctd", psi, psi, w, z, z)
        block = block.reshape(12, 12)
        block = np.triu(block) + np.triu(block, 1).T
        _emit_block_2d(block, tuple(ta) + tuple(tb), dofmap, 2.0,
                       rows, cols, vals)
    return (np.asarray(rows, dtype=np.int64),
            np.asarray(cols, dtype=np.int64),
            np.asarray(vals, dtype=np.float64))


def _half_plane_clip(px, py, cnt, ox, oy, tx, ty):
    """One Sutherland-Hodgman pass, batched over polygons.

    ``px, py`` hold one polygon per row padded to a common width, ``cnt``
    the live vertex counts.  The half plane keeps points to the left of
    the directed line through (ox, oy) per row with shared direction
    (tx, ty).  Returns the clipped polygons, one column wider.
    """
    nz, nv = px.shape
    idx = np.broadcast_to(np.arange(nv)[None, :], (nz, nv))
    alive = idx < cnt[:, None]
    s = tx * (py - oy[:, None]) - ty * (px - ox[:, None])
    pidx = np.clip(np.where(idx == 0, cnt[:, None] - 1, idx - 1), 0, nv - 1)
    spx = np.take_along_axis(px, pidx, 1)
    spy = np.take_along_axis(py, pidx, 1)
    sprev = np.take_along_axis(s, pidx, 1)
    cur_in = s >= 0.0
    emit_x = (cur_in != (sprev >= 0.0)) & alive
    emit_c = cur_in & alive
    denom = sprev - s
    with np.errstate(divide="ignore", invalid="ignore"):
        tpar = np.where(emit_x, sprev / np.where(denom == 0.0, 1.0, denom),
                        0.0)
    xx = spx + tpar * (px - spx)
    xy = spy + tpar * (py - spy)
    ends = np.cumsum(emit_x.astype(np.int64) + emit_c.astype(np.int64),
                     axis=1)
    pos_x = ends - emit_x - emit_c
    pos_c = pos_x + emit_x
    out_x = np.zeros((nz, nv + 1))
    out_y = np.zeros((nz, nv + 1))
    rr, kk = np.nonzero(emit_x)
    out_x[rr, pos_x[rr, kk]] = xx[rr, kk]
    out_y[rr, pos_x[rr, kk]] = xy[rr, kk]
    rr, kk = np.nonzero(emit_c)
    out_x[rr, pos_c[rr, kk]] = px[rr, kk]
    out_y[rr, pos_c[rr, kk]] = py[rr, kk]
    return out_x, out_y, ends[:, -1]


def _clip_triangle_many(va, vb, zx, zy):
    """Intersection polygons of the first triangle with shifted copies
    of the second, batched over an array of shift vectors."""
    nz = zx.size
    px = np.broadcast_to(va[:, 0][None, :], (nz, 3)).copy()
    py = np.broadcast_to(va[:, 1][None, :], (nz, 3)).copy()
    cnt = np.full(nz, 3, dtype=np.int64)
    for j in range(3):
        jn = (j + 1) % 3
        px, py, cnt = _half_plane_clip(px, py, cnt,
                                       vb[j, 0] - zx, vb[j, 1] - zy,
                                       vb[jn, 0] - vb[j, 0],
                                       vb[jn, 1] - vb[j, 1])
    return px, py, cnt


def assemble_pairs_2d_singular(nodes, cells, pa, pb, family, knorm, delta, s,
                               mat_mode, mat_const, mat_nodal, mat_cell,
                               gr_x, gr_w, gt_x, gt_w, n_sectors,
                               levels, ratio, xbary, xw, dofmap):
    """Stiffness triplets for vertex-sharing triangle pairs.

    Integration runs in polar coordinates of the relative position
    z = y - x: geometric radial panels toward z = 0, even angular
    sectors, and for every z node an exact polygon clip of the first
    triangle against the shifted second one, integrated with a symmetric
    triangle rule on a centroid fan.
    """
    rows, cols, vals = [], [], []
    two_pi = 2.0 * np.pi
    sector = two_pi / n_sectors
    th = (sector * (np.arange(n_sectors)[:, None] + gt_x[None, :])).reshape(-1)
    tw = sector * np.tile(gt_w, n_sectors)
    ct, st = np.cos(th), np.sin(th)
    iu, it = np.triu_indices(6)
    strict = it > iu
    for a, b in zip(pa, pb):
        ta, tb = cells[a], cells[b]
        va, vb = nodes[ta], nodes[tb]
        diffs = vb[None, :, :] - va[:, None, :]
        rmax = float(np.sqrt((diffs ** 2).sum(-1).max()))
        rho_max = min(delta, rmax)
        if rho_max <= 0.0:
            continue
        lev = levels if family == 1 else min(levels, 6)
        redges = graded_panels(rho_max, lev, ratio)
        rwid = redges[1:] - redges[:-1]
        rho = (redges[:-1, None] + rwid[:, None] * gr_x[None, :]).reshape(-1)
        rw = (rwid[:, None] * gr_w[None, :]).reshape(-1)
        if family == 0:
            krho = np.full_like(rho, knorm)
        else:
            krho = knorm * rho ** (-2.0 * s)

        # flat z grid: radial index slow, angular fast
        zx = (rho[:, None] * ct[None, :]).reshape(-1)
        zy = (rho[:, None] * st[None, :]).reshape(-1)
        wz = ((rw * krho / rho ** 3)[:, None] * tw[None, :]).reshape(-1)

        px, py, cnt = _clip_triangle_many(va, vb, zx, zy)
        live = cnt >= 3
        if not live.any():
            continue
        inv_a = np.linalg.inv(np.column_stack([va[1] - va[0], va[2] - va[0]]))
        inv_b = np.linalg.inv(np.column_stack([vb[1] - vb[0], vb[2] - vb[0]]))
        hpair_cell = _pair_material(mat_mode, mat_const, mat_cell, a, b)
        area_tol = 1e-14 * rmax * rmax

        nz, nv = px.shape
        idx = np.broadcast_to(np.arange(nv)[None, :], (nz, nv))
        alive = idx < cnt[:, None]
        denom = np.maximum(cnt, 1).astype(float)
        cxm = np.where(alive, px, 0.0).sum(1) / denom
        cym = np.where(alive, py, 0.0).sum(1) / denom
        nidx = np.where(idx + 1 >= cnt[:, None], 0, idx + 1)
        x2 = np.take_along_axis(px, nidx, 1)
        y2 = np.take_along_axis(py, nidx, 1)
        ar = 0.5 * ((px - cxm[:, None]) * (y2 - cym[:, None])
                    - (x2 - cxm[:, None]) * (py - cym[:, None]))
        ar = np.where(alive & live[:, None] & (np.abs(ar) > area_tol), ar, 0.0)

        # fan-rule points on every (z, edge): (nz, nv, nx, 2)
        qx = (xbary[None, None, :, 0] * cxm[:, None, None]
              + xbary[None, None, :, 1] * px[..., None]
              + xbary[None, None, :, 2] * x2[..., None])
        qy = (xbary[None, None, :, 0] * cym[:, None, None]
              + xbary[None, None, :, 1] * py[..., None]
              + xbary[None, None, :, 2] * y2[..., None])
        lam_a1 = inv_a[0, 0] * (qx - va[0, 0]) + inv_a[0, 1] * (qy - va[0, 1])
        lam_a2 = inv_a[1, 0] * (qx - va[0, 0]) + inv_a[1, 1] * (qy - va[0, 1])
        bx = qx + zx[:, None, None] - vb[0, 0]
        by = qy + zy[:, None, None] - vb[0, 1]
        lam_b1 = inv_b[0, 0] * bx + inv_b[0, 1] * by
        lam_b2 = inv_b[1, 0] * bx + inv_b[1, 1] * by
        psi = np.stack([1.0 - lam_a1 - lam_a2, lam_a1, lam_a2,
                        -(1.0 - lam_b1 - lam_b2), -lam_b1, -lam_b2], axis=-1)
        if hpair_cell is None:
            hx = ((1.0 - lam_a1 - lam_a2) * mat_nodal[ta[0]]
                  + lam_a1 * mat_nodal[ta[1]] + lam_a2 * mat_nodal[ta[2]])
            hy = ((1.0 - lam_b1 - lam_b2) * mat_nodal[tb[0]]
                  + lam_b1 * mat_nodal[tb[1]] + lam_b2 * mat_nodal[tb[2]])
            hval = 0.5 * (hx + hy)
            wq = ar[..., None] * xw[None, None, :] * hval
        else:
            wq = (ar[..., None] * xw[None, None, :]) * hpair_cell
        xsum = np.einsum("zvq,zvqu,zvqt->zut", wq, psi, psi, optimize=True)

        mom = np.einsum("kz,zut->kut",
                        np.stack([wz * zx * zx, wz * zx * zy, wz * zy * zy]),
                        xsum, optimize=True)
        block = np.zeros((12, 12))
        block[2 * iu, 2 * it] = mom[0, iu, it]
        block[2 * iu, 2 * it + 1] = mom[1, iu, it]
        block[2 * iu + 1, 2 * it + 1] = mom[2, iu, it]
        block[2 * iu[strict] + 1, 2 * it[strict]] = mom[1, iu[strict],
                                                        it[strict]]
        factor = 1.0 if a == b else 2.0
        _emit_block_2d(block, tuple(ta) + tuple(tb), dofmap, factor,
                       rows, cols, vals)
    return (np.asarray(rows, dtype=np.int64),
            np.asarray(cols, dtype=np.int64),
            np.asarray(vals, dtype=np.float64))
