# cython: language_level=3
"""Compiled pairwise assembly kernels.

Mirrors the semantics of ``_ref`` function for function; see that module
for the slot layout and pair-coverage conventions.  The hot loops release
the GIL so block-parallel assembly scales across threads.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, cos, log, pow, sin, sqrt, fabs, M_PI

cnp.import_array()

DEF EDGE_TOL = 1e-14
DEF PANEL_GROWTH = 1.2


cdef inline double kern_radial(int family, double knorm, double sexp,
                               double r) noexcept nogil:
    if family == 0:
        return knorm
    return knorm * pow(r, sexp)


cdef int build_d_edges(double dlo, double dhi, double k1, double k2,
                       int levels, double ratio,
                       double* edges) noexcept nogil:
    """Separation-direction panel edges (see _ref._d_edges)."""
    cdef double tiny = EDGE_TOL * dhi
    cdef double segs[4]
    cdef int nseg = 1, i, j, n, ne = 0
    cdef double lo, hi, p, q, e
    segs[0] = dlo
    lo = k1 if k1 < k2 else k2
    hi = k1 + k2 - lo
    if lo > segs[nseg - 1] + tiny and lo < dhi - tiny:
        segs[nseg] = lo
        nseg += 1
    if hi > segs[nseg - 1] + tiny and hi < dhi - tiny:
        segs[nseg] = hi
        nseg += 1
    segs[nseg] = dhi
    nseg += 1
    for i in range(nseg - 1):
        p = segs[i]
        q = segs[i + 1]
        if q - p <= tiny:
            continue
        if p <= tiny:
            if ne == 0 or 0.0 > edges[ne - 1] + tiny:
                edges[ne] = 0.0
                ne += 1
            for j in range(levels, -1, -1):
                e = q * pow(ratio, j)
                if ne == 0 or e > edges[ne - 1] + tiny:
                    edges[ne] = e
                    ne += 1
        else:
            # width proportional to separation keeps fixed-order Gauss
            # accurate against the 1/d^2 bond factor
            n = <int>ceil(log(q / p) / log(PANEL_GROWTH))
            if n < 1:
                n = 1
            for j in range(n + 1):
                e = p * pow(q / p, (<double>j) / n)
                if ne == 0 or e > edges[ne - 1] + tiny:
                    edges[ne] = e
                    ne += 1
    return ne


def assemble_pairs_1d(double[::1] xs, long long[:, ::1] cells,
                      long long[::1] pa, long long[::1] pb,
                      int family, double knorm, double delta, double s,
                      int mat_mode, double mat_const,
                      double[::1] mat_nodal, double[::1] mat_cell,
                      double[::1] gd_x, double[::1] gd_w,
                      double[::1] gs_x, double[::1] gs_w,
                      int levels, double ratio,
                      long long[:, ::1] dofmap):
    cdef Py_ssize_t npairs = pa.shape[0]
    cdef Py_ssize_t cap = npairs * 16
    rows_np = np.empty(cap, dtype=np.int64)
    cols_np = np.empty(cap, dtype=np.int64)
    vals_np = np.empty(cap, dtype=np.float64)
    # worst-case edge count: graded levels plus three log-uniform segments
    # each spanning at most delta over the smallest cell width
    cdef double hmin = xs[cells[0, 1]] - xs[cells[0, 0]]
    cdef double span = delta / hmin if delta > hmin else 2.0
    edges_np = np.empty(levels + 16 +
                        3 * (<int>ceil(log(span + 2.0) / log(PANEL_GROWTH)) + 2),
                        dtype=np.float64)
    cdef long long[::1] rows = rows_np
    cdef long long[::1] cols = cols_np
    cdef double[::1] vals = vals_np
    cdef double[::1] edges = edges_np
    cdef Py_ssize_t cnt = 0, ip
    cdef int nd = gd_x.shape[0], ns = gs_x.shape[0]
    cdef double sexp = 1.0 - 2.0 * s
    cdef long long a, b, na0, na1, nb0, nb1, i, j
    cdef long long slot_nodes[4]
    cdef double a0, a1, b0, b1, ha, hb, dlo, dhi
    cdef double p0, p1, wpan, d, wd, kv, xlo, xhi, sl, wk
    cdef double x, wx, y, hv, w
    cdef double psi[4]
    cdef double S[4][4]
    cdef double M[4][4]
    cdef int ne, ie, qd, qx, u, t
    cdef int sig[4]
    sig[0] = 2
    sig[1] = 3
    sig[2] = 0
    sig[3] = 1
    with nogil:
        for ip in range(npairs):
            a = pa[ip]
            b = pb[ip]
            na0 = cells[a, 0]
            na1 = cells[a, 1]
            nb0 = cells[b, 0]
            nb1 = cells[b, 1]
            a0 = xs[na0]
            a1 = xs[na1]
            b0 = xs[nb0]
            b1 = xs[nb1]
            ha = a1 - a0
            hb = b1 - b0
            dlo = b0 - a1
            if dlo < 0.0:
                dlo = 0.0
            dhi = b1 - a0
            if dhi > delta:
                dhi = delta
            if dhi - dlo <= EDGE_TOL * delta:
                continue
            for u in range(4):
                for t in range(4):
                    S[u][t] = 0.0
            ne = build_d_edges(dlo, dhi, b0 - a0, b1 - a1, levels, ratio,
                               &edges[0])
            for ie in range(ne - 1):
                p0 = edges[ie]
                p1 = edges[ie + 1]
                wpan = p1 - p0
                if wpan <= 0.0:
                    continue
                for qd in range(nd):
                    d = p0 + wpan * gd_x[qd]
                    if d <= 0.0:
                        continue
                    wd = wpan * gd_w[qd]
                    kv = kern_radial(family, knorm, sexp, d)
                    xlo = a0 if a0 > b0 - d else b0 - d
                    xhi = a1 if a1 < b1 - d else b1 - d
                    sl = xhi - xlo
                    if sl <= 0.0:
                        continue
                    wk = wd * kv / (d * d)
                    for qx in range(ns):
                        x = xlo + sl * gs_x[qx]
                        wx = sl * gs_w[qx] * wk
                        y = x + d
                        psi[0] = (a1 - x) / ha
                        psi[1] = (x - a0) / ha
                        psi[2] = -(b1 - y) / hb
                        psi[3] = -(y - b0) / hb
                        if mat_mode == 0:
                            hv = mat_const
                        elif mat_mode == 1:
                            hv = 0.5 * ((psi[0] * mat_nodal[na0]
                                         + psi[1] * mat_nodal[na1])
                                        + (-psi[2] * mat_nodal[nb0]
                                           - psi[3] * mat_nodal[nb1]))
                        else:
                            hv = 0.5 * (mat_cell[a] + mat_cell[b])
                        w = wx * hv
                        for u in range(4):
                            for t in range(u, 4):
                                S[u][t] += (w * psi[u]) * psi[t]
            for u in range(4):
                for t in range(u + 1, 4):
                    S[t][u] = S[u][t]
            if a == b:
                for u in range(4):
                    for t in range(4):
                        M[u][t] = S[u][t] + S[sig[u]][sig[t]]
            else:
                for u in range(4):
                    for t in range(4):
                        M[u][t] = 2.0 * S[u][t]
            slot_nodes[0] = na0
            slot_nodes[1] = na1
            slot_nodes[2] = nb0
            slot_nodes[3] = nb1
            for u in range(4):
                i = dofmap[slot_nodes[u], 0]
                if i < 0:
                    continue
                for t in range(u, 4):
                    j = dofmap[slot_nodes[t], 0]
                    if j < 0:
                        continue
                    rows[cnt] = i
                    cols[cnt] = j
                    vals[cnt] = M[u][t]
                    cnt += 1
                    if t != u:
                        rows[cnt] = j
                        cols[cnt] = i
                        vals[cnt] = M[u][t]
                        cnt += 1
    return rows_np[:cnt].copy(), cols_np[:cnt].copy(), vals_np[:cnt].copy()


cdef int clip_tri(double* sxv, double* syv, double* oxv, double* oyv,
                  double* txv, double* tyv,
                  double* qx, double* qy) noexcept nogil:
    """Sutherland-Hodgman clip of a triangle by three half planes."""
    cdef double ax[12]
    cdef double ay[12]
    cdef double bx[12]
    cdef double by[12]
    cdef int n = 3, m, k, e
    cdef double px, py, cx, cy, dp, dc, t
    for k in range(3):
        ax[k] = sxv[k]
        ay[k] = syv[k]
    for e in range(3):
        if n == 0:
            return 0
        m = 0
        px = ax[n - 1]
        py = ay[n - 1]
        dp = txv[e] * (py - oyv[e]) - tyv[e] * (px - oxv[e])
        for k in range(n):
            cx = ax[k]
            cy = ay[k]
            dc = txv[e] * (cy - oyv[e]) - tyv[e] * (cx - oxv[e])
            if dc >= 0.0:
                if dp < 0.0:
                    t = dp / (dp - dc)
                    bx[m] = px + t * (cx - px)
                    by[m] = py + t * (cy - py)
                    m += 1
                bx[m] = cx
                by[m] = cy
                m += 1
            elif dp >= 0.0:
                t = dp / (dp - dc)
                bx[m] = px + t * (cx - px)
                by[m] = py + t * (cy - py)
                m += 1
            px = cx
            py = cy
            dp = dc
        for k in range(m):
            ax[k] = bx[k]
            ay[k] = by[k]
        n = m
    for k in range(n):
        qx[k] = ax[k]
        qy[k] = ay[k]
    return n


cdef void emit_block_2d(double* block, long long* slot_nodes,
                        long long[:, ::1] dofmap, double factor,
                        long long[::1] rows, long long[::1] cols,
                        double[::1] vals, Py_ssize_t* cnt) noexcept nogil:
    cdef int alpha, beta
    cdef long long i, j
    cdef double v
    for alpha in range(12):
        i = dofmap[slot_nodes[alpha >> 1], alpha & 1]
        if i < 0:
            continue
        for beta in range(alpha, 12):
            j = dofmap[slot_nodes[beta >> 1], beta & 1]
            if j < 0:
                continue
            v = factor * block[12 * alpha + beta]
            if v == 0.0:
                continue
            rows[cnt[0]] = i
            cols[cnt[0]] = j
            vals[cnt[0]] = v
            cnt[0] += 1
            if beta != alpha:
                rows[cnt[0]] = j
                cols[cnt[0]] = i
                vals[cnt[0]] = v
                cnt[0] += 1


def assemble_pairs_2d_separated(double[:, ::1] nodes, long long[:, ::1] cells,
                                long long[::1] pa, long long[::1] pb,
                                int family, double knorm, double delta,
                                double s,
                                int mat_mode, double mat_const,
                                double[::1] mat_nodal, double[::1] mat_cell,
                                double[:, ::1] obary, double[::1] ow,
                                double[:, ::1] ibary, double[::1] iw,
                                long long[:, ::1] dofmap):
    cdef Py_ssize_t npairs = pa.shape[0]
    cdef Py_ssize_t cap = npairs * 144
    rows_np = np.empty(cap, dtype=np.int64)
    cols_np = np.empty(cap, dtype=np.int64)
    vals_np = np.empty(cap, dtype=np.float64)
    cdef long long[::1] rows = rows_np
    cdef long long[::1] cols = cols_np
    cdef double[::1] vals = vals_np
    cdef Py_ssize_t cnt = 0, ip
    cdef int no = obary.shape[0], ni = ibary.shape[0]
    # exclusion band around the horizon sphere: when delta is an exact
    # multiple of h, tensor points of translated cell copies land exactly
    # on the sphere and a bare comparison would be decided by rounding
    # noise, breaking the exact interior annihilation of affine fields
    cdef double d2 = delta * delta * (1.0 - 1e-12)
    cdef double sexp = -2.0 * s
    cdef long long a, b
    cdef long long slot_nodes[6]
    cdef double vax[3]
    cdef double vay[3]
    cdef double vbx[3]
    cdef double vby[3]
    cdef double hna[3]
    cdef double hnb[3]
    cdef double block[144]
    cdef double psl[6]
    cdef double area_a, area_b, hpair_cell, xp, ypt, yq, yqy
    cdef double zx, zy, r2, kv, hx, hy, hv, w, zz0, zz1, zz2, pu, sval
    cdef int p, q, k, u, t, any_inside
    cdef bint nodal = (mat_mode == 1)
    with nogil:
        for ip in range(npairs):
            a = pa[ip]
            b = pb[ip]
            for k in range(3):
                slot_nodes[k] = cells[a, k]
                slot_nodes[3 + k] = cells[b, k]
                vax[k] = nodes[cells[a, k], 0]
                vay[k] = nodes[cells[a, k], 1]
                vbx[k] = nodes[cells[b, k], 0]
                vby[k] = nodes[cells[b, k], 1]
                if nodal:
                    hna[k] = mat_nodal[cells[a, k]]
                    hnb[k] = mat_nodal[cells[b, k]]
            area_a = 0.5 * fabs((vax[1] - vax[0]) * (vay[2] - vay[0])
                                - (vax[2] - vax[0]) * (vay[1] - vay[0]))
            area_b = 0.5 * fabs((vbx[1] - vbx[0]) * (vby[2] - vby[0])
                                - (vbx[2] - vbx[0]) * (vby[1] - vby[0]))
            if mat_mode == 0:
                hpair_cell = mat_const
            elif mat_mode == 2:
                hpair_cell = 0.5 * (mat_cell[a] + mat_cell[b])
            else:
                hpair_cell = 0.0
            for k in range(144):
                block[k] = 0.0
            any_inside = 0
            for p in range(no):
                xp = (obary[p, 0] * vax[0] + obary[p, 1] * vax[1]
                      + obary[p, 2] * vax[2])
                ypt = (obary[p, 0] * vay[0] + obary[p, 1] * vay[1]
                       + obary[p, 2] * vay[2])
                if nodal:
                    hx = (obary[p, 0] * hna[0] + obary[p, 1] * hna[1]
                          + obary[p, 2] * hna[2])
                for q in range(ni):
                    yq = (ibary[q, 0] * vbx[0] + ibary[q, 1] * vbx[1]
                          + ibary[q, 2] * vbx[2])
                    yqy = (ibary[q, 0] * vby[0] + ibary[q, 1] * vby[1]
                           + ibary[q, 2] * vby[2])
                    zx = xp - yq
                    zy = ypt - yqy
                    r2 = zx * zx + zy * zy
                    if r2 >= d2:
                        continue
                    any_inside = 1
                    if family == 0:
                        kv = knorm
                    else:
                        kv = knorm * pow(r2, -s)
                    if nodal:
                        hy = (ibary[q, 0] * hnb[0] + ibary[q, 1] * hnb[1]
                              + ibary[q, 2] * hnb[2])
                        hv = 0.5 * (hx + hy)
                    else:
                        hv = hpair_cell
                    w = (ow[p] * iw[q]) * (area_a * area_b) * kv * hv / (r2 * r2)
                    psl[0] = obary[p, 0]
                    psl[1] = obary[p, 1]
                    psl[2] = obary[p, 2]
                    psl[3] = -ibary[q, 0]
                    psl[4] = -ibary[q, 1]
                    psl[5] = -ibary[q, 2]
                    zz0 = zx * zx
                    zz1 = zx * zy
                    zz2 = zy * zy
                    for u in range(6):
                        pu = psl[u] * w
                        for t in range(u, 6):
                            sval = pu * psl[t]
                            block[12 * (2 * u) + 2 * t] += sval * zz0
                            block[12 * (2 * u) + 2 * t + 1] += sval * zz1
                            block[12 * (2 * u + 1) + 2 * t + 1] += sval * zz2
                            if t > u:
                                block[12 * (2 * u + 1) + 2 * t] += sval * zz1
            if any_inside:
                emit_block_2d(&block[0], &slot_nodes[0], dofmap, 2.0,
                              rows, cols, vals, &cnt)
    return rows_np[:cnt].copy(), cols_np[:cnt].copy(), vals_np[:cnt].copy()


def assemble_pairs_2d_singular(double[:, ::1] nodes, long long[:, ::1] cells,
                               long long[::1] pa, long long[::1] pb,
                               int family, double knorm, double delta,
                               double s,
                               int mat_mode, double mat_const,
                               double[::1] mat_nodal, double[::1] mat_cell,
                               double[::1] gr_x, double[::1] gr_w,
                               double[::1] gt_x, double[::1] gt_w,
                               int n_sectors, int levels, double ratio,
                               double[:, ::1] xbary, double[::1] xw,
                               long long[:, ::1] dofmap):
    cdef Py_ssize_t npairs = pa.shape[0]
    cdef Py_ssize_t cap = npairs * 144
    rows_np = np.empty(cap, dtype=np.int64)
    cols_np = np.empty(cap, dtype=np.int64)
    vals_np = np.empty(cap, dtype=np.float64)
    redges_np = np.empty(levels + 16, dtype=np.float64)
    cdef long long[::1] rows = rows_np
    cdef long long[::1] cols = cols_np
    cdef double[::1] vals = vals_np
    cdef double[::1] redges = redges_np
    cdef Py_ssize_t cnt = 0, ip
    cdef int nr = gr_x.shape[0], nt = gt_x.shape[0], nx = xbary.shape[0]
    cdef double sexp = -2.0 * s
    cdef double sector = 2.0 * M_PI / n_sectors
    cdef long long a, b
    cdef long long slot_nodes[6]
    cdef double vax[3]
    cdef double vay[3]
    cdef double vbx[3]
    cdef double vby[3]
    cdef double hna[3]
    cdef double hnb[3]
    cdef double dirx[3]
    cdef double diry[3]
    cdef double origx[3]
    cdef double origy[3]
    cdef double polx[12]
    cdef double poly[12]
    cdef double block[144]
    cdef double xsum[6][6]
    cdef double psi[6]
    cdef double rmax, dx, dy, rr, rho_max, area_tol, hpair_cell
    cdef double e1x, e1y, e2x, e2y, adet, f1x, f1y, f2x, f2y, bdet
    cdef double p0, p1, wpan, rho, wr, krho, base, th, wth, zx, zy, wz
    cdef double cxm, cym, x1, y1, x2, y2, ar, px, py, l0, l1, l2
    cdef double rxa, rya, la1, la2, rxb, ryb, lb1, lb2
    cdef double hx, hy, hval, wq, pu, sval, zz0, zz1, zz2, factor
    cdef int lev, nre, ie, qr, isec, qt, np_, e, q, u, t, k
    cdef bint nodal = (mat_mode == 1)
    with nogil:
        for ip in range(npairs):
            a = pa[ip]
            b = pb[ip]
            for k in range(3):
                slot_nodes[k] = cells[a, k]
                slot_nodes[3 + k] = cells[b, k]
                vax[k] = nodes[cells[a, k], 0]
                vay[k] = nodes[cells[a, k], 1]
                vbx[k] = nodes[cells[b, k], 0]
                vby[k] = nodes[cells[b, k], 1]
                if nodal:
                    hna[k] = mat_nodal[cells[a, k]]
                    hnb[k] = mat_nodal[cells[b, k]]
            rmax = 0.0
            for e in range(3):
                for q in range(3):
                    dx = vbx[q] - vax[e]
                    dy = vby[q] - vay[e]
                    rr = sqrt(dx * dx + dy * dy)
                    if rr > rmax:
                        rmax = rr
            rho_max = delta if delta < rmax else rmax
            if rho_max <= 0.0:
                continue
            lev = levels if family == 1 else (levels if levels < 6 else 6)
            redges[0] = 0.0
            nre = 1
            for k in range(lev, -1, -1):
                redges[nre] = rho_max * pow(ratio, k)
                nre += 1
            for e in range(3):
                dirx[e] = vbx[(e + 1) % 3] - vbx[e]
                diry[e] = vby[(e + 1) % 3] - vby[e]
            e1x = vax[1] - vax[0]
            e1y = vay[1] - vay[0]
            e2x = vax[2] - vax[0]
            e2y = vay[2] - vay[0]
            adet = e1x * e2y - e1y * e2x
            f1x = vbx[1] - vbx[0]
            f1y = vby[1] - vby[0]
            f2x = vbx[2] - vbx[0]
            f2y = vby[2] - vby[0]
            bdet = f1x * f2y - f1y * f2x
            if mat_mode == 0:
                hpair_cell = mat_const
            elif mat_mode == 2:
                hpair_cell = 0.5 * (mat_cell[a] + mat_cell[b])
            else:
                hpair_cell = 0.0
            area_tol = 1e-14 * rmax * rmax
            for k in range(144):
                block[k] = 0.0
            for ie in range(nre - 1):
                p0 = redges[ie]
                p1 = redges[ie + 1]
                wpan = p1 - p0
                if wpan <= 0.0:
                    continue
                for qr in range(nr):
                    rho = p0 + wpan * gr_x[qr]
                    if rho <= 0.0:
                        continue
                    wr = wpan * gr_w[qr]
                    krho = kern_radial(family, knorm, sexp, rho)
                    base = wr * rho * krho / (rho * rho * rho * rho)
                    for isec in range(n_sectors):
                        for qt in range(nt):
                            th = sector * (isec + gt_x[qt])
                            wth = sector * gt_w[qt]
                            zx = rho * cos(th)
                            zy = rho * sin(th)
                            for e in range(3):
                                origx[e] = vbx[e] - zx
                                origy[e] = vby[e] - zy
                            np_ = clip_tri(&vax[0], &vay[0], &origx[0],
                                           &origy[0], &dirx[0], &diry[0],
                                           &polx[0], &poly[0])
                            if np_ < 3:
                                continue
                            wz = base * wth
                            cxm = 0.0
                            cym = 0.0
                            for e in range(np_):
                                cxm += polx[e]
                                cym += poly[e]
                            cxm /= np_
                            cym /= np_
                            for u in range(6):
                                for t in range(6):
                                    xsum[u][t] = 0.0
                            for e in range(np_):
                                x1 = polx[e]
                                y1 = poly[e]
                                x2 = polx[(e + 1) % np_]
                                y2 = poly[(e + 1) % np_]
                                ar = 0.5 * ((x1 - cxm) * (y2 - cym)
                                            - (x2 - cxm) * (y1 - cym))
                                if fabs(ar) <= area_tol:
                                    continue
                                for q in range(nx):
                                    l0 = xbary[q, 0]
                                    l1 = xbary[q, 1]
                                    l2 = xbary[q, 2]
                                    px = l0 * cxm + l1 * x1 + l2 * x2
                                    py = l0 * cym + l1 * y1 + l2 * y2
                                    rxa = px - vax[0]
                                    rya = py - vay[0]
                                    la1 = (rxa * e2y - rya * e2x) / adet
                                    la2 = (e1x * rya - e1y * rxa) / adet
                                    rxb = px + zx - vbx[0]
                                    ryb = py + zy - vby[0]
                                    lb1 = (rxb * f2y - ryb * f2x) / bdet
                                    lb2 = (f1x * ryb - f1y * rxb) / bdet
                                    psi[0] = 1.0 - la1 - la2
                                    psi[1] = la1
                                    psi[2] = la2
                                    psi[3] = -(1.0 - lb1 - lb2)
                                    psi[4] = -lb1
                                    psi[5] = -lb2
                                    if nodal:
                                        hx = ((1.0 - la1 - la2) * hna[0]
                                              + la1 * hna[1] + la2 * hna[2])
                                        hy = ((1.0 - lb1 - lb2) * hnb[0]
                                              + lb1 * hnb[1] + lb2 * hnb[2])
                                        hval = 0.5 * (hx + hy)
                                    else:
                                        hval = hpair_cell
                                    wq = ar * xw[q] * hval
                                    for u in range(6):
                                        pu = psi[u] * wq
                                        for t in range(u, 6):
                                            xsum[u][t] += pu * psi[t]
                            zz0 = zx * zx
                            zz1 = zx * zy
                            zz2 = zy * zy
                            for u in range(6):
                                for t in range(u, 6):
                                    sval = wz * xsum[u][t]
                                    block[12 * (2 * u) + 2 * t] += sval * zz0
                                    block[12 * (2 * u) + 2 * t + 1] += sval * zz1
                                    block[12 * (2 * u + 1) + 2 * t + 1] += sval * zz2
                                    if t > u:
                                        block[12 * (2 * u + 1) + 2 * t] += sval * zz1
            factor = 1.0 if a == b else 2.0
            emit_block_2d(&block[0], &slot_nodes[0], dofmap, factor,
                          rows, cols, vals, &cnt)
    return rows_np[:cnt].copy(), cols_np[:cnt].copy(), vals_np[:cnt].copy()
