"""Compiled single-layer influence kernels for flat polygonal panels.

For a panel carrying unit surface density, the kernels return

    phi(p) = integral 1/|p - r'| dA'
    G(p)   = integral (p - r')/|p - r'|^3 dA'    (= -grad phi)

Close to the panel the integrals are evaluated in closed form (edge sums
for a planar polygon); at intermediate distance a Gauss rule is used and
far away the centroid rule.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

NEAR = 3.0
# centroid rule beyond MID panel sizes; field evaluation uses a larger
# cutoff because trap potentials are small residuals of large sums
MID = 8.0
MID_EVAL = 30.0


@njit(cache=True)
def panel_exact(px, py, pz, V, nv, n):
    """Closed-form phi and G of one planar polygon at point p."""
    nx, ny, nz = n[0], n[1], n[2]
    w0 = (px - V[0, 0]) * nx + (py - V[0, 1]) * ny + (pz - V[0, 2]) * nz
    # characteristic size for the in-plane tolerance
    size = 0.0
    for k in range(nv):
        dx = V[k, 0] - V[0, 0]
        dy = V[k, 1] - V[0, 1]
        dz = V[k, 2] - V[0, 2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d > size:
            size = d
    if abs(w0) < 1e-12 * size:
        w0 = 0.0
    aw = abs(w0)
    phi = 0.0
    gx = 0.0
    gy = 0.0
    gz = 0.0
    bsum = 0.0
    for k in range(nv):
        k1 = k + 1
        if k1 == nv:
            k1 = 0
        ax, ay, az = V[k, 0], V[k, 1], V[k, 2]
        ex = V[k1, 0] - ax
        ey = V[k1, 1] - ay
        ez = V[k1, 2] - az
        L = math.sqrt(ex * ex + ey * ey + ez * ez)
        if L <= 1e-14 * size:
            continue
        tx, ty, tz = ex / L, ey / L, ez / L
        # outward in-plane edge normal u = t x n
        ux = ty * nz - tz * ny
        uy = tz * nx - tx * nz
        uz = tx * ny - ty * nx
        rx, ry, rz = ax - px, ay - py, az - pz
        sm = rx * tx + ry * ty + rz * tz
        sp = sm + L
        P0 = rx * ux + ry * uy + rz * uz
        R0sq = P0 * P0 + w0 * w0
        Rm = math.sqrt(sm * sm + R0sq)
        Rp = math.sqrt(sp * sp + R0sq)
        if sp + sm >= 0.0:
            num = Rp + sp
            den = Rm + sm
        else:
            num = Rm - sm
            den = Rp - sp
        if den <= 0.0 or num <= 0.0:
            # point on the edge line inside the segment; the log term is
            # multiplied by P0 = 0 in phi and the field is singular there
            f = 0.0
        else:
            f = math.log(num / den)
        beta = math.atan2(P0 * sp, R0sq + aw * Rp) - math.atan2(P0 * sm, R0sq + aw * Rm)
        phi += P0 * f - aw * beta
        gx += ux * f
        gy += uy * f
        gz += uz * f
        bsum += beta
    if w0 > 0.0:
        gx += nx * bsum
        gy += ny * bsum
        gz += nz * bsum
    elif w0 < 0.0:
        gx -= nx * bsum
        gy -= ny * bsum
        gz -= nz * bsum
    return phi, gx, gy, gz


@njit(cache=True)
def panel_influence(px, py, pz, j, V, nv, nrm, cen, area, size, qp, qw, nq, mid=MID):
    """phi and G of panel j at p with distance-dependent integration."""
    dx = px - cen[j, 0]
    dy = py - cen[j, 1]
    dz = pz - cen[j, 2]
    r2 = dx * dx + dy * dy + dz * dz
    s2 = size[j] * size[j]
    if r2 > mid * mid * s2:
        r = math.sqrt(r2)
        a = area[j] / r
        a3 = a / r2
        return a, a3 * dx, a3 * dy, a3 * dz
    if r2 > NEAR * NEAR * s2:
        phi = 0.0
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for k in range(nq[j]):
            ddx = px - qp[j, k, 0]
            ddy = py - qp[j, k, 1]
            ddz = pz - qp[j, k, 2]
            rr2 = ddx * ddx + ddy * ddy + ddz * ddz
            rr = math.sqrt(rr2)
            w = qw[j, k] / rr
            phi += w
            w3 = w / rr2
            gx += w3 * ddx
            gy += w3 * ddy
            gz += w3 * ddz
        return phi, gx, gy, gz
    return panel_exact(px, py, pz, V[j], nv[j], nrm[j])


@njit(cache=True, parallel=True)
def evaluate(points, s, V, nv, nrm, cen, area, size, qp, qw, nq, skip):
    """Potential and field (scaled units) of density s at points.

    ``skip[i] >= 0`` excludes that panel from point i (used for the
    own-panel term of on-surface evaluation).
    """
    m = points.shape[0]
    out = np.zeros((m, 4))
    npan = s.shape[0]
    for i in prange(m):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        phi = 0.0
        gx = 0.0
        gy = 0.0
        gz = 0.0
        sk = skip[i]
        for j in range(npan):
            sj = s[j]
            if sj == 0.0 or j == sk:
                continue
            a, b, c, d = panel_influence(px, py, pz, j, V, nv, nrm, cen, area, size, qp, qw, nq, MID_EVAL)
            phi += sj * a
            gx += sj * b
            gy += sj * c
            gz += sj * d
        out[i, 0] = phi
        out[i, 1] = gx
        out[i, 2] = gy
        out[i, 3] = gz
    return out


@njit(cache=True, parallel=True)
def influence_rows(points, cols, V, nv, nrm, cen, area, size, qp, qw, nq):
    """Dense block of phi and G for points x selected panels (for checks)."""
    m = points.shape[0]
    k = cols.shape[0]
    out = np.zeros((m, k, 4))
    for i in prange(m):
        for jj in range(k):
            a, b, c, d = panel_influence(points[i, 0], points[i, 1], points[i, 2], cols[jj],
                                         V, nv, nrm, cen, area, size, qp, qw, nq, MID_EVAL)
            out[i, jj, 0] = a
            out[i, jj, 1] = b
            out[i, jj, 2] = c
            out[i, jj, 3] = d
    return out


@njit(cache=True, parallel=True)
def point_sources(points, src, strength):
    """phi and G of point charges (strength in V*um) at points."""
    m = points.shape[0]
    out = np.zeros((m, 4))
    for i in prange(m):
        for k in range(src.shape[0]):
            dx = points[i, 0] - src[k, 0]
            dy = points[i, 1] - src[k, 1]
            dz = points[i, 2] - src[k, 2]
            r2 = dx * dx + dy * dy + dz * dz
            r = math.sqrt(r2)
            a = strength[k] / r
            out[i, 0] += a
            a3 = a / r2
            out[i, 1] += a3 * dx
            out[i, 2] += a3 * dy
            out[i, 3] += a3 * dz
    return out


# Gauss rules ---------------------------------------------------------------

_TRI6_B = np.array([
    [0.108103018168070, 0.445948490915965, 0.445948490915965],
    [0.445948490915965, 0.108103018168070, 0.445948490915965],
    [0.445948490915965, 0.445948490915965, 0.108103018168070],
    [0.816847572980459, 0.091576213509771, 0.091576213509771],
    [0.091576213509771, 0.816847572980459, 0.091576213509771],
    [0.091576213509771, 0.091576213509771, 0.816847572980459],
])
_TRI6_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)


def quadrature(V: np.ndarray, nv: np.ndarray):
    """Per-panel Gauss points and weights (weights sum to the panel area).

    Triangles use a 6-point degree-4 rule, planar quads a 3x3 Gauss rule
    on the bilinear map.
    """
    n = V.shape[0]
    qp = np.zeros((n, 9, 3))
    qw = np.zeros((n, 9))
    nq = np.zeros(n, dtype=np.int64)
    tri = nv == 3
    if np.any(tri):
        T = V[tri][:, :3]
        a = 0.5 * np.linalg.norm(np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]), axis=1)
        qp[tri, :6] = np.einsum("kb,nbd->nkd", _TRI6_B, T)
        qw[tri, :6] = a[:, None] * _TRI6_W[None, :]
        nq[tri] = 6
    quad = ~tri
    if np.any(quad):
        Q = V[quad]
        g = np.array([0.5 - 0.5 * math.sqrt(0.6), 0.5, 0.5 + 0.5 * math.sqrt(0.6)])
        w = np.array([5.0, 8.0, 5.0]) / 18.0
        pts = []
        wts = []
        for i, u in enumerate(g):
            for j, v in enumerate(g):
                p = ((1 - u) * (1 - v) * Q[:, 0] + u * (1 - v) * Q[:, 1]
                     + u * v * Q[:, 2] + (1 - u) * v * Q[:, 3])
                du = (1 - v) * (Q[:, 1] - Q[:, 0]) + v * (Q[:, 2] - Q[:, 3])
                dv = (1 - u) * (Q[:, 3] - Q[:, 0]) + u * (Q[:, 2] - Q[:, 1])
                J = np.linalg.norm(np.cross(du, dv), axis=1)
                pts.append(p)
                wts.append(w[i] * w[j] * J)
        qp[quad] = np.stack(pts, axis=1)
        qw[quad] = np.stack(wts, axis=1)
        nq[quad] = 9
    return qp, qw, nq


@njit(cache=True, parallel=True)
def assemble_all_sectors(n_rep, n_group, chi, kind, jump, diag,
                         V, nv, nrm, cen, area, size, qp, qw, nq):
    """All symmetry-sector matrices at once.

    Returns an array (n_group, n_rep, n_rep) whose slice ``s`` is the matrix
    of character ``chi[s]``. Each panel pair is
    evaluated once for all sectors.
    """
    out = np.zeros((n_group, n_rep, n_rep))
    for p in prange(n_rep):
        px, py, pz = cen[p, 0], cen[p, 1], cen[p, 2]
        vals = np.zeros(n_group)
        for q in range(n_rep):
            for g in range(n_group):
                j = g * n_rep + q
                if kind[p] == 0:
                    phi, gx, gy, gz = panel_influence(px, py, pz, j, V, nv, nrm, cen, area, size, qp, qw, nq)
                    vals[g] = phi
                elif j == p:
                    vals[g] = diag[p]
                else:
                    phi, gx, gy, gz = panel_influence(px, py, pz, j, V, nv, nrm, cen, area, size, qp, qw, nq)
                    vals[g] = jump[p] * (gx * nrm[p, 0] + gy * nrm[p, 1] + gz * nrm[p, 2])
            for s in range(n_group):
                acc = 0.0
                for g in range(n_group):
                    acc += chi[s, g] * vals[g]
                out[s, p, q] = acc
    return out


@njit(cache=True, parallel=True)
def full_rows(rows, kind, jump, diag, V, nv, nrm, cen, area, size, qp, qw, nq):
    """Selected rows of the unreduced collocation matrix."""
    n = cen.shape[0]
    out = np.zeros((rows.shape[0], n))
    for ii in prange(rows.shape[0]):
        p = rows[ii]
        px, py, pz = cen[p, 0], cen[p, 1], cen[p, 2]
        for j in range(n):
            if kind[p] == 0:
                phi, gx, gy, gz = panel_influence(px, py, pz, j, V, nv, nrm, cen, area, size, qp, qw, nq)
                out[ii, j] = phi
            elif j == p:
                out[ii, j] = diag[p]
            else:
                phi, gx, gy, gz = panel_influence(px, py, pz, j, V, nv, nrm, cen, area, size, qp, qw, nq)
                out[ii, j] = jump[p] * (gx * nrm[p, 0] + gy * nrm[p, 1] + gz * nrm[p, 2])
    return out
