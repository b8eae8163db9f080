"""Surface meshing of scenes into flat panels.

Each solid surface is split into parametric patches (planar faces, cylinder
sides, annular rings, disk caps). A quadtree in parameter space refines
cells until their edges meet a graded size field. Vertices left hanging on
a coarser neighbour's edge are moved onto that edge so that every solid is
closed; cells that become non-planar are split into two triangles.

When a scene declares mirror planes, only the part of the surface with
positive coordinates across those planes is meshed; the rest is produced by
exact reflection. Panels are stored as blocks of images, block ``g`` being
the reflection of block 0 by the group element with bit mask ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from . import _kernels
from .geometry import AXES, Box, Cylinder, Plate, Prism, Scene, Sphere, Tube

PLANAR_TOL = 1e-9
MIN_AREA = 1e-6


class MeshError(ValueError):
    """Degenerate or inconsistent surface mesh."""


# ---------------------------------------------------------------------------
# regions and size field


@dataclass(frozen=True)
class Ball:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0

    def distance(self, p):
        return np.maximum(np.linalg.norm(np.asarray(p) - np.asarray(self.center), axis=-1) - self.radius, 0.0)

    def invariant(self, axis: int) -> bool:
        return self.center[axis] == 0.0


@dataclass(frozen=True)
class AxisBox:
    lo: tuple
    hi: tuple

    def distance(self, p):
        p = np.asarray(p)
        d = np.maximum(np.maximum(np.asarray(self.lo) - p, p - np.asarray(self.hi)), 0.0)
        return np.linalg.norm(d, axis=-1)

    def invariant(self, axis: int) -> bool:
        return self.lo[axis] == -self.hi[axis]


@dataclass(frozen=True)
class Everywhere:
    def distance(self, p):
        return np.zeros(np.shape(p)[:-1])

    def invariant(self, axis: int) -> bool:
        return True


@dataclass(frozen=True)
class Nowhere:
    def distance(self, p):
        return np.full(np.shape(p)[:-1], np.inf)

    def invariant(self, axis: int) -> bool:
        return True


@dataclass(frozen=True)
class MirrorUnion:
    """A region together with its images across the given coordinate planes."""

    region: object
    axes: tuple = ("x", "y", "z")

    def distance(self, p):
        p = np.asarray(p, dtype=float)
        d = self.region.distance(p)
        for bits in range(1, 2 ** len(self.axes)):
            q = p.copy()
            for b, a in enumerate(self.axes):
                if bits >> b & 1:
                    q[..., AXES.index(a)] *= -1
            d = np.minimum(d, self.region.distance(q))
        return d

    def invariant(self, axis: int) -> bool:
        return AXES[axis] in self.axes or self.region.invariant(axis)


@dataclass(frozen=True)
class RefineRule:
    region: object
    edge: float


@dataclass(frozen=True)
class SizeField:
    """Target edge length: base_edge capped by graded refinement rules."""

    base_edge: float
    rules: tuple = ()
    grade: float = 0.3

    def __post_init__(self):
        if not self.base_edge > 0:
            raise MeshError("base_edge must be positive")
        object.__setattr__(self, "rules", tuple(self.rules))

    def at(self, p):
        p = np.asarray(p, dtype=float)
        h = np.full(p.shape[:-1], float(self.base_edge))
        for r in self.rules:
            h = np.minimum(h, r.edge + self.grade * r.region.distance(p))
        return h

    def lower_bound(self, center, radius):
        """Smallest target edge anywhere within ``radius`` of ``center``."""
        h = float(self.base_edge)
        for r in self.rules:
            d = float(r.region.distance(np.asarray(center, dtype=float)))
            h = min(h, r.edge + self.grade * max(0.0, d - radius))
        return h

    def invariant(self, axis: int) -> bool:
        return all(r.region.invariant(axis) for r in self.rules)


# ---------------------------------------------------------------------------
# parametric patches


@dataclass
class _Patch:
    fmap: object          # (u, v) arrays -> (n, 3) global points
    ubreaks: np.ndarray
    vbreaks: np.ndarray
    tag: str
    hint: object          # (n, 3) points -> approximate outward normals


def _quadtree(patch: _Patch, size: SizeField, max_cells: int = 400000):
    """Leaf cells (u0, u1, v0, v1) of the refined parameter grid."""
    stack = [(u0, u1, v0, v1)
             for u0, u1 in zip(patch.ubreaks[:-1], patch.ubreaks[1:])
             for v0, v1 in zip(patch.vbreaks[:-1], patch.vbreaks[1:])]
    leaves = []
    while stack:
        batch = np.array(stack)
        stack = []
        u0, u1, v0, v1 = batch.T
        uc, vc = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
        P = patch.fmap(np.concatenate([u0, u1, u1, u0, uc]), np.concatenate([v0, v0, v1, v1, vc]))
        n = len(batch)
        p00, p10, p11, p01, pc = (P[k * n:(k + 1) * n] for k in range(5))
        e_b = np.linalg.norm(p10 - p00, axis=1)
        e_t = np.linalg.norm(p11 - p01, axis=1)
        e_l = np.linalg.norm(p01 - p00, axis=1)
        e_r = np.linalg.norm(p11 - p10, axis=1)
        lu = 0.5 * (e_b + e_t)
        lv = 0.5 * (e_l + e_r)
        emax = np.maximum(np.maximum(e_b, e_t), np.maximum(e_l, e_r))
        rad = np.max(np.stack([np.linalg.norm(q - pc, axis=1) for q in (p00, p10, p11, p01)]), axis=0)
        for k in range(n):
            h = size.lower_bound(pc[k], rad[k])
            c = tuple(batch[k])
            if emax[k] <= h * (1 + 1e-9):
                leaves.append(c)
                continue
            a, b, cc, d = c
            um, vm = 0.5 * (a + b), 0.5 * (cc + d)
            if lu[k] > 1.5 * lv[k]:
                stack += [(a, um, cc, d), (um, b, cc, d)]
            elif lv[k] > 1.5 * lu[k]:
                stack += [(a, b, cc, vm), (a, b, vm, d)]
            else:
                stack += [(a, um, cc, vm), (um, b, cc, vm), (a, um, vm, d), (um, b, vm, d)]
        if len(leaves) + len(stack) > max_cells:
            raise MeshError(f"patch {patch.tag!r} exceeds {max_cells} cells; raise base_edge or coarsen rules")
    return leaves


def _patch_cells(patch: _Patch, size: SizeField, uniform: int | None = None):
    """Mesh one patch; returns (polygons list of (k,3) arrays, vertex map)."""
    if uniform is None:
        leaves = _quadtree(patch, size)
    else:
        leaves = [(u0, u1, v0, v1) for u0, u1 in zip(patch.ubreaks[:-1], patch.ubreaks[1:])
                  for v0, v1 in zip(patch.vbreaks[:-1], patch.vbreaks[1:])]
    corners = {}
    for u0, u1, v0, v1 in leaves:
        for key in ((u0, v0), (u1, v0), (u1, v1), (u0, v1)):
            corners[key] = None
    keys = list(corners)
    karr = np.array(keys)
    pts = patch.fmap(karr[:, 0], karr[:, 1])
    pos = {k: pts[i] for i, k in enumerate(keys)}
    moved = set()
    # hanging vertices: corners strictly inside a leaf edge
    by_v: dict = {}
    by_u: dict = {}
    for u, v in keys:
        by_v.setdefault(v, []).append(u)
        by_u.setdefault(u, []).append(v)
    for d in (by_v, by_u):
        for k in d:
            d[k] = np.array(sorted(d[k]))
    hang = []
    for u0, u1, v0, v1 in leaves:
        for v in (v0, v1):
            us = by_v[v]
            inner = us[(us > u0) & (us < u1)]
            for u in inner:
                hang.append((u1 - u0, (u, v), (u0, v), (u1, v), (u - u0) / (u1 - u0)))
        for u in (u0, u1):
            vs = by_u[u]
            inner = vs[(vs > v0) & (vs < v1)]
            for v in inner:
                hang.append((v1 - v0, (u, v), (u, v0), (u, v1), (v - v0) / (v1 - v0)))
    hang.sort(key=lambda h: -h[0])
    for _, key, a, b, t in hang:
        pos[key] = (1 - t) * pos[a] + t * pos[b]
        moved.add(key)
    polys = []
    centers = []
    for u0, u1, v0, v1 in leaves:
        ks = [(u0, v0), (u1, v0), (u1, v1), (u0, v1)]
        P = np.array([pos[k] for k in ks])
        mv = [k in moved for k in ks]
        polys.extend(_planarise(P, mv))
        centers.append(None)
    return polys, pos, leaves


def _planarise(P, moved):
    """Return the quad P as one planar polygon or two triangles."""
    # drop repeated vertices (collapsed cells at a pole)
    uniq = [P[0]]
    for q in P[1:]:
        if np.linalg.norm(q - uniq[-1]) > 1e-12 * (1 + np.abs(q).max()):
            uniq.append(q)
    if len(uniq) > 1 and np.linalg.norm(uniq[0] - uniq[-1]) <= 1e-12 * (1 + np.abs(uniq[0]).max()):
        uniq.pop()
    if len(uniq) < 3:
        return []
    if len(uniq) == 3:
        return [np.array(uniq)]
    n = _newell(P)
    nn = np.linalg.norm(n)
    size = max(np.linalg.norm(P[2] - P[0]), np.linalg.norm(P[3] - P[1]))
    c = P.mean(axis=0)
    if nn > 0 and np.max(np.abs((P - c) @ (n / nn))) <= PLANAR_TOL * size:
        return [P]
    # split along the diagonal through a moved corner, else the shorter one
    if moved[0] or moved[2]:
        diag02 = True
    elif moved[1] or moved[3]:
        diag02 = False
    else:
        diag02 = np.linalg.norm(P[2] - P[0]) <= np.linalg.norm(P[3] - P[1])
    if diag02:
        return [P[[0, 1, 2]], P[[0, 2, 3]]]
    return [P[[0, 1, 3]], P[[1, 2, 3]]]


def _newell(P):
    n = np.zeros(3)
    k = len(P)
    for i in range(k):
        a, b = P[i], P[(i + 1) % k]
        n += np.array([(a[1] - b[1]) * (a[2] + b[2]), (a[2] - b[2]) * (a[0] + b[0]), (a[0] - b[0]) * (a[1] + b[1])])
    return 0.5 * n


def _uniform_breaks(a, b, h, even=False, minimum=1):
    n = max(minimum, int(math.ceil((b - a) / h - 1e-9)))
    if even and n % 2:
        n += 1
    return np.linspace(a, b, n + 1)


# --- shape-specific patch sets ---------------------------------------------------


def _bilinear(c00, c10, c11, c01):
    c00, c10, c11, c01 = (np.asarray(c, dtype=float) for c in (c00, c10, c11, c01))

    def f(u, v):
        u = np.asarray(u)[:, None]
        v = np.asarray(v)[:, None]
        return (1 - u) * (1 - v) * c00 + u * (1 - v) * c10 + u * v * c11 + (1 - u) * v * c01
    return f


def _const_hint(n):
    n = np.asarray(n, dtype=float)
    return lambda p: np.broadcast_to(n, np.shape(p)).copy()


def _even_for(c0, c1, sym_axes, straddle_tol=1e-9):
    """True when segment c0-c1 crosses one of the mirror planes at its middle."""
    for k in sym_axes:
        if c0[k] * c1[k] < 0 and abs(c0[k] + c1[k]) <= straddle_tol * (abs(c0[k]) + abs(c1[k])):
            return True
    return False


def _planar_face(corners, outward, tag, base, sym_axes):
    """Bilinear patch over a planar quadrilateral face (global corners)."""
    c00, c10, c11, c01 = (np.asarray(c, dtype=float) for c in corners)
    lu = max(np.linalg.norm(c10 - c00), np.linalg.norm(c11 - c01))
    lv = max(np.linalg.norm(c01 - c00), np.linalg.norm(c11 - c10))
    eu = _even_for(c00, c10, sym_axes) or _even_for(c01, c11, sym_axes)
    ev = _even_for(c00, c01, sym_axes) or _even_for(c10, c11, sym_axes)
    ub = _uniform_breaks(0.0, 1.0, base / lu, eu)
    vb = _uniform_breaks(0.0, 1.0, base / lv, ev)
    return _Patch(_bilinear(c00, c10, c11, c01), ub, vb, tag, _const_hint(outward))


def _box_patches(solid, half, base, sym_axes):
    R, t = solid.pose.R, solid.pose.t
    hx, hy, hz = half
    patches = []
    names = ("x", "y", "z")
    for k in range(3):
        i, j = [a for a in range(3) if a != k]
        for sgn, side in ((-1, "neg"), (1, "pos")):
            loc = []
            for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = np.zeros(3)
                p[k] = sgn * half[k]
                p[i] = a * half[i]
                p[j] = b * half[j]
                loc.append(p)
            g = [R @ p + t for p in loc]
            nrm = np.zeros(3)
            nrm[k] = sgn
            patches.append(_planar_face(g, R @ nrm, f"{names[k]}{side}", base, sym_axes))
    return patches


def _prism_patches(solid, prism: Prism, base, sym_axes):
    R, t = solid.pose.R, solid.pose.t
    poly = np.array(prism.profile)
    patches = []
    n = len(poly)
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        loc = [np.r_[a, prism.z0], np.r_[b, prism.z0], np.r_[b, prism.z1], np.r_[a, prism.z1]]
        e = b - a
        out = np.array([e[1], -e[0], 0.0])
        out /= np.linalg.norm(out)
        patches.append(_planar_face([R @ p + t for p in loc], R @ out, f"side{k}", base, sym_axes))
    if n != 4:
        raise MeshError("prism caps are meshed as quadrilaterals; profile needs four vertices")
    for z, tag, sgn in ((prism.z0, "bottom", -1.0), (prism.z1, "top", 1.0)):
        loc = [np.r_[p, z] for p in poly]
        patches.append(_planar_face([R @ p + t for p in loc], R @ np.array([0, 0, sgn]), tag, base, sym_axes))
    return patches


def _cyl_side(solid, radius, length, inward, n_theta, base, sym_axes, tag):
    R, t = solid.pose.R, solid.pose.t

    def f(u, v):
        loc = np.stack([radius * np.cos(u), radius * np.sin(u), v], axis=-1)
        return loc @ R.T + t

    def hint(p):
        loc = (np.asarray(p) - t) @ R
        loc[:, 2] = 0.0
        nr = loc / np.linalg.norm(loc, axis=1)[:, None]
        return (-nr if inward else nr) @ R.T

    a0 = t
    a1 = R @ np.array([0, 0, length]) + t
    ub = 2 * np.pi * np.arange(n_theta + 1) / n_theta
    vb = _uniform_breaks(0.0, length, base, _even_for(a0, a1, sym_axes))
    return _Patch(f, ub, vb, tag, hint)


def _rim(pos, v_value, n_max=None):
    """Rim vertices of a cylinder side at parameter v, sorted by angle."""
    items = sorted((u, p) for (u, v), p in pos.items() if v == v_value and u < 2 * np.pi)
    th = np.array([u for u, _ in items])
    pts = np.array([p for _, p in items])
    return th, pts


def _piecewise(th, pts):
    """Periodic piecewise-linear curve through pts at angles th."""
    thx = np.r_[th, 2 * np.pi]
    ptx = np.vstack([pts, pts[:1]])

    def f(u):
        u = np.asarray(u, dtype=float)
        i = np.clip(np.searchsorted(thx, u, side="right") - 1, 0, len(thx) - 2)
        w = ((u - thx[i]) / (thx[i + 1] - thx[i]))[:, None]
        return (1 - w) * ptx[i] + w * ptx[i + 1]
    return f


def _ring_patch(th_in, p_in, th_out, p_out, normal, tag):
    ub = np.union1d(np.r_[th_in, 2 * np.pi], np.r_[th_out, 2 * np.pi])
    fi = _piecewise(th_in, p_in)
    fo = _piecewise(th_out, p_out)

    def f(u, v):
        v = np.asarray(v)[:, None]
        return (1 - v) * fi(u) + v * fo(u)
    return _Patch(f, ub, np.array([0.0, 1.0]), tag, _const_hint(normal))


def _disk_patches(center, e1, e2, th, rim_pts, radius, normal, tag):
    """O-grid over a disk bounded by the rim polygon (angles th)."""
    a = 0.4 * radius
    center = np.asarray(center, dtype=float)
    sq = lambda x, y: center + x * e1 + y * e2
    patches = [_Patch(_bilinear(sq(-a, -a), sq(a, -a), sq(a, a), sq(-a, a)),
                      np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0]), tag, _const_hint(normal))]
    rim = _piecewise(th, rim_pts)
    quarter = np.pi / 2
    for k in range(4):
        t0 = -np.pi / 4 + k * quarter
        t1 = t0 + quarter
        c0 = np.array([math.cos(t0), math.sin(t0)]) * a * math.sqrt(2)
        c1 = np.array([math.cos(t1), math.sin(t1)]) * a * math.sqrt(2)
        c0, c1 = np.round(c0 / a) * a, np.round(c1 / a) * a

        def f(u, v, t0=t0, t1=t1, c0=c0, c1=c1):
            u = np.asarray(u, dtype=float)
            w = ((u - t0) / (t1 - t0))[:, None]
            s = (1 - w) * c0 + w * c1
            inner = center + s[:, :1] * e1 + s[:, 1:] * e2
            uu = np.mod(u, 2 * np.pi)
            v = np.asarray(v)[:, None]
            return (1 - v) * inner + v * rim(uu)
        thk = np.mod(th - t0 + 1e-12, 2 * np.pi) - 1e-12 + t0
        ub = np.unique(np.r_[t0, thk[(thk > t0) & (thk < t1)], t1])
        patches.append(_Patch(f, ub, np.array([0.0, 1.0]), tag, _const_hint(normal)))
    return patches


def _n_theta(radius, size: SizeField, solid, base):
    lo, hi = solid.bounds()
    c = 0.5 * (lo + hi)
    h = min(base, size.lower_bound(c, 0.5 * float(np.linalg.norm(hi - lo))) * 4)
    n = int(math.ceil(2 * math.pi * radius / h / 8.0)) * 8
    # at least 40 sides keeps the inscribed-polygon area error below 0.5%
    return max(40, n)


def _solid_polygons(solid, size: SizeField, sym_axes):
    """List of (polygon, tag) covering the solid surface."""
    sh = solid.shape
    base = size.base_edge
    out = []
    if isinstance(sh, (Box, Plate)):
        half = (sh.box if isinstance(sh, Plate) else sh).half_extents
        for p in _box_patches(solid, half, base, sym_axes):
            out += _mesh_patch(p, size)
    elif isinstance(sh, Prism):
        for p in _prism_patches(solid, sh, base, sym_axes):
            out += _mesh_patch(p, size)
    elif isinstance(sh, (Cylinder, Tube)):
        R, t = solid.pose.R, solid.pose.t
        e1, e2, ax = R[:, 0], R[:, 1], R[:, 2]
        rings = {}
        radii = [("side", sh.radius, False)] if isinstance(sh, Cylinder) else \
            [("outer", sh.outer_radius, False), ("inner", sh.inner_radius, True)]
        for tag, r, inward in radii:
            nt = _n_theta(r, size, solid, base)
            patch = _cyl_side(solid, r, sh.length, inward, nt, base, sym_axes, tag)
            polys, pos, _ = _patch_cells(patch, size)
            out += [(P, tag) for P in polys]
            rings[tag] = (_rim(pos, 0.0), _rim(pos, patch.vbreaks[-1]))
        for which, tag, sgn, c in ((0, "start", -1.0, t), (1, "end", 1.0, t + ax * sh.length)):
            if isinstance(sh, Cylinder):
                th, pts = rings["side"][which]
                for p in _disk_patches(c, e1, e2, th, pts, sh.radius, sgn * ax, tag):
                    out += _mesh_patch(p, size)
            else:
                (ti, pi), (to, po) = rings["inner"][which], rings["outer"][which]
                p = _ring_patch(ti, pi, to, po, sgn * ax, tag)
                out += _mesh_patch(p, size)
    elif isinstance(sh, Sphere):
        out += _sphere_polygons(solid, sh, base)
    else:
        raise MeshError(f"cannot mesh shape {type(sh).__name__}")
    return out


def _mesh_patch(patch, size):
    polys, _, _ = _patch_cells(patch, size)
    oriented = []
    for P in polys:
        oriented.append((P, patch.tag))
    return oriented


def _sphere_polygons(solid, sh: Sphere, base):
    n = 2 * max(2, int(math.ceil(sh.radius / base)))
    g = np.linspace(-1.0, 1.0, n + 1)
    out = []
    for k in range(3):
        i, j = [a for a in range(3) if a != k]
        for sgn in (-1.0, 1.0):
            A, B = np.meshgrid(g, g, indexing="ij")
            P = np.zeros(A.shape + (3,))
            P[..., k] = sgn
            P[..., i] = A
            P[..., j] = B
            P = P / np.linalg.norm(P, axis=-1)[..., None] * sh.radius
            P = solid.pose.to_global(P.reshape(-1, 3)).reshape(P.shape)
            for a in range(n):
                for b in range(n):
                    q = np.array([P[a, b], P[a + 1, b], P[a + 1, b + 1], P[a, b + 1]])
                    out.append((q[[0, 1, 2]], "surface"))
                    out.append((q[[0, 2, 3]], "surface"))
    return out


# ---------------------------------------------------------------------------
# panel mesh


@dataclass(frozen=True)
class PanelMesh:
    """Flat panels with per-panel geometry and body tags.

    Arrays have one row per panel. ``vertices`` is (N, 4, 3); triangles repeat
    their last vertex and have ``nv == 3``. ``kind`` is 0 for conductor
    surfaces and 1 for dielectric interfaces. ``eps_in`` is the relative
    permittivity on the inner side (1 for conductors), the outer side is
    vacuum.
    """

    vertices: np.ndarray
    nv: np.ndarray
    body: np.ndarray
    face: np.ndarray
    face_names: tuple
    scene: Scene
    sym_axes: tuple = ()
    size_field: SizeField | None = None

    def __post_init__(self):
        for name in ("vertices", "nv", "body", "face"):
            getattr(self, name).setflags(write=False)

    # -- basic geometry --------------------------------------------------------

    def __len__(self):
        return int(self.nv.shape[0])

    @property
    def n_group(self) -> int:
        return 2 ** len(self.sym_axes)

    @property
    def n_rep(self) -> int:
        return len(self) // self.n_group

    def _mirrored(self, rep: np.ndarray, vector: bool) -> np.ndarray:
        """Tile a per-panel array of the first block over all mirror blocks.

        Computing geometry once and reflecting it keeps image panels exactly
        mirror-covariant, which the symmetry-sector solve relies on.
        """
        blocks = [rep]
        for g in range(1, self.n_group):
            b = rep.copy()
            if vector:
                for bit, a in enumerate(self.sym_axes):
                    if g >> bit & 1:
                        b[..., AXES.index(a)] *= -1
            blocks.append(b)
        return np.concatenate(blocks)

    @cached_property
    def _geometry(self) -> dict:
        n = self.n_rep
        V = self.vertices[:n]
        tri = self.nv[:n] == 3
        s = V[:, 0] + V[:, 1] + V[:, 2]
        cen = s / 3.0
        cen[~tri] = (s[~tri] + V[~tri, 3]) / 4.0
        nw = np.zeros((n, 3))
        for k in range(4):
            a = V[:, k]
            b = V[:, (k + 1) % 4]
            nw += 0.5 * np.cross(a, b)
        area = np.linalg.norm(nw, axis=1)
        size = np.zeros(n)
        for a in range(4):
            for b in range(a + 1, 4):
                size = np.maximum(size, np.linalg.norm(V[:, a] - V[:, b], axis=1))
        emax = np.zeros(n)
        for k in range(4):
            emax = np.maximum(emax, np.linalg.norm(V[:, (k + 1) % 4] - V[:, k], axis=1))
        qp, qw, nq = _kernels.quadrature(V, self.nv[:n])
        return {
            "centroid": self._mirrored(cen, True),
            "normal": self._mirrored(nw / area[:, None], True),
            "area": self._mirrored(area, False),
            "size": self._mirrored(size, False),
            "edge_max": self._mirrored(emax, False),
            "quadrature": (self._mirrored(qp, True), self._mirrored(qw, False), self._mirrored(nq, False)),
        }

    @property
    def centroid(self) -> np.ndarray:
        return self._geometry["centroid"]

    @property
    def area(self) -> np.ndarray:
        return self._geometry["area"]

    @property
    def normal(self) -> np.ndarray:
        return self._geometry["normal"]

    @property
    def size(self) -> np.ndarray:
        return self._geometry["size"]

    @property
    def edge_max(self) -> np.ndarray:
        return self._geometry["edge_max"]

    @property
    def quadrature(self):
        return self._geometry["quadrature"]

    @cached_property
    def kind(self) -> np.ndarray:
        cond = np.array([s.is_conductor for s in self.scene.solids])
        return np.where(cond[self.body], 0, 1).astype(np.int64)

    @cached_property
    def eps_in(self) -> np.ndarray:
        eps = np.array([1.0 if s.is_conductor else s.material.relative_permittivity for s in self.scene.solids])
        return eps[self.body]

    @property
    def eps_out(self) -> np.ndarray:
        return np.ones(len(self))

    def aspect_stats(self):
        a = self.edge_max**2 / self.area
        return float(a.min()), float(a.max())

    def panel_count_by_body(self) -> dict:
        return {name: int(np.sum(self.body == i)) for i, name in enumerate(self.scene.names)}

    def face_mask(self, body: int, face: str) -> np.ndarray:
        if face not in self.face_names:
            return np.zeros(len(self), dtype=bool)
        return (self.body == body) & (self.face == self.face_names.index(face))

    # -- invariants ------------------------------------------------------------

    def body_area(self) -> np.ndarray:
        return np.bincount(self.body, weights=self.area, minlength=len(self.scene))

    def body_volume(self) -> np.ndarray:
        w = np.einsum("ij,ij->i", self.centroid, self.normal) * self.area / 3.0
        return np.bincount(self.body, weights=w, minlength=len(self.scene))

    def normal_sums(self) -> np.ndarray:
        """Per-body sum of area-weighted normals divided by body area."""
        s = np.zeros((len(self.scene), 3))
        np.add.at(s, self.body, self.normal * self.area[:, None])
        return np.linalg.norm(s, axis=1) / np.maximum(self.body_area(), 1e-300)

    def check_watertight(self, tol: float = 1e-6):
        bad = np.flatnonzero(self.normal_sums() > tol)
        if bad.size:
            names = ", ".join(self.scene.names[i] for i in bad)
            raise MeshError(f"mesh of {names} is not closed")

    # -- transforms -------------------------------------------------------------

    def translated_bodies(self, names, offset, scene: Scene) -> "PanelMesh":
        """Rigidly move the panels of named bodies; symmetry reduced to ``scene``."""
        idx = [self.scene.index(n) for n in names]
        full = self.expanded(scene.symmetry)
        V = full.vertices.copy()
        sel = np.isin(full.body, idx)
        V[sel] += np.asarray(offset, dtype=float)
        return replace(full, vertices=V, scene=scene, nv=full.nv.copy(), body=full.body.copy(),
                       face=full.face.copy())

    def expanded(self, keep_axes=()) -> "PanelMesh":
        """Reorder panels so that only ``keep_axes`` are used as mirror blocks."""
        keep = tuple(a for a in self.sym_axes if a in keep_axes)
        if keep == self.sym_axes:
            return self
        n_rep, old = self.n_rep, self.sym_axes
        kbits = [old.index(a) for a in keep]
        dbits = [old.index(a) for a in old if a not in keep]
        order = []
        for hk in range(2 ** len(keep)):
            gk = sum(1 << kbits[b] for b in range(len(keep)) if hk >> b & 1)
            for hd in range(2 ** len(dbits)):
                gd = sum(1 << dbits[b] for b in range(len(dbits)) if hd >> b & 1)
                g = gk | gd
                order.append(np.arange(g * n_rep, (g + 1) * n_rep))
        order = np.concatenate(order)
        return PanelMesh(self.vertices[order].copy(), self.nv[order].copy(), self.body[order].copy(),
                         self.face[order].copy(), self.face_names, self.scene, keep, self.size_field)

    # -- dump / load ----------------------------------------------------------------

    def dumps(self) -> str:
        """One panel per line: nv, 12 vertex coordinates, body id, kind, face."""
        lines = [f"# panels {len(self)} sym {''.join(self.sym_axes) or '-'} faces {' '.join(self.face_names)}"]
        for i in range(len(self)):
            coords = " ".join(repr(float(x)) for x in self.vertices[i].ravel())
            lines.append(f"{int(self.nv[i])} {coords} {int(self.body[i])} {int(self.kind[i])} {int(self.face[i])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, scene: Scene) -> "PanelMesh":
        rows = [ln.split() for ln in text.splitlines() if ln and not ln.startswith("#")]
        head = text.splitlines()[0].split()
        sym = tuple(head[4]) if head[4] != "-" else ()
        faces = tuple(head[6:])
        nv = np.array([int(r[0]) for r in rows], dtype=np.int64)
        V = np.array([[float(x) for x in r[1:13]] for r in rows]).reshape(-1, 4, 3)
        body = np.array([int(r[13]) for r in rows], dtype=np.int64)
        face = np.array([int(r[15]) for r in rows], dtype=np.int64)
        return cls(V, nv, body, face, faces, scene, sym)


def _mirror(V, nv, axes_idx):
    """Reflect panels across the given coordinate planes, keeping outward order."""
    W = V.copy()
    for k in axes_idx:
        W[:, :, k] *= -1
    if len(axes_idx) % 2:
        tri = nv == 3
        W[~tri] = W[~tri][:, ::-1]
        W[tri, :3] = W[tri][:, 2::-1]
        W[tri, 3] = W[tri, 2]
    return W


def mesh_scene(scene: Scene, base_edge: float, refine_rules=(), grade: float = 0.3,
               use_symmetry: bool = True) -> PanelMesh:
    """Mesh every solid of a scene.

    Parameters
    ----------
    scene : Scene
    base_edge : float
        Largest panel edge in um.
    refine_rules : sequence of RefineRule
        Regions with smaller target edges; the target grows by ``grade``
        per um of distance from each region.
    use_symmetry : bool
        Mesh only the fundamental domain of the scene's mirror planes and
        reflect it.
    """
    size = SizeField(float(base_edge), tuple(refine_rules), grade)
    sym = tuple(a for a in scene.symmetry if size.invariant(AXES.index(a))) if use_symmetry else ()
    sym_idx = [AXES.index(a) for a in sym]
    partners = {a: scene.mirror_partner(a) for a in sym}
    face_names: list = []
    polys, bodies, faces = [], [], []
    scale = max(1.0, max(float(np.max(np.abs(np.concatenate(s.bounds())))) for s in scene.solids))
    for b, solid in enumerate(scene.solids):
        lo, hi = solid.bounds()
        if any(hi[k] <= 1e-9 * scale for k in sym_idx):
            continue  # produced by reflection of its partner
        for P, tag in _solid_polygons(solid, size, sym_idx):
            P = P.copy()
            P[np.abs(P) < 1e-9 * scale] = 0.0
            if sym_idx:
                c = P.mean(axis=0)
                if any(c[k] <= 0.0 for k in sym_idx):
                    continue
                if any(P[:, k].min() < -1e-9 * scale for k in sym_idx):
                    raise MeshError(f"panel of {solid.name!r} straddles a mirror plane near {c}")
            if tag not in face_names:
                face_names.append(tag)
            polys.append(P)
            bodies.append(b)
            faces.append(face_names.index(tag))
    n = len(polys)
    V = np.zeros((n, 4, 3))
    nv = np.zeros(n, dtype=np.int64)
    for i, P in enumerate(polys):
        k = len(P)
        V[i, :k] = P
        if k == 3:
            V[i, 3] = P[2]
        nv[i] = k
    body = np.array(bodies, dtype=np.int64)
    face = np.array(faces, dtype=np.int64)
    # orient outward
    hints = _orientation_hints(scene, V, nv, body, face, face_names, size, sym_idx)
    Vs, nvs, bs, fs = [V], [nv], [body], [face]
    for g in range(1, 2 ** len(sym)):
        axes_g = [sym_idx[b] for b in range(len(sym)) if g >> b & 1]
        Vs.append(_mirror(V, nv, axes_g))
        nvs.append(nv.copy())
        bg = body.copy()
        for b in range(len(sym)):
            if g >> b & 1:
                bg = np.array(partners[sym[b]])[bg]
        bs.append(bg)
        fs.append(face.copy())
    del hints
    mesh = PanelMesh(np.concatenate(Vs), np.concatenate(nvs), np.concatenate(bs), np.concatenate(fs),
                     tuple(face_names), scene, sym, size)
    if np.any(mesh.area < MIN_AREA):
        i = int(np.argmin(mesh.area))
        raise MeshError(f"degenerate panel (area {mesh.area[i]:.3g} um^2) at {mesh.centroid[i]}")
    return mesh


def _orientation_hints(scene, V, nv, body, face, face_names, size, sym_idx):
    """Flip panels in place so that normals point out of their solid."""
    n = len(nv)
    if n == 0:
        return None
    cen = np.where((nv == 4)[:, None], V.mean(axis=1), V[:, :3].mean(axis=1))
    nrm = np.zeros((n, 3))
    for k in range(4):
        a = V[:, k]
        b = V[:, (k + 1) % 4]
        nrm += np.cross(a, b)
    eps = 1e-3 * np.sqrt(np.linalg.norm(nrm, axis=1))
    unit = nrm / np.linalg.norm(nrm, axis=1)[:, None]
    flip = np.zeros(n, dtype=bool)
    for b in np.unique(body):
        sel = body == b
        solid = scene.solids[b]
        step = np.maximum(eps[sel], 1e-6)[:, None]
        d_out = solid.sdf(cen[sel] + step * unit[sel])
        d_in = solid.sdf(cen[sel] - step * unit[sel])
        flip[sel] = d_out < d_in
    tri = nv == 3
    f4 = flip & ~tri
    f3 = flip & tri
    V[f4] = V[f4][:, ::-1]
    V[f3, :3] = V[f3][:, 2::-1]
    V[f3, 3] = V[f3, 2]
    return flip


# ---------------------------------------------------------------------------
# refinement of an existing mesh


def _split_panel(P, k):
    if k == 3:
        a, b, c = P[:3]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        return [np.array(t) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]
    a, b, c, d = P
    ab, bc, cd, da = (a + b) / 2, (b + c) / 2, (c + d) / 2, (d + a) / 2
    m = (a + b + c + d) / 4
    return [np.array(q) for q in ((a, ab, m, da), (ab, b, bc, m), (m, bc, c, cd), (da, m, cd, d))]


def refine_where(mesh: PanelMesh, region, target: float) -> PanelMesh:
    """Split panels touching ``region`` until their edges are <= target."""
    axes = tuple(a for a in mesh.sym_axes if region.invariant(AXES.index(a)))
    base = mesh.expanded(axes)
    n_rep = base.n_rep
    V, nv = base.vertices[:n_rep], base.nv[:n_rep]
    polys, bodies, faces = [], [], []
    changed = False
    for i in range(n_rep):
        work = [(V[i, :nv[i]].copy(), int(nv[i]))]
        while work:
            P, k = work.pop()
            c = P.mean(axis=0)
            rad = float(np.max(np.linalg.norm(P - c, axis=1)))
            emax = float(np.max(np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)))
            if emax > target and float(region.distance(c)) <= rad:
                work += [(q, len(q)) for q in _split_panel(P, k)]
                changed = True
            else:
                polys.append(P)
                bodies.append(int(base.body[i]))
                faces.append(int(base.face[i]))
    if not changed:
        return mesh
    n = len(polys)
    W = np.zeros((n, 4, 3))
    k = np.zeros(n, dtype=np.int64)
    for i, P in enumerate(polys):
        W[i, :len(P)] = P
        if len(P) == 3:
            W[i, 3] = P[2]
        k[i] = len(P)
    body = np.array(bodies, dtype=np.int64)
    face = np.array(faces, dtype=np.int64)
    sym_idx = [AXES.index(a) for a in axes]
    partners = {a: mesh.scene.mirror_partner(a) for a in axes}
    Vs, nvs, bs, fs = [W], [k], [body], [face]
    for g in range(1, 2 ** len(axes)):
        ax_g = [sym_idx[b] for b in range(len(axes)) if g >> b & 1]
        Vs.append(_mirror(W, k, ax_g))
        nvs.append(k.copy())
        bg = body.copy()
        for b in range(len(axes)):
            if g >> b & 1:
                bg = np.array(partners[axes[b]])[bg]
        bs.append(bg)
        fs.append(face.copy())
    return PanelMesh(np.concatenate(Vs), np.concatenate(nvs), np.concatenate(bs), np.concatenate(fs),
                     mesh.face_names, mesh.scene, axes, mesh.size_field)
