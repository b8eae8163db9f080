"""Boundary-element electrostatics on panel meshes.

The unknown on every panel is the total surface charge density in scaled
form ``s = sigma / (4 pi eps0)`` (V/um), so that the potential of a panel
is ``s * integral 1/r dA`` in volts with lengths in um. Conductor panels
are collocated on their prescribed potential. On dielectric interfaces the
normal displacement jump equals the free surface charge,

    (eps_out - eps_in) E_other.n + 2 pi (eps_out + eps_in) s = 4 pi s_free,

where ``E_other`` is the field of every panel except the own one and of
external point charges. Prescribed charge therefore enters only the
right-hand side, while the dielectric still polarises self-consistently.

Meshes carrying mirror planes are solved per symmetry sector: the dense
system splits into ``2**k`` independent blocks, each factored once and
reused for any number of right-hand sides.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg.lapack import dgecon

from . import _kernels
from .constants import EPS0_PER_UM, point_charge_strength, surface_density_to_scaled
from .geometry import SurfaceChargePatch
from .mesher import MeshError, PanelMesh

COND_LIMIT = 1e12
DEFAULT_MEMORY_GB = 3.0
RESIDUAL_ROWS = 48
FIELD_SCALE = 1e6  # V/um -> V/m


def memory_limit() -> float:
    """Dense-matrix budget in bytes from TRAPKIT_MEMORY_GB (default 3 GiB)."""
    return float(os.environ.get("TRAPKIT_MEMORY_GB", DEFAULT_MEMORY_GB)) * 2**30


class SolverError(RuntimeError):
    """Linear system could not be solved reliably."""


class InsideConductorError(ValueError):
    """Evaluation point lies inside a conductor."""


@dataclass(frozen=True)
class BoundaryConditionSet:
    """Conductor potentials and fixed sources for one solve.

    Parameters
    ----------
    potentials : dict
        Volts per conductor group (``"RfA"``, ``"RfB"``, Dc labels, shield
        labels). ``"Ground"`` is always 0 V; shield groups missing from the
        map are grounded.
    patches : sequence of SurfaceChargePatch
        Prescribed free charge on dielectric solids.
    point_charges : sequence of (position um, charge C)
    all_grounded : bool
        Every conductor not listed in ``potentials`` sits at 0 V.
    """

    potentials: tuple = ()
    patches: tuple = ()
    point_charges: tuple = ()
    all_grounded: bool = False

    def __post_init__(self):
        pots = self.potentials.items() if isinstance(self.potentials, dict) else self.potentials
        object.__setattr__(self, "potentials", tuple(sorted((str(k), float(v)) for k, v in pots)))
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "point_charges",
                           tuple((tuple(float(c) for c in p), float(q)) for p, q in self.point_charges))

    @property
    def voltage(self) -> dict:
        return dict(self.potentials)

    @classmethod
    def grounded(cls, point_charges=(), patches=()):
        return cls({}, patches, point_charges, True)

    def group_voltages(self, scene) -> dict:
        """Voltage of every conductor group of ``scene``; raises if incomplete."""
        v = self.voltage
        out = {}
        for s in scene.solids:
            g = s.group
            if g is None or g in out:
                continue
            if g == "Ground":
                if v.get(g, 0.0) != 0.0:
                    raise SolverError("the Ground group is fixed at 0 V")
                out[g] = 0.0
            elif g in v:
                out[g] = v[g]
            elif s.role == "FloatingShield" or self.all_grounded:
                out[g] = 0.0
            else:
                raise SolverError(f"no voltage for conductor group {g!r}")
        unknown = set(v) - set(out)
        if unknown:
            raise SolverError(f"voltages given for groups not in scene: {sorted(unknown)}")
        return out

    def scaled(self, a: float) -> "BoundaryConditionSet":
        return BoundaryConditionSet({k: a * x for k, x in self.potentials},
                                    tuple(SurfaceChargePatch(p.host, p.region, a * p.density) for p in self.patches),
                                    tuple((p, a * q) for p, q in self.point_charges), self.all_grounded)


def _characters(n_axes: int) -> np.ndarray:
    n = 2**n_axes
    chi = np.ones((n, n))
    for s in range(n):
        for g in range(n):
            chi[s, g] = -1.0 if bin(s & g).count("1") % 2 else 1.0
    return chi


class Solver:
    """Factored BEM operator for one mesh.

    Sector matrices are assembled on first use and LU factors cached, so
    many boundary-condition sets can be solved for the cost of one
    factorisation.
    """

    def __init__(self, mesh: PanelMesh, check_condition: bool = True):
        if len(mesh) == 0:
            raise SolverError("empty mesh")
        try:
            mesh.check_watertight()
        except MeshError as exc:
            raise SolverError(f"rejected mesh: {exc}") from exc
        self.mesh = mesh
        self.check_condition = check_condition
        m = mesh
        self._geo = (m.vertices, m.nv, m.normal, m.centroid, m.area, m.size) + tuple(m.quadrature)
        eps_in, eps_out = m.eps_in, m.eps_out
        self._kind = m.kind.astype(np.int64)
        self._jump = eps_out - eps_in
        self._diag = 2.0 * np.pi * (eps_out + eps_in)
        self._chi = _characters(len(m.sym_axes))
        self._blocks = None
        self._lu: dict = {}
        self.condition: dict = {}

    # -- assembly and factorisation -------------------------------------------

    def _assemble(self):
        if self._blocks is None:
            m = self.mesh
            need = 8.0 * len(m) * m.n_rep
            limit = memory_limit()
            if need > limit:
                raise SolverError(f"dense system of {len(m)} panels needs {need / 2**30:.1f} GiB"
                                  f" (limit {limit / 2**30:.1f} GiB, TRAPKIT_MEMORY_GB); coarsen the mesh")
            self._blocks = _kernels.assemble_all_sectors(m.n_rep, m.n_group, self._chi, self._kind,
                                                         self._jump, self._diag, *self._geo)
        return self._blocks

    def _factor(self, s: int):
        if s not in self._lu:
            A = self._assemble()[s]
            # factor the transpose (Fortran order view) in place
            At = A.T
            anorm = float(np.max(np.sum(np.abs(A), axis=1)))
            lu, piv = lu_factor(At, overwrite_a=True, check_finite=False)
            if self.check_condition:
                rcond, info = dgecon(lu, anorm, norm="1")
                cond = math.inf if rcond == 0 else 1.0 / rcond
                self.condition[s] = cond
                if not cond <= COND_LIMIT:
                    raise SolverError(f"ill-conditioned system (condition estimate {cond:.3g} in sector {s});"
                                      " refine the mesh near close gaps or check for overlapping solids")
            self._lu[s] = (lu, piv)
        return self._lu[s]

    # -- right-hand side ----------------------------------------------------------

    def rhs(self, bc: BoundaryConditionSet) -> np.ndarray:
        m = self.mesh
        scene = m.scene
        volts = bc.group_voltages(scene)
        body_v = np.array([volts[s.group] if s.is_conductor else 0.0 for s in scene.solids])
        b = np.zeros(len(m))
        cond = self._kind == 0
        b[cond] = body_v[m.body[cond]]
        if bc.point_charges:
            src = np.array([p for p, _ in bc.point_charges], dtype=float)
            q = np.array([point_charge_strength(c) for _, c in bc.point_charges])
            ext = _kernels.point_sources(m.centroid, src, q)
            b[cond] -= ext[cond, 0]
            diel = ~cond
            b[diel] -= self._jump[diel] * np.einsum("ij,ij->i", ext[diel, 1:], m.normal[diel])
        for patch in bc.patches:
            mask = patch_mask(m, patch)
            b[mask] += 4.0 * np.pi * surface_density_to_scaled(patch.density)
        return b

    # -- solve ------------------------------------------------------------------

    def solve_rhs(self, B: np.ndarray) -> np.ndarray:
        """Densities (N, k) for right-hand sides B (N, k)."""
        m = self.mesh
        B = np.asarray(B, dtype=float)
        single = B.ndim == 1
        if single:
            B = B[:, None]
        n_rep, n_group = m.n_rep, m.n_group
        Bg = B.reshape(n_group, n_rep, -1)
        Bs = np.einsum("sg,gpk->spk", self._chi, Bg) / n_group
        scale = float(np.max(np.abs(B))) if B.size else 0.0
        sig = np.zeros_like(Bs)
        for s in range(n_group):
            if not np.any(np.abs(Bs[s]) > 1e-15 * scale):
                continue
            sig[s] = lu_solve(self._factor(s), Bs[s], trans=1, check_finite=False)
        S = np.einsum("sg,spk->gpk", self._chi, sig).reshape(len(m), -1)
        return S[:, 0] if single else S

    def residual(self, S: np.ndarray, B: np.ndarray, n_rows: int = RESIDUAL_ROWS) -> float:
        """Relative residual of the full system on a fixed sample of rows."""
        n = len(self.mesh)
        rows = np.unique(np.linspace(0, n - 1, min(n, n_rows)).astype(np.int64))
        A = _kernels.full_rows(rows, self._kind, self._jump, self._diag, *self._geo)
        S2 = S if S.ndim == 2 else S[:, None]
        B2 = B if B.ndim == 2 else B[:, None]
        r = A @ S2 - B2[rows]
        denom = np.abs(A) @ np.abs(S2) + np.abs(B2[rows])
        return float(np.max(np.abs(r) / np.maximum(denom, 1e-300)))

    def solve(self, bc: BoundaryConditionSet) -> "FieldSolution":
        return self.solve_many([bc])[0]

    def solve_many(self, bcs) -> list:
        bcs = list(bcs)
        B = np.stack([self.rhs(bc) for bc in bcs], axis=1)
        S = self.solve_rhs(B)
        res = self.residual(S, B)
        out = []
        for k, bc in enumerate(bcs):
            src, q = _sources(bc)
            out.append(FieldSolution(self.mesh, S[:, k].copy(), bc, src, q, res))
        return out

    def capacitance_matrix(self) -> tuple:
        """Charge (C) on each conductor group for each group at 1 V.

        Returns ``(groups, C)`` with ``C[i, j]`` the charge on group i when
        group j is at 1 V and all others at 0 V. Ground is included.
        """
        scene = self.mesh.scene
        groups = scene.conductor_groups()
        bcs = []
        for g in groups:
            pots = {h: (1.0 if h == g else 0.0) for h in groups if h != "Ground"}
            if g == "Ground":
                bcs.append(None)
            else:
                bcs.append(BoundaryConditionSet(pots))
        B = np.zeros((len(self.mesh), len(groups)))
        cond = self._kind == 0
        grp = np.array([groups.index(s.group) if s.is_conductor else -1 for s in scene.solids])
        for j in range(len(groups)):
            B[cond, j] = (grp[self.mesh.body[cond]] == j).astype(float)
        S = self.solve_rhs(B)
        sol_charge = np.zeros((len(groups), len(groups)))
        q = S * self.mesh.area[:, None] * (4.0 * np.pi * EPS0_PER_UM)
        for i in range(len(groups)):
            sel = grp[self.mesh.body] == i
            sol_charge[i] = q[sel].sum(axis=0)
        return groups, sol_charge


def patch_mask(mesh: PanelMesh, patch: SurfaceChargePatch) -> np.ndarray:
    b = mesh.scene.index(patch.host)
    if mesh.scene.solids[b].is_conductor:
        raise SolverError(f"charge patch host {patch.host!r} must be a dielectric")
    if patch.region == "All":
        return mesh.body == b
    mask = mesh.face_mask(b, "start")
    if not mask.any():
        raise SolverError(f"{patch.host!r} has no front facet")
    return mask


def _sources(bc: BoundaryConditionSet):
    if not bc.point_charges:
        return np.zeros((0, 3)), np.zeros(0)
    src = np.array([p for p, _ in bc.point_charges], dtype=float)
    q = np.array([point_charge_strength(c) for _, c in bc.point_charges])
    return src, q


@dataclass(frozen=True)
class FieldSolution:
    """Solved panel densities plus the external point sources.

    ``s`` holds the scaled density per panel (V/um); :attr:`sigma` gives
    C/um^2. Solutions are closed under :func:`superpose`.
    """

    mesh: PanelMesh
    s: np.ndarray
    bc: BoundaryConditionSet | None
    src: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    src_strength: np.ndarray = field(default_factory=lambda: np.zeros(0))
    solve_residual: float = 0.0

    @property
    def sigma(self) -> np.ndarray:
        return self.s * (4.0 * np.pi * EPS0_PER_UM)

    def body_charge(self) -> np.ndarray:
        """Total charge (C) per solid, free plus bound."""
        q = self.sigma * self.mesh.area
        return np.bincount(self.mesh.body, weights=q, minlength=len(self.mesh.scene))

    def group_charge(self, group: str) -> float:
        sc = self.mesh.scene
        sel = [i for i, s in enumerate(sc.solids) if s.group == group]
        return float(self.body_charge()[sel].sum())

    def _raw(self, points, check=True) -> np.ndarray:
        P = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
        if check:
            self.check_points(P)
        m = self.mesh
        geo = (m.vertices, m.nv, m.normal, m.centroid, m.area, m.size) + tuple(m.quadrature)
        out = _kernels.evaluate(P, self.s, *geo, np.full(len(P), -1, dtype=np.int64))
        if len(self.src_strength):
            out += _kernels.point_sources(P, self.src, self.src_strength)
        return out

    def check_points(self, P, tol: float = 1e-6):
        for s in self.mesh.scene.solids:
            if not s.is_conductor:
                continue
            lo, hi = s.bounds()
            near = np.all((P >= lo - tol) & (P <= hi + tol), axis=1)
            if near.any():
                d = s.sdf(P[near])
                if np.any(d < -tol):
                    i = np.flatnonzero(near)[int(np.argmin(d))]
                    raise InsideConductorError(f"point {P[i]} lies inside conductor {s.name!r}")

    def potential(self, points, check=True) -> np.ndarray:
        """Potential in volts."""
        return self._raw(points, check)[:, 0]

    def field(self, points, check=True) -> np.ndarray:
        """Electric field in V/m, shape (n, 3)."""
        return self._raw(points, check)[:, 1:] * FIELD_SCALE

    def potential_and_field(self, points, check=True):
        r = self._raw(points, check)
        return r[:, 0], r[:, 1:] * FIELD_SCALE

    def surface_field(self, mask) -> np.ndarray:
        """Vacuum-side field (V/m) at the centroids of the selected panels."""
        m = self.mesh
        idx = np.flatnonzero(mask)
        P = m.centroid[idx]
        geo = (m.vertices, m.nv, m.normal, m.centroid, m.area, m.size) + tuple(m.quadrature)
        out = _kernels.evaluate(np.ascontiguousarray(P), self.s, *geo, idx.astype(np.int64))
        if len(self.src_strength):
            out += _kernels.point_sources(P, self.src, self.src_strength)
        # own panel: in-plane part vanishes at the centroid of a flat panel up
        # to the analytic in-plane self term, which the kernel supplies
        own = np.zeros((len(idx), 3))
        for k, j in enumerate(idx):
            c = m.centroid[j]
            _, gx, gy, gz = _kernels.panel_exact(c[0], c[1], c[2], m.vertices[j], m.nv[j], m.normal[j])
            own[k] = self.s[j] * np.array([gx, gy, gz])
        E = out[:, 1:] + own + 2.0 * np.pi * self.s[idx, None] * m.normal[idx]
        return E * FIELD_SCALE


def solve(mesh: PanelMesh, bc: BoundaryConditionSet) -> FieldSolution:
    return Solver(mesh).solve(bc)


def eval_potential(sol: FieldSolution, points) -> np.ndarray:
    return sol.potential(points)


def eval_field(sol: FieldSolution, points) -> np.ndarray:
    return sol.field(points)


def superpose(solutions, weights) -> FieldSolution:
    """Weighted sum of solutions on the same mesh (exact by linearity)."""
    solutions = list(solutions)
    weights = [float(w) for w in weights]
    if not solutions or len(solutions) != len(weights):
        raise ValueError("need one weight per solution")
    mesh = solutions[0].mesh
    for s in solutions[1:]:
        if s.mesh is not mesh:
            raise ValueError("solutions live on different meshes")
    s = np.zeros_like(solutions[0].s)
    for sol, w in zip(solutions, weights):
        s = s + w * sol.s
    src = np.concatenate([sol.src for sol in solutions]) if solutions else np.zeros((0, 3))
    q = np.concatenate([w * sol.src_strength for sol, w in zip(solutions, weights)])
    res = max(sol.solve_residual for sol in solutions)
    return FieldSolution(mesh, s, None, src.reshape(-1, 3), q, res)


def export_csv(sol: FieldSolution, points, path) -> None:
    """Write x, y, z (um), Ex, Ey, Ez (V/m), phi (V) per point."""
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    phi, E = sol.potential_and_field(P)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_um", "y_um", "z_um", "Ex_V_per_m", "Ey_V_per_m", "Ez_V_per_m", "phi_V"])
        for p, e, f in zip(P, E, phi):
            w.writerow(["%.12e" % v for v in (*p, *e, f)])


def export_grid(sol: FieldSolution, axes, path) -> None:
    """Binary grid map: ``.npz`` with x, y, z axes, phi and E on the grid."""
    x, y, z = (np.asarray(a, dtype=float) for a in axes)
    X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
    phi, E = sol.potential_and_field(np.stack([X, Y, Z], axis=-1).reshape(-1, 3))
    np.savez(path, x=x, y=y, z=z, phi=phi.reshape(X.shape), E=E.reshape(X.shape + (3,)))
