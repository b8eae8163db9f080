"""Angular-moment conditions for an rf null along the trap axis.

A charge distribution produces a vanishing field everywhere on the z axis
when, in every plane z = const and on every ring of radius r, the angular
moments

    m_0   = sum q        (or integral of rho dtheta)
    m_cos = sum q cos(theta)
    m_sin = sum q sin(theta)

all vanish. This module evaluates those moments, computes the charge
patterns compatible with them for point-charge layouts, checks the
equivalent potential symmetry on a field evaluator, and integrates the
Coulomb field on the axis directly for sampled distributions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .constants import COULOMB_K, UM

RANK_TOL = 1e-10


@dataclass(frozen=True)
class CrossSectionCharges:
    """Charges in one cross-sectional plane.

    Either discrete point charges (``angles``, ``radii``, ``charges``) or a
    density ``rho`` sampled on a uniform periodic angular grid at a single
    radius (``angles`` then holds the grid and ``radii`` a single value).
    """

    angles: np.ndarray
    charges: np.ndarray
    radii: np.ndarray | None = None
    continuous: bool = False

    @classmethod
    def discrete(cls, angles, charges, radii=None):
        a = np.asarray(angles, dtype=float)
        q = np.asarray(charges, dtype=float)
        r = None if radii is None else np.broadcast_to(np.asarray(radii, dtype=float), a.shape).copy()
        if a.shape != q.shape:
            raise ValueError("angles and charges must have the same length")
        return cls(a, q, r, False)

    @classmethod
    def sampled(cls, rho, n: int = 256, radius: float = 1.0):
        """Sample a callable rho(theta) on ``n`` uniform periodic nodes."""
        theta = 2.0 * np.pi * np.arange(n) / n
        return cls(theta, np.asarray(rho(theta), dtype=float), np.full(n, radius), True)


@dataclass(frozen=True)
class MomentReport:
    m_0: float
    m_cos: float
    m_sin: float
    tolerance: float
    error_estimate: float = 0.0

    @property
    def satisfied(self) -> dict:
        return {
            "m_0": abs(self.m_0) <= self.tolerance,
            "m_cos": abs(self.m_cos) <= self.tolerance,
            "m_sin": abs(self.m_sin) <= self.tolerance,
        }

    @property
    def all_satisfied(self) -> bool:
        return all(self.satisfied.values())


def moment_matrix(angles) -> np.ndarray:
    """3 x N matrix mapping site charges to (m_cos, m_sin, m_0)."""
    a = np.asarray(angles, dtype=float)
    return np.vstack([np.cos(a), np.sin(a), np.ones_like(a)])


def angular_moments(cs: CrossSectionCharges, tol: float = 1e-10) -> MomentReport:
    """Angular moments of a cross-section charge set.

    Discrete charges are summed exactly. A sampled periodic density uses
    the trapezoid rule (spectrally accurate for smooth periodic rho); the
    error estimate is the change against the rule on every second node.
    """
    if not cs.continuous:
        m = moment_matrix(cs.angles) @ cs.charges
        scale = max(1.0, float(np.abs(cs.charges).sum()))
        return MomentReport(float(m[2]), float(m[0]), float(m[1]), tol * scale)
    n = cs.angles.size
    w = 2.0 * np.pi / n
    full = moment_matrix(cs.angles) @ cs.charges * w
    if n % 2 == 0:
        half = moment_matrix(cs.angles[::2]) @ cs.charges[::2] * (2 * w)
        err = float(np.max(np.abs(full - half)))
    else:
        err = 0.0
    scale = max(1.0, float(np.abs(cs.charges).sum() * w))
    return MomentReport(float(full[2]), float(full[0]), float(full[1]), tol * scale, err)


def charge_nullspace(angles, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of site charges with vanishing moments.

    Parameters
    ----------
    angles : sequence of float
        Angular positions of the charge sites on one ring.
    tol : float
        Singular values below ``tol`` times the largest one count as zero.

    Returns
    -------
    ndarray, shape (N, k)
        ``k`` may be zero, meaning only the trivial solution exists.
    """
    A = moment_matrix(angles)
    n = A.shape[1]
    if n == 0:
        raise ValueError("at least one charge site is required")
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * smax)) if smax > 0 else 0
    return vt[rank:].T.copy()


def four_rod_angles(alpha: float = math.pi / 4) -> np.ndarray:
    """Rod sites at alpha, pi - alpha, pi + alpha, -alpha."""
    return np.array([alpha, math.pi - alpha, math.pi + alpha, -alpha])


def surface_pair_angles(h: float, r: float) -> np.ndarray:
    """Intersections of a ring of radius r with a plane at distance h < r."""
    if not 0 < h < r:
        raise ValueError("need 0 < h < r")
    phi = math.asin(h / r)
    return np.array([-phi, phi - math.pi])


def in_span(basis: np.ndarray, v, tol: float = 1e-10) -> bool:
    """True when vector v lies in the column span of ``basis``."""
    v = np.asarray(v, dtype=float)
    if basis.shape[1] == 0:
        return bool(np.linalg.norm(v) <= tol)
    proj = basis @ (basis.T @ v)
    return bool(np.linalg.norm(v - proj) <= tol * max(1.0, np.linalg.norm(v)))


def projector_equal(a: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> bool:
    """True when two column bases span the same subspace."""
    if a.shape[1] != b.shape[1]:
        return False
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    return bool(np.max(np.abs(qa @ qa.T - qb @ qb.T)) <= tol)


@dataclass(frozen=True)
class ConditionReport:
    """Violation of phi(r,t,z) = -phi(r,pi-t,z) = phi(r,t-pi,z) = -phi(r,-t,z)."""

    max_violation: float
    max_abs_phi: float
    tolerance: float

    @property
    def relative_violation(self) -> float:
        return self.max_violation / self.max_abs_phi if self.max_abs_phi > 0 else 0.0

    @property
    def satisfied(self) -> bool:
        return self.relative_violation <= self.tolerance


def condition_quadruple_points(r, theta, z) -> np.ndarray:
    """Points (r,t,z), (r,pi-t,z), (r,t-pi,z), (r,-t,z) in Cartesian form.

    Returns an array of shape (4, N, 3) for broadcast inputs of size N.
    """
    r, theta, z = np.broadcast_arrays(*(np.asarray(v, dtype=float).ravel() for v in (r, theta, z)))
    angles = (theta, np.pi - theta, theta - np.pi, -theta)
    return np.stack([np.stack([r * np.cos(a), r * np.sin(a), z], axis=-1) for a in angles])


def potential_condition_check(phi, r, theta, z, tol: float = 1e-3) -> ConditionReport:
    """Check the rf-null potential symmetry on sampled quadruples.

    Parameters
    ----------
    phi : callable
        Maps an (N, 3) array of points in um to potentials.
    r, theta, z : array_like
        Cylindrical sample coordinates (um, rad, um).
    """
    pts = condition_quadruple_points(r, theta, z)
    n = pts.shape[1]
    vals = np.asarray(phi(pts.reshape(-1, 3)), dtype=float).reshape(4, n)
    p0, p1, p2, p3 = vals
    viol = np.max(np.abs(np.stack([p0 + p1, p0 - p2, p0 + p3])))
    return ConditionReport(float(viol), float(np.max(np.abs(vals))), tol)


def axis_field_from_charges(positions, charges, z0: float, exclude_radius: float = 1e-9):
    """Coulomb field (V/m) at (0, 0, z0) from point charges.

    Parameters
    ----------
    positions : array_like, shape (N, 3)
        Charge positions in um.
    charges : array_like, shape (N,)
        Charges in coulomb (quadrature weights already folded in).
    z0 : float
        Axial evaluation coordinate in um.
    """
    p = np.asarray(positions, dtype=float).reshape(-1, 3)
    q = np.asarray(charges, dtype=float).ravel()
    d = np.array([0.0, 0.0, z0]) - p
    dist = np.linalg.norm(d, axis=1)
    bad = dist <= exclude_radius
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} charge sample(s) at the evaluation point excluded",
                      RuntimeWarning, stacklevel=2)
        d, dist, q = d[~bad], dist[~bad], q[~bad]
    terms = (q / (dist * UM) ** 3)[:, None] * (d * UM)
    return COULOMB_K * terms.sum(axis=0)


def cylindrical_samples(rho, r_nodes, n_theta: int, z_nodes):
    """Point-charge representation of a density on a cylindrical grid.

    ``rho(r, theta, z)`` is a volume density in C/um^3. The angular rule is
    the periodic trapezoid rule; radial and axial weights use the trapezoid
    rule on the given nodes.

    Returns
    -------
    positions : ndarray (N, 3) in um
    charges : ndarray (N,) in C
    """
    r_nodes = np.asarray(r_nodes, dtype=float)
    z_nodes = np.asarray(z_nodes, dtype=float)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    wr = _trapz_weights(r_nodes)
    wz = _trapz_weights(z_nodes)
    R, T, Z = np.meshgrid(r_nodes, theta, z_nodes, indexing="ij")
    W = (wr * r_nodes)[:, None, None] * (2.0 * np.pi / n_theta) * wz[None, None, :]
    q = rho(R, T, Z) * W
    pos = np.stack([R * np.cos(T), R * np.sin(T), Z], axis=-1)
    return pos.reshape(-1, 3), q.ravel()


def _trapz_weights(x):
    if x.size == 1:
        return np.ones(1)
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w
