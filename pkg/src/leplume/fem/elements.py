"""Linear tetrahedral elements with SUPG stabilization.

All kernels are batched over elements: arrays carry a leading element axis.
For p = 1 the gradients are constant per element, so the advection,
diffusion and streamline terms are integrated in closed form with the wind
frozen at the centroid; the mass matrix and the source load use the
4-point degree-2 rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GeometryError
from ..mesh import DEGENERACY_RTOL, MeshGraph
from .problem import ScalarField, TransportProblem

_A = 0.5854101966249685
_B = 0.1381966011250105
# barycentric coordinates of the 4-point rule (weights 1/4 each)
QUAD_BARY = np.array([[_A, _B, _B, _B], [_B, _A, _B, _B], [_B, _B, _A, _B], [_B, _B, _B, _A]])
QUAD_WEIGHTS = np.full(4, 0.25)


def supg_tau(h, beta, eps: float, p: int = 1):
    """Streamline stabilization time scale.

    ``1 / (|beta . (1/hx, 1/hy, 1/hz)| + 3 p^2 eps / (hx^2 + hy^2 + hz^2))``;
    works elementwise on ``(..., 3)`` arrays.  Returns 0 where both
    contributions vanish (no wind, no diffusion).
    """
    h = np.asarray(h, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(h <= 0):
        raise GeometryError("element dimensions must be positive")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    inv = np.abs(np.sum(beta / h, axis=-1)) + 3 * p * p * eps / np.sum(h * h, axis=-1)
    with np.errstate(divide="ignore"):
        tau = np.where(inv > 0, 1.0 / np.where(inv > 0, inv, 1.0), 0.0)
    return float(tau) if tau.ndim == 0 else tau


@dataclass
class ElementGeometry:
    """Per-element geometric data for a set of tets."""

    dofs: np.ndarray        # (n, 4) point handles
    volume: np.ndarray      # (n,)
    grads: np.ndarray       # (n, 4, 3) gradients of the barycentric basis
    centroid: np.ndarray    # (n, 3)
    h: np.ndarray           # (n, 3) bounding-box extents
    quad_points: np.ndarray  # (n, 4, 3)

    @classmethod
    def build(cls, points: np.ndarray, dofs: np.ndarray) -> "ElementGeometry":
        dofs = np.asarray(dofs, dtype=np.int64).reshape(-1, 4)
        x = points[dofs]
        jac = x[:, 1:] - x[:, :1]
        det = np.linalg.det(jac)
        lmax = np.max(np.linalg.norm(x[:, :, None] - x[:, None, :], axis=-1), axis=(1, 2))
        bad = np.abs(det) / 6 <= DEGENERACY_RTOL * lmax ** 3
        if np.any(bad):
            raise GeometryError(f"{int(bad.sum())} degenerate elements (first: {int(np.argmax(bad))})")
        grads = np.empty((len(dofs), 4, 3))
        grads[:, 1:] = np.linalg.inv(jac).transpose(0, 2, 1)
        grads[:, 0] = -grads[:, 1:].sum(axis=1)
        return cls(dofs=dofs, volume=np.abs(det) / 6, grads=grads, centroid=x.mean(axis=1),
                   h=x.max(axis=1) - x.min(axis=1),
                   quad_points=np.einsum("qk,nkd->nqd", QUAD_BARY, x))

    @classmethod
    def from_mesh(cls, mesh: MeshGraph) -> "ElementGeometry":
        return cls.build(mesh.points_array(), mesh.tet_array())

    def __len__(self):
        return len(self.dofs)


def mass_matrices(geom: ElementGeometry) -> np.ndarray:
    phi = QUAD_BARY  # phi_i at quad point q is the barycentric coordinate
    local = np.einsum("q,qi,qj->ij", QUAD_WEIGHTS, phi, phi)
    return geom.volume[:, None, None] * local[None]


def operator_matrices(geom: ElementGeometry, prob: TransportProblem, time: float):
    """Local mass ``M`` and stabilized bilinear-form matrices ``B``.

    ``B[k, i, j] = b_SUPG(phi_j, phi_i)`` on element k: advection,
    diffusion, reaction and the streamline term ``tau (beta.grad phi_j,
    beta.grad phi_i)``.  The Laplacian in the residual vanishes for p = 1,
    and zero-flux boundaries drop the boundary integral.  Also returns tau
    and ``beta.grad phi`` for reuse in the load vector.
    """
    vol = geom.volume
    beta = prob.wind_at(geom.centroid, time)
    bgrad = np.einsum("nid,nd->ni", geom.grads, beta)
    mass = mass_matrices(geom)
    adv = (vol / 4)[:, None, None] * np.broadcast_to(bgrad[:, None, :], mass.shape)
    diff = prob.eps * vol[:, None, None] * np.einsum("nid,njd->nij", geom.grads, geom.grads)
    b = adv + diff + prob.c * mass
    if prob.stabilized:
        tau = supg_tau(geom.h, beta, prob.eps, prob.p)
        b = b + (tau * vol)[:, None, None] * bgrad[:, :, None] * bgrad[:, None, :]
    else:
        tau = np.zeros(len(geom))
    return mass, b, tau, bgrad


def load_vectors(geom: ElementGeometry, prob: TransportProblem, time: float,
                 tau: np.ndarray, bgrad: np.ndarray) -> np.ndarray:
    """Local ``l_SUPG(phi_i) = (f, phi_i) + (f, tau beta.grad phi_i)``."""
    if prob.source is None:
        return np.zeros((len(geom), 4))
    n = len(geom)
    f = prob.source_at(geom.quad_points.reshape(-1, 3), time).reshape(n, 4)
    wf = geom.volume[:, None] * QUAD_WEIGHTS[None] * f          # (n, q)
    galerkin = np.einsum("nq,qi->ni", wf, QUAD_BARY)
    stream = (tau * wf.sum(axis=1))[:, None] * bgrad
    return galerkin + stream


@dataclass
class ElementSystem:
    tet: int
    matrix: np.ndarray
    rhs: np.ndarray
    dof_map: np.ndarray


def element_system(mesh: MeshGraph, t: int, prob: TransportProblem, u_old: ScalarField,
                   time: float | None = None) -> ElementSystem:
    """Crank-Nicolson local system of tet ``t`` for the step from ``time``.

    ``matrix = M + dt/2 B(time + dt)`` and
    ``rhs = (M - dt/2 B(time)) u_old + dt l(time + dt/2)``.
    """
    time = u_old.time if time is None else time
    tet = mesh.tet(t)
    geom = ElementGeometry.build(mesh.points_array(), np.array([tet.points]))
    dt = prob.dt
    m, b_new, _, _ = operator_matrices(geom, prob, time + dt)
    _, b_old, _, _ = operator_matrices(geom, prob, time)
    _, _, tau, bgrad = operator_matrices(geom, prob, time + dt / 2)
    load = load_vectors(geom, prob, time + dt / 2, tau, bgrad)
    u = np.asarray(u_old.values)[list(tet.points)]
    matrix = m[0] + dt / 2 * b_new[0]
    rhs = (m[0] - dt / 2 * b_old[0]) @ u + dt * load[0]
    return ElementSystem(t, matrix, rhs, np.array(tet.points))
