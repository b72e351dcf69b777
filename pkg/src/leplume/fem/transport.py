"""Matrix-free Crank-Nicolson time stepping of the transport problem."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..mesh import FaceTag, MeshGraph
from .elements import ElementGeometry, load_vectors, operator_matrices
from .gmres import GmresResult, gmres_solve
from .problem import ScalarField, SolverConfig, TransportProblem

log = logging.getLogger(__name__)


class TransportOperator:
    """Element-by-element action of ``M + dt/2 B`` on nodal vectors.

    No global matrix is formed: each product gathers nodal values per tet,
    multiplies by the local matrices and scatter-adds the results.  Local
    matrices are cached per time level (once for a steady wind).
    """

    def __init__(self, mesh: MeshGraph, prob: TransportProblem):
        self.mesh = mesh
        self.prob = prob
        self.geom = ElementGeometry.from_mesh(mesh)
        self.n = mesh.n_points
        self._cache: dict[float, tuple] = {}
        self.dirichlet_nodes = _dirichlet_nodes(mesh, prob)
        self.points = mesh.points_array()

    def matrices(self, time: float):
        key = 0.0 if self.prob.steady_wind else float(time)
        hit = self._cache.get(key)
        if hit is None:
            if len(self._cache) > 4:
                self._cache.clear()
            hit = operator_matrices(self.geom, self.prob, time)
            self._cache[key] = hit
        return hit

    def _scatter(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.geom.dofs.ravel(), weights=local.ravel(), minlength=self.n)

    def local_apply(self, mats: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self._scatter(np.einsum("nij,nj->ni", mats, x[self.geom.dofs]))

    def apply(self, x: np.ndarray, time: float, raw: bool = False) -> np.ndarray:
        """``(M + dt/2 B(time)) x``; constrained rows act as identity unless ``raw``."""
        mass, b, _, _ = self.matrices(time)
        x = np.asarray(x, dtype=float)
        d = self.dirichlet_nodes
        if raw or d is None:
            return self.local_apply(mass + self.prob.dt / 2 * b, x)
        xi = x.copy()
        xi[d] = 0.0
        y = self.local_apply(mass + self.prob.dt / 2 * b, xi)
        y[d] = x[d]
        return y

    def diagonal(self, time: float) -> np.ndarray:
        mass, b, _, _ = self.matrices(time)
        local = np.einsum("nii->ni", mass + self.prob.dt / 2 * b)
        diag = self._scatter(local)
        if self.dirichlet_nodes is not None:
            diag[self.dirichlet_nodes] = 1.0
        return diag

    def mass_apply(self, x: np.ndarray) -> np.ndarray:
        mass, _, _, _ = self.matrices(0.0)
        return self.local_apply(mass, x)

    def rhs(self, u_old: np.ndarray, time: float) -> np.ndarray:
        """Global ``(M - dt/2 B(t)) u_old + dt l(t + dt/2)``, then constraints."""
        prob = self.prob
        dt = prob.dt
        mass, b, _, _ = self.matrices(time)
        out = self.local_apply(mass - dt / 2 * b, u_old)
        if prob.source is not None:
            _, _, tau, bgrad = self.matrices(time + dt / 2)
            out += dt * self._scatter(load_vectors(self.geom, prob, time + dt / 2, tau, bgrad))
        d = self.dirichlet_nodes
        if d is not None:
            g = np.zeros(self.n)
            g[d] = self.boundary_values(time + dt)
            out -= self.apply(g, time + dt, raw=True)
            out[d] = g[d]
        return out

    def boundary_values(self, time: float) -> np.ndarray:
        d = self.dirichlet_nodes
        p = self.points[d]
        return np.asarray(self.prob.dirichlet(p[:, 0], p[:, 1], p[:, 2], time), dtype=float) \
            * np.ones(len(d))


def _dirichlet_nodes(mesh: MeshGraph, prob: TransportProblem) -> Optional[np.ndarray]:
    if prob.dirichlet is None:
        return None
    nodes = set()
    for f in mesh.faces:
        if not f.alive or f.tag == FaceTag.INTERIOR:
            continue
        if prob.dirichlet_tags is None or f.tag in prob.dirichlet_tags:
            nodes.update(f.points)
    return np.array(sorted(nodes), dtype=np.int64)


def apply_global_operator(mesh_or_op, prob: TransportProblem | None, x, time: float = 0.0) -> np.ndarray:
    """Matrix-free product ``(M + dt/2 B_SUPG(time)) x`` (no constraints)."""
    op = mesh_or_op if isinstance(mesh_or_op, TransportOperator) else TransportOperator(mesh_or_op, prob)
    return op.apply(x, time, raw=True)


@dataclass
class StepStats:
    step: int
    time: float
    iterations: int
    residual: float


def step(mesh: MeshGraph, prob: TransportProblem, u_old: ScalarField, cfg: SolverConfig | None = None,
         op: TransportOperator | None = None, stats: list | None = None) -> ScalarField:
    """Advance one Crank-Nicolson step: solve ``(M + dt/2 B) u = rhs`` by GMRES."""
    cfg = cfg or SolverConfig()
    op = op or TransportOperator(mesh, prob)
    u = np.asarray(u_old.values, dtype=float)
    if u.shape != (op.n,):
        raise ValueError(f"field has {u.shape} values, mesh has {op.n} points")
    t_new = u_old.time + prob.dt
    rhs = op.rhs(u, u_old.time)
    inv_diag = 1.0 / op.diagonal(t_new) if cfg.preconditioner == "diagonal" else None
    res: GmresResult = gmres_solve(lambda x: op.apply(x, t_new), rhs, cfg, x0=u, inv_diag=inv_diag)
    if stats is not None:
        stats.append(StepStats(len(stats) + 1, t_new, res.iterations, res.residual))
    return ScalarField(res.x, t_new)


@dataclass
class SimulationResult:
    snapshots: list[ScalarField]
    stats: list[StepStats] = field(default_factory=list)
    steps: int = 0


def simulate(mesh: MeshGraph, prob: TransportProblem, u0: ScalarField, cfg: SolverConfig | None = None,
             snapshot_every: int = 1, on_snapshot: Callable[[int, ScalarField], None] | None = None,
             op: TransportOperator | None = None) -> SimulationResult:
    """Run ``prob.n_steps`` steps from ``u0``.

    Snapshots are taken at step 0, every ``snapshot_every`` steps and at the
    final step.  ``on_snapshot(step, field)`` is called as each is taken.
    """
    if snapshot_every < 1:
        raise ValueError("snapshot_every must be positive")
    op = op or TransportOperator(mesh, prob)
    out = SimulationResult([])

    def emit(k, field_):
        out.snapshots.append(field_)
        if on_snapshot is not None:
            on_snapshot(k, field_)

    u = u0.copy()
    emit(0, u)
    nsteps = prob.n_steps
    for k in range(1, nsteps + 1):
        u = step(mesh, prob, u, cfg, op=op, stats=out.stats)
        u.time = u0.time + k * prob.dt
        if k % snapshot_every == 0 or k == nsteps:
            emit(k, u)
    out.steps = nsteps
    return out


def integrate(op: TransportOperator, values: np.ndarray) -> float:
    """``int u dOmega`` via the mass matrix (1^T M u)."""
    return float(np.sum(op.mass_apply(np.asarray(values, dtype=float))))


def locate(points: np.ndarray, dofs: np.ndarray, x) -> tuple[int, np.ndarray]:
    """Element containing ``x`` (best barycentric fit) and its coordinates."""
    x = np.asarray(x, dtype=float)
    v = points[dofs]
    jac = v[:, 1:] - v[:, :1]
    lam = np.linalg.solve(jac.transpose(0, 2, 1), (x - v[:, 0])[:, :, None])[:, :, 0]
    bary = np.concatenate([1 - lam.sum(axis=1, keepdims=True), lam], axis=1)
    k = int(np.argmax(bary.min(axis=1)))
    return k, bary[k]


def probe(mesh: MeshGraph, values: np.ndarray, x) -> float:
    """Linear interpolant of nodal ``values`` at point ``x``."""
    dofs = mesh.tet_array()
    k, bary = locate(mesh.points_array(), dofs, x)
    return float(bary @ np.asarray(values)[dofs[k]])
