"""Problem and solver parameter containers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..mesh import FaceTag

# f(x, y, z, t) with array x, y, z -> array of the same shape
ScalarFn = Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]
# beta(x, y, z, t) -> (n, 3) array (or a broadcastable 3-vector)
VectorFn = Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]


@dataclass
class TransportProblem:
    """du/dt + beta.grad(u) - eps lap(u) + c u = f, zero-flux boundaries.

    ``beta`` is either a constant 3-vector or a callable evaluated at element
    centroids.  ``dirichlet``, when given, prescribes ``u`` on the boundary
    nodes of the faces tagged with ``dirichlet_tags`` (all boundary faces if
    ``None``); elsewhere the boundary is zero-flux.  ``stabilized=False``
    forces tau = 0 (plain Galerkin).
    """

    eps: float
    dt: float
    t_end: float
    beta: np.ndarray | VectorFn = field(default_factory=lambda: np.zeros(3))
    c: float = 0.0
    source: Optional[ScalarFn] = None
    p: int = 1
    dirichlet: Optional[ScalarFn] = None
    dirichlet_tags: Optional[frozenset] = None
    stabilized: bool = True

    def __post_init__(self):
        if not callable(self.beta):
            self.beta = np.asarray(self.beta, dtype=float).reshape(3)
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < self.dt * (1 - 1e-12):
            raise ValueError(f"t_end ({self.t_end}) must be at least dt ({self.dt})")
        if self.c < 0:
            raise ValueError(f"c must be non-negative, got {self.c}")
        if self.p != 1:
            raise NotImplementedError("only linear (p = 1) elements are implemented")
        if self.dirichlet_tags is not None:
            self.dirichlet_tags = frozenset(FaceTag(t) for t in self.dirichlet_tags)

    @property
    def steady_wind(self) -> bool:
        return not callable(self.beta)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def wind_at(self, pts: np.ndarray, t: float) -> np.ndarray:
        if not callable(self.beta):
            return np.broadcast_to(self.beta, pts.shape).copy()
        out = np.asarray(self.beta(pts[:, 0], pts[:, 1], pts[:, 2], t), dtype=float)
        return np.broadcast_to(out, pts.shape).copy()

    def source_at(self, pts: np.ndarray, t: float) -> np.ndarray:
        if self.source is None:
            return np.zeros(len(pts))
        out = np.asarray(self.source(pts[:, 0], pts[:, 1], pts[:, 2], t), dtype=float)
        return np.broadcast_to(out, (len(pts),)).copy()


def gaussian_source(q: float, center, sigma: float) -> ScalarFn:
    """Isotropic emission bump ``q * exp(-|x - center|^2 / (2 sigma^2))``."""
    cx, cy, cz = (float(v) for v in center)
    if not sigma > 0:
        raise ValueError("source sigma must be positive")

    def f(x, y, z, t):
        r2 = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2
        return q * np.exp(-r2 / (2 * sigma ** 2))

    return f


@dataclass
class SolverConfig:
    gmres_restart: int = 30
    rel_tol: float = 1e-8
    max_iter: int = 1000
    preconditioner: str = "diagonal"

    def __post_init__(self):
        if self.gmres_restart < 1:
            raise ValueError("gmres_restart must be positive")
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class ScalarField:
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def copy(self) -> "ScalarField":
        return ScalarField(self.values.copy(), self.time)
