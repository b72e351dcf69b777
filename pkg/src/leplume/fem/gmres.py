"""Restarted GMRES for operators given only as matrix-vector products."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ConvergenceError
from .problem import SolverConfig


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)


def gmres_solve(operator: Callable[[np.ndarray], np.ndarray], rhs, cfg: SolverConfig | None = None,
                x0=None, inv_diag=None) -> GmresResult:
    """Solve ``operator(x) = rhs`` with right-preconditioned GMRES(m).

    ``inv_diag`` is an optional Jacobi preconditioner (inverse diagonal).
    Right preconditioning keeps the monitored residual equal to the true
    relative residual ``|rhs - A x| / |rhs|``.  Raises
    :class:`ConvergenceError` (carrying the best iterate and the residual
    history) if ``cfg.max_iter`` iterations do not reach ``cfg.rel_tol``.
    """
    cfg = cfg or SolverConfig()
    b = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side is not finite")
    n = b.size
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return GmresResult(np.zeros(n), 0, 0.0, [0.0])

    def prec(v):
        return v if inv_diag is None else inv_diag * v

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - operator(x)
    beta = float(np.linalg.norm(r))
    history = [beta / bnorm]
    best_x, best_res = x.copy(), beta / bnorm
    if best_res <= cfg.rel_tol:
        return GmresResult(x, 0, best_res, history)

    m = min(cfg.gmres_restart, n)
    its = 0
    while its < cfg.max_iter:
        basis = np.zeros((m + 1, n))
        hess = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        basis[0] = r / beta
        k = 0
        for j in range(m):
            w = np.array(operator(prec(basis[j])), dtype=float)
            # modified Gram-Schmidt
            for i in range(j + 1):
                hess[i, j] = w @ basis[i]
                w -= hess[i, j] * basis[i]
            hnext = float(np.linalg.norm(w))
            hess[j + 1, j] = hnext
            for i in range(j):
                a, c = hess[i, j], hess[i + 1, j]
                hess[i, j] = cs[i] * a + sn[i] * c
                hess[i + 1, j] = -sn[i] * a + cs[i] * c
            denom = math.hypot(hess[j, j], hess[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = hess[j, j] / denom, hess[j + 1, j] / denom
            hess[j, j] = cs[j] * hess[j, j] + sn[j] * hess[j + 1, j]
            hess[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            its += 1
            k = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            breakdown = hnext <= 1e-14 * bnorm
            if not breakdown:
                basis[j + 1] = w / hnext
            if history[-1] <= cfg.rel_tol or breakdown or its >= cfg.max_iter:
                break
        y = _back_substitute(hess[:k, :k], g[:k])
        x = x + prec(basis[:k].T @ y)
        r = b - operator(x)
        beta = float(np.linalg.norm(r))
        res = beta / bnorm
        history[-1] = res
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= cfg.rel_tol:
            return GmresResult(x, its, res, history)
        if beta == 0.0 or not np.isfinite(res):
            break
    raise ConvergenceError(f"GMRES reached {its} iterations with relative residual {best_res:.3e} "
                           f"(target {cfg.rel_tol:.1e})", best_x, history)


def _back_substitute(r: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        if r[i, i] == 0.0:
            y[i] = 0.0
            continue
        y[i] = (g[i] - r[i, i + 1:] @ y[i + 1:]) / r[i, i]
    return y
