"""Optimality system of the control problem and its direct solve.

The first-order conditions couple state, control and adjoint into one
3N x 3N saddle-point system

    [ M   0   A^T ] [y]   [b]
    [ 0  aM  -M^T ] [u] = [0]
    [ A  -M    0  ] [p]   [c]

Rows of DOFs outside the active mesh are replaced by unit-diagonal rows with
zero right-hand side, which pins those solution components to exact zeros
without perturbing the physical blocks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import ParametricOperators
from .errors import NumericalError

RESIDUAL_TOL = 1e-9


@dataclass
class KktSystem:
    matrix: sp.csr_matrix          # 3N x 3N
    rhs: np.ndarray                # (3N,)
    n: int
    mu: float
    active_dofs: np.ndarray
    inactive_dofs: np.ndarray


@dataclass
class FullSolution:
    y: np.ndarray
    u: np.ndarray
    p: np.ndarray
    mu: float
    solve_time: float

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.y, self.u, self.p])


def assemble_kkt(ops: ParametricOperators, alpha: float) -> KktSystem:
    """Form the block system and regularize the inactive DOF rows."""
    n = ops.A.shape[0]
    if ops.M.shape != (n, n) or ops.b.shape != (n,) or ops.c.shape != (n,):
        raise ValueError("inconsistent operator dimensions")
    big = sp.bmat([[ops.M, None, ops.A.T],
                   [None, alpha * ops.M, -ops.M.T],
                   [ops.A, -ops.M, None]], format="csr")
    mask = np.ones(n, dtype=bool)
    mask[ops.active_dofs] = False
    inactive = np.flatnonzero(mask)
    diag = np.zeros(3 * n)
    for k in range(3):
        diag[k * n + inactive] = 1.0
    # a boundary exactly aligned with mesh edges leaves active DOFs with an
    # empty mass row; their control component is free and is pinned to zero
    free_u = np.flatnonzero(~mask & (ops.M.diagonal() == 0.0))
    diag[n + free_u] = 1.0
    big = (big + sp.diags(diag)).tocsr()
    rhs = np.concatenate([ops.b, np.zeros(n), ops.c])
    for k in range(3):
        rhs[k * n + inactive] = 0.0
    return KktSystem(big, rhs, n, ops.mu, ops.active_dofs, inactive)


def solve_kkt(system: KktSystem) -> FullSolution:
    """Sparse LU solve with a relative-residual check."""
    t0 = time.perf_counter()
    try:
        lu = spla.splu(system.matrix.tocsc())
        x = lu.solve(system.rhs)
    except RuntimeError as exc:  # SuperLU reports the failing pivot
        raise NumericalError(
            f"singular optimality system at mu={system.mu}: {exc}") from exc
    solve_time = time.perf_counter() - t0

    res = np.linalg.norm(system.matrix @ x - system.rhs) \
        / (np.linalg.norm(system.rhs) + 1e-30)
    if not res <= RESIDUAL_TOL:
        raise NumericalError(
            f"optimality solve at mu={system.mu} has residual {res:.3e}")
    n = system.n
    return FullSolution(x[:n].copy(), x[n:2 * n].copy(), x[2 * n:].copy(),
                        system.mu, solve_time)


def cost_value(ops: ParametricOperators, y: np.ndarray, u: np.ndarray,
               alpha: float) -> float:
    """Quadratic cost up to the constant ||y_d||^2 term.

    The constant does not affect comparisons between feasible candidates of
    the same parameter value.
    """
    return float(0.5 * y @ (ops.M @ y) - y @ ops.b
                 + 0.5 * alpha * u @ (ops.M @ u))
