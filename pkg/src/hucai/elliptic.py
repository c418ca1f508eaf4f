"""Discrete pressure problem ``-div(A grad p) = s`` with ``p = 0`` on the boundary.

The operator is applied matrix-free on full nodal arrays whose boundary
entries stay zero, which is the same as eliminating the Dirichlet rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .grid import Grid2D, Matrix2Field, ScalarField, VectorField2, aniso_cells, check_coefficient, gradient
from .model import conductivity


class SolverError(RuntimeError):
    """CG did not reach the requested tolerance."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass
class LinearSystem:
    grid: Grid2D
    c11: np.ndarray
    c12: np.ndarray
    c22: np.ndarray
    rhs: np.ndarray
    tol: float = 1e-10
    max_iter: int = 20000
    diag: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.grid
        self.diag = kernels.operator_diagonal(self.c11, self.c12, self.c22, g.hx, g.hy)
        self.rhs = np.array(self.rhs, dtype=float)
        self.rhs[g.boundary_mask()] = 0.0
        self._work = np.empty(g.shape)

    def matvec(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        """``M x = -div(A grad x)`` at interior nodes, 0 on the boundary."""
        g = self.grid
        out = np.empty(g.shape) if out is None else out
        kernels.apply_aniso(x, self.c11, self.c12, self.c22, g.hx, g.hy, out)
        np.negative(out, out=out)
        return out

    @property
    def n_unknowns(self) -> int:
        return (self.grid.nx - 2) * (self.grid.ny - 2)

    def interior(self, x: np.ndarray) -> np.ndarray:
        return x[1:-1, 1:-1].ravel()

    def embed(self, u: np.ndarray) -> np.ndarray:
        x = np.zeros(self.grid.shape)
        x[1:-1, 1:-1] = u.reshape(self.grid.nx - 2, self.grid.ny - 2)
        return x

    def to_dense(self) -> np.ndarray:
        """Dense interior matrix (columns = operator applied to unit vectors); small grids only."""
        n = self.n_unknowns
        if n > 4000:
            raise ValueError("to_dense is meant for small grids")
        M = np.empty((n, n))
        e = np.zeros(n)
        for k in range(n):
            e[k] = 1.0
            M[:, k] = self.interior(self.matvec(self.embed(e)))
            e[k] = 0.0
        return M

    def energy(self, p: np.ndarray) -> tuple[float, float]:
        """Discrete ``int |grad p|^2`` and ``int (A - I) grad p . grad p``; their sum is ``h^2 p^T M p``."""
        g = self.grid
        return (kernels.face_energy(p, g.hx, g.hy),
                float(kernels.cell_energy(p, self.c11, self.c12, self.c22, g.hx, g.hy)))


@dataclass
class PressureSolution:
    p: ScalarField
    iters: int
    residual: float
    history: list[float]


def assemble_pressure_system(A: Matrix2Field, s: ScalarField, tol: float = 1e-10,
                             max_iter: int = 20000) -> LinearSystem:
    check_coefficient(A)
    c11, c12, c22 = aniso_cells(A)
    return LinearSystem(A.grid, c11, c12, c22, s.values, tol=tol, max_iter=max_iter)


def solve_pressure(sys: LinearSystem, x0: np.ndarray | None = None) -> PressureSolution:
    """Jacobi-preconditioned conjugate gradients to relative residual ``sys.tol``."""
    g = sys.grid
    b = sys.rhs
    bnorm = np.linalg.norm(b)
    x = np.zeros(g.shape) if x0 is None else np.array(x0, dtype=float)
    x[g.boundary_mask()] = 0.0
    if bnorm == 0.0:
        return PressureSolution(ScalarField(g, np.zeros(g.shape)), 0, 0.0, [0.0])

    inv_d = 1.0 / sys.diag
    inv_d[g.boundary_mask()] = 0.0
    Ap = np.empty(g.shape)
    r = b - sys.matvec(x, Ap)
    history = [float(np.linalg.norm(r)) / bnorm]
    it = 0
    # the recurrence residual drifts from the true one; restart from the true
    # residual until that one meets the tolerance as well
    while True:
        z = r * inv_d
        d = z.copy()
        rz = float(np.vdot(r, z))
        while history[-1] > sys.tol:
            if it >= sys.max_iter:
                raise SolverError(
                    f"CG stalled at relative residual {history[-1]:.3e} after {it} iterations", history)
            sys.matvec(d, Ap)
            alpha = rz / float(np.vdot(d, Ap))
            x += alpha * d
            r -= alpha * Ap
            np.multiply(r, inv_d, out=z)
            rz_new = float(np.vdot(r, z))
            d *= rz_new / rz
            d += z
            rz = rz_new
            it += 1
            history.append(float(np.linalg.norm(r)) / bnorm)
        r = b - sys.matvec(x, Ap)
        res = float(np.linalg.norm(r)) / bnorm
        if res <= sys.tol:
            break
        history.append(res)
    return PressureSolution(ScalarField(g, x), it, res, history)


def solve_p0(m0: VectorField2, s: ScalarField, tol: float = 1e-10,
             max_iter: int = 20000) -> tuple[ScalarField, float, PressureSolution]:
    """Initial pressure for ``m0``; also returns ``sup |grad p0|``."""
    edge = m0.grid.boundary_mask()
    if np.any(m0.comp1[edge] != 0) or np.any(m0.comp2[edge] != 0):
        raise ValueError("m0 must vanish on the boundary")
    A, _ = conductivity(m0)
    sol = solve_pressure(assemble_pressure_system(A, s, tol, max_iter))
    sup = float(np.max(gradient(sol.p).norm()))
    return sol.p, sup, sol
