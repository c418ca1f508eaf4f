"""Structured rectangular grids, nodal fields and discrete differential operators.

Fields are collocated at the nodes.  Arrays are indexed ``[i, j]`` with
``x = x0 + i*hx`` and ``y = y0 + j*hy``.  First derivatives are second-order
central in the interior and second-order one-sided on the boundary rows;
``div(A grad f)`` uses the conservative stencil of :mod:`hucai.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels


class GridError(ValueError):
    """Invalid grid or field layout."""


class CoefficientError(ValueError):
    """Coefficient matrix violates symmetry or the ellipticity bound A >= I."""


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    hx: float
    hy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise GridError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.hx > 0 and self.hy > 0):
            raise GridError(f"spacings must be positive, got hx={self.hx}, hy={self.hy}")

    @classmethod
    def unit(cls, n: int, ny: int | None = None, lx: float = 1.0, ly: float = 1.0,
             x0: float = 0.0, y0: float = 0.0) -> "Grid2D":
        """Grid over ``[x0, x0+lx] x [y0, y0+ly]`` with ``n`` (and ``ny``) intervals."""
        ny = n if ny is None else ny
        return cls(n + 1, ny + 1, lx / n, ly / ny, x0, y0)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        return mask

    def interior_mask(self, margin: int = 1) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[margin:self.nx - margin, margin:self.ny - margin] = True
        return mask

    def weights(self) -> np.ndarray:
        """Trapezoidal cell weights: half on edges, quarter on corners."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wx, wy)

    @property
    def area(self) -> float:
        return (self.nx - 1) * self.hx * (self.ny - 1) * self.hy

    def header(self) -> str:
        return f"{self.nx},{self.ny},{self.hx!r},{self.hy!r},{self.x0!r},{self.y0!r}"


def _check_values(grid: Grid2D, name: str, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise GridError(f"{name}: expected shape {grid.shape}, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise GridError(f"{name}: non-finite values")
    return values


@dataclass
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = _check_values(self.grid, "values", self.values)

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField":
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape).astype(float))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))


@dataclass
class VectorField2:
    grid: Grid2D
    comp1: np.ndarray
    comp2: np.ndarray

    def __post_init__(self):
        self.comp1 = _check_values(self.grid, "comp1", self.comp1)
        self.comp2 = _check_values(self.grid, "comp2", self.comp2)

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "VectorField2":
        X, Y = grid.mesh()
        a, b = fn(X, Y)
        return cls(grid, np.broadcast_to(a, grid.shape).astype(float),
                   np.broadcast_to(b, grid.shape).astype(float))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "VectorField2":
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape))

    def norm(self) -> np.ndarray:
        return np.hypot(self.comp1, self.comp2)

    def dot(self, other: "VectorField2") -> np.ndarray:
        return self.comp1 * other.comp1 + self.comp2 * other.comp2


@dataclass
class Matrix2Field:
    grid: Grid2D
    a11: np.ndarray
    a12: np.ndarray
    a21: np.ndarray
    a22: np.ndarray
    symmetric: bool = field(default=False)

    def __post_init__(self):
        for name in ("a11", "a12", "a21", "a22"):
            setattr(self, name, _check_values(self.grid, name, getattr(self, name)))
        if self.symmetric and not np.array_equal(self.a12, self.a21):
            raise CoefficientError("matrix field flagged symmetric but a12 != a21")

    @classmethod
    def symmetric_from(cls, grid, a11, a12, a22) -> "Matrix2Field":
        a12 = np.asarray(a12, dtype=float)
        return cls(grid, a11, a12, a12.copy(), a22, symmetric=True)

    @classmethod
    def identity(cls, grid: Grid2D) -> "Matrix2Field":
        one, zero = np.ones(grid.shape), np.zeros(grid.shape)
        return cls.symmetric_from(grid, one, zero, one)

    def det(self) -> np.ndarray:
        return self.a11 * self.a22 - self.a12 * self.a21

    def trace(self) -> np.ndarray:
        return self.a11 + self.a22

    def apply(self, F: VectorField2) -> VectorField2:
        return VectorField2(self.grid, self.a11 * F.comp1 + self.a12 * F.comp2,
                            self.a21 * F.comp1 + self.a22 * F.comp2)

    def stack(self) -> np.ndarray:
        """Values as an ``(nx, ny, 2, 2)`` array."""
        return np.stack([np.stack([self.a11, self.a12], -1),
                         np.stack([self.a21, self.a22], -1)], -2)

    def min_eigenvalue(self) -> np.ndarray:
        """Smallest eigenvalue, assuming symmetry."""
        half_tr = 0.5 * (self.a11 + self.a22)
        rad = np.hypot(0.5 * (self.a11 - self.a22), self.a12)
        return half_tr - rad


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------


def _require_operable(grid: Grid2D):
    if grid.nx < 3 or grid.ny < 3:
        raise GridError("operators need at least 3 nodes per axis")


def _d1(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.gradient(a, h, axis=axis, edge_order=2)


def _d2(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second derivative: central interior, 4-point one-sided on the boundary."""
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = a[2:] - 2.0 * a[1:-1] + a[:-2]
    if a.shape[0] >= 4:
        out[0] = 2.0 * a[0] - 5.0 * a[1] + 4.0 * a[2] - a[3]
        out[-1] = 2.0 * a[-1] - 5.0 * a[-2] + 4.0 * a[-3] - a[-4]
    else:
        out[0] = out[-1] = a[0] - 2.0 * a[1] + a[2]
    return np.moveaxis(out / (h * h), 0, axis)


def gradient(f: ScalarField) -> VectorField2:
    g = f.grid
    _require_operable(g)
    return VectorField2(g, _d1(f.values, g.hx, 0), _d1(f.values, g.hy, 1))


def divergence(F: VectorField2) -> ScalarField:
    g = F.grid
    _require_operable(g)
    return ScalarField(g, _d1(F.comp1, g.hx, 0) + _d1(F.comp2, g.hy, 1))


def hessian(f: ScalarField) -> Matrix2Field:
    g = f.grid
    _require_operable(g)
    fxx = _d2(f.values, g.hx, 0)
    fyy = _d2(f.values, g.hy, 1)
    fxy = 0.5 * (_d1(_d1(f.values, g.hx, 0), g.hy, 1) + _d1(_d1(f.values, g.hy, 1), g.hx, 0))
    return Matrix2Field.symmetric_from(g, fxx, fxy, fyy)


def laplacian(f: ScalarField) -> ScalarField:
    """5-point Laplacian in the interior, one-sided second differences on the boundary."""
    g = f.grid
    _require_operable(g)
    out = np.empty(g.shape)
    v = f.values
    out[1:-1, 1:-1] = ((v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / g.hx**2
                       + (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / g.hy**2)
    edge = g.boundary_mask()
    full = _d2(v, g.hx, 0) + _d2(v, g.hy, 1)
    out[edge] = full[edge]
    return ScalarField(g, out)


def jacobian(F: VectorField2) -> Matrix2Field:
    """Matrix whose ij-entry is the x_i derivative of the j-th component."""
    g = F.grid
    _require_operable(g)
    return Matrix2Field(g, _d1(F.comp1, g.hx, 0), _d1(F.comp2, g.hx, 0),
                        _d1(F.comp1, g.hy, 1), _d1(F.comp2, g.hy, 1))


def matrix_divergence(A: Matrix2Field) -> VectorField2:
    """Row vector of column divergences, ``(div A[:,0], div A[:,1])``."""
    g = A.grid
    _require_operable(g)
    return VectorField2(g, _d1(A.a11, g.hx, 0) + _d1(A.a21, g.hy, 1),
                        _d1(A.a12, g.hx, 0) + _d1(A.a22, g.hy, 1))


def check_coefficient(A: Matrix2Field, tol: float = 1e-12) -> None:
    """Raise unless A is symmetric with every pointwise eigenvalue >= 1 - tol."""
    if not np.array_equal(A.a12, A.a21):
        raise CoefficientError("coefficient matrix is not symmetric")
    lam = A.min_eigenvalue()
    if np.min(lam) < 1.0 - tol:
        i, j = np.unravel_index(np.argmin(lam), lam.shape)
        raise CoefficientError(
            f"coefficient eigenvalue {lam[i, j]:.3e} < 1 at node ({i}, {j})")


def aniso_cells(A: Matrix2Field) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cell-averaged coefficients of ``A - I`` used by the flux stencil."""
    return (kernels.cell_average(A.a11 - 1.0), kernels.cell_average(A.a12),
            kernels.cell_average(A.a22 - 1.0))


def div_anisotropic(A: Matrix2Field, f: ScalarField) -> ScalarField:
    """Discrete ``div(A grad f)``.

    Interior nodes use the conservative 9-point flux stencil shared with the
    pressure solver.  Boundary nodes fall back to the expanded form
    ``A : hess f + (div A) grad f`` with one-sided differences.
    """
    g = f.grid
    _require_operable(g)
    check_coefficient(A)
    c11, c12, c22 = aniso_cells(A)
    out = np.empty(g.shape)
    kernels.apply_aniso(np.ascontiguousarray(f.values), c11, c12, c22, g.hx, g.hy, out)
    edge = g.boundary_mask()
    H = hessian(f)
    gf = gradient(f)
    dA = matrix_divergence(A)
    expanded = (A.a11 * H.a11 + A.a12 * H.a12 + A.a21 * H.a21 + A.a22 * H.a22
                + dA.comp1 * gf.comp1 + dA.comp2 * gf.comp2)
    out[edge] = expanded[edge]
    return ScalarField(g, out)


# ---------------------------------------------------------------------------
# norms and inequalities
# ---------------------------------------------------------------------------


def lp_norm(f: ScalarField | np.ndarray, p: float, mask: np.ndarray | None = None,
            grid: Grid2D | None = None) -> float:
    """Trapezoidal discrete L^p norm over ``mask`` (all nodes by default)."""
    if isinstance(f, ScalarField):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f, dtype=float)
        if grid is None:
            raise GridError("raw arrays need an explicit grid")
    if not (p == np.inf or p >= 1):
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    if mask is None:
        mask = np.ones(grid.shape, dtype=bool)
    if not np.any(mask):
        raise ValueError("empty mask")
    a = np.abs(values[mask])
    if p == np.inf:
        return float(a.max())
    w = grid.weights()[mask]
    return float(np.sum(w * a**p) ** (1.0 / p))


def interpolation_exponent(ell: float, q: float, r: float) -> float:
    if not (1 <= ell <= q <= r) or q == r:
        raise ValueError("need 1 <= ell <= q < r")
    inv_r = 0.0 if r == np.inf else 1.0 / r
    return (1.0 / ell - 1.0 / q) / (1.0 / q - inv_r)


def interpolation_inequality(u: ScalarField, ell: float, q: float, r: float,
                             eps: float) -> tuple[float, float]:
    """Both sides of ``||u||_q <= eps ||u||_r + eps^-mu ||u||_ell``."""
    mu = interpolation_exponent(ell, q, r)
    lhs = lp_norm(u, q)
    rhs = eps * lp_norm(u, r) + eps ** (-mu) * lp_norm(u, ell)
    return lhs, rhs


# ---------------------------------------------------------------------------
# product-rule identities
# ---------------------------------------------------------------------------


def calculus_identities_check(F: VectorField2, G: VectorField2, A: Matrix2Field,
                              p: ScalarField) -> dict[str, float]:
    """Max pointwise residual of the four matrix product rules.

    Each left side is the discrete derivative of the assembled product, each
    right side the product rule applied to discrete derivatives of the
    factors, so residuals measure discrete product-rule defects, O(h^2).

    * form1: grad(F.G) = (grad F) G + (grad G) F
    * form2: div(A F) = A : grad F + (div A) F
    * form3: grad(A F) = (grad F) A^T + (A_x1 F, A_x2 F)^T
    * form4: div(p A) = p div A + (grad p)^T A
    """
    g = F.grid
    JF, JG = jacobian(F), jacobian(G)

    lhs1 = gradient(ScalarField(g, F.dot(G)))
    r1 = JF.apply(G)
    r1b = JG.apply(F)
    form1 = max(np.max(np.abs(lhs1.comp1 - r1.comp1 - r1b.comp1)),
                np.max(np.abs(lhs1.comp2 - r1.comp2 - r1b.comp2)))

    AF = A.apply(F)
    lhs2 = divergence(AF).values
    dA = matrix_divergence(A)
    rhs2 = (A.a11 * JF.a11 + A.a12 * JF.a12 + A.a21 * JF.a21 + A.a22 * JF.a22
            + dA.comp1 * F.comp1 + dA.comp2 * F.comp2)
    form2 = np.max(np.abs(lhs2 - rhs2))

    lhs3 = jacobian(AF)
    # (grad F) A^T
    t11 = JF.a11 * A.a11 + JF.a12 * A.a12
    t12 = JF.a11 * A.a21 + JF.a12 * A.a22
    t21 = JF.a21 * A.a11 + JF.a22 * A.a12
    t22 = JF.a21 * A.a21 + JF.a22 * A.a22
    Ax = [_d1(a, g.hx, 0) for a in (A.a11, A.a12, A.a21, A.a22)]
    Ay = [_d1(a, g.hy, 1) for a in (A.a11, A.a12, A.a21, A.a22)]
    # row i of the correction is (A_{x_i} F)^T
    c11 = Ax[0] * F.comp1 + Ax[1] * F.comp2
    c12 = Ax[2] * F.comp1 + Ax[3] * F.comp2
    c21 = Ay[0] * F.comp1 + Ay[1] * F.comp2
    c22 = Ay[2] * F.comp1 + Ay[3] * F.comp2
    form3 = max(np.max(np.abs(lhs3.a11 - t11 - c11)), np.max(np.abs(lhs3.a12 - t12 - c12)),
                np.max(np.abs(lhs3.a21 - t21 - c21)), np.max(np.abs(lhs3.a22 - t22 - c22)))

    pv = p.values
    pA = Matrix2Field(g, pv * A.a11, pv * A.a12, pv * A.a21, pv * A.a22)
    lhs4 = matrix_divergence(pA)
    gp = gradient(p)
    rhs4a = pv * dA.comp1 + gp.comp1 * A.a11 + gp.comp2 * A.a21
    rhs4b = pv * dA.comp2 + gp.comp1 * A.a12 + gp.comp2 * A.a22
    form4 = max(np.max(np.abs(lhs4.comp1 - rhs4a)), np.max(np.abs(lhs4.comp2 - rhs4b)))

    return {"form1": float(form1), "form2": float(form2), "form3": float(form3),
            "form4": float(form4)}


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

FIELD_HEADER = "nx,ny,hx,hy,x0,y0"


def write_field(path: str | Path, grid: Grid2D, components: dict[str, np.ndarray]) -> None:
    """Write nodal components as a row-major CSV snapshot.

    Layout: the literal header ``nx,ny,hx,hy,x0,y0``, one line with those
    values, a ``components=<name>,<name>...`` line, then for each component
    ``nx`` rows of ``ny`` comma-separated values (row ``i`` is x-index ``i``).
    """
    lines = [FIELD_HEADER, grid.header(), "components=" + ",".join(components)]
    for name, arr in components.items():
        arr = np.asarray(arr, dtype=float)
        if arr.shape != grid.shape:
            raise GridError(f"component {name}: shape {arr.shape} != {grid.shape}")
        lines.extend(",".join(repr(float(v)) for v in row) for row in arr)
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path: str | Path) -> tuple[Grid2D, dict[str, np.ndarray]]:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != FIELD_HEADER:
        raise GridError(f"{path}: missing header line {FIELD_HEADER!r}")
    nx, ny, hx, hy, x0, y0 = text[1].split(",")
    grid = Grid2D(int(nx), int(ny), float(hx), float(hy), float(x0), float(y0))
    if not text[2].startswith("components="):
        raise GridError(f"{path}: line 3 must list components")
    names = text[2][len("components="):].split(",")
    rows = text[3:]
    if len(rows) != grid.nx * len(names):
        raise GridError(f"{path}: expected {grid.nx * len(names)} data rows, got {len(rows)}")
    out = {}
    for k, name in enumerate(names):
        block = rows[k * grid.nx:(k + 1) * grid.nx]
        out[name] = np.array([[float(v) for v in r.split(",")] for r in block])
    return grid, out
