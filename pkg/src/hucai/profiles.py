"""Named analytic data for sources and initial conductances."""

from __future__ import annotations

import numpy as np

from .grid import Grid2D, ScalarField, VectorField2


def bump_source(grid: Grid2D, amplitude: float = 60.0, width: float = 0.1,
                center: tuple[float, float] | None = None) -> ScalarField:
    """Gaussian bump ``amplitude * exp(-|x - c|^2 / (2 width^2))``; c defaults to the box centre."""
    if center is None:
        center = (grid.x0 + 0.5 * (grid.nx - 1) * grid.hx, grid.y0 + 0.5 * (grid.ny - 1) * grid.hy)
    X, Y = grid.mesh()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return ScalarField(grid, amplitude * np.exp(-r2 / (2.0 * width**2)))


def default_m0(grid: Grid2D, amplitude: float = 0.5) -> VectorField2:
    """Lowest sine mode along the diagonal direction, ``amplitude sin(pi x) sin(pi y) (1, 1)``.

    Vanishes on the boundary and is invariant under the swap x <-> y.
    """
    lx = (grid.nx - 1) * grid.hx
    ly = (grid.ny - 1) * grid.hy
    X, Y = grid.mesh()
    u = np.pi * (X - grid.x0) / lx
    v = np.pi * (Y - grid.y0) / ly
    m1 = amplitude * np.sin(u) * np.sin(v)
    m2 = amplitude * np.sin(u) * np.sin(v)
    edge = grid.boundary_mask()
    m1[edge] = 0.0
    m2[edge] = 0.0
    return VectorField2(grid, m1, m2)


SOURCES = {
    "bump": bump_source,
    "zero": lambda grid, **kw: ScalarField.zeros(grid),
}

INITIAL_CONDUCTANCES = {
    "default": default_m0,
    "zero": lambda grid, **kw: VectorField2.zeros(grid),
}
