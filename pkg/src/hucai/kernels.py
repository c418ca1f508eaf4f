"""Hot stencil kernels for the anisotropic operator div((I + B) grad f).

Nodal arrays are indexed ``[i, j]`` with ``i`` along x.  ``B = A - I`` enters
through cell-averaged coefficients ``c11, c12, c22`` of shape
``(nx - 1, ny - 1)``; the identity part is the 5-point Laplacian.  Every
kernel exists twice, as an ``@njit`` loop and as a sliced numpy expression;
``apply_aniso`` and friends point at whichever ``HUCAI_NUMBA`` selected.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit


def cell_average(b: np.ndarray) -> np.ndarray:
    """Average nodal values onto the cells (four corners each)."""
    return 0.25 * (b[:-1, :-1] + b[1:, :-1] + b[:-1, 1:] + b[1:, 1:])


# ---------------------------------------------------------------------------
# div(A grad f) at interior nodes; boundary entries of ``out`` are zeroed
# ---------------------------------------------------------------------------


@njit(cache=True)
def _apply_aniso_nb(f, c11, c12, c22, hx, hy, out):
    nx, ny = f.shape
    ihx2 = 1.0 / (hx * hx)
    ihy2 = 1.0 / (hy * hy)
    for i in range(nx):
        for j in range(ny):
            out[i, j] = 0.0
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            out[i, j] = (f[i + 1, j] - 2.0 * f[i, j] + f[i - 1, j]) * ihx2 + (
                f[i, j + 1] - 2.0 * f[i, j] + f[i, j - 1]
            ) * ihy2
    sx = 0.5 / hx
    sy = 0.5 / hy
    for i in range(nx - 1):
        for j in range(ny - 1):
            gx = (f[i + 1, j] - f[i, j] + f[i + 1, j + 1] - f[i, j + 1]) * sx
            gy = (f[i, j + 1] - f[i, j] + f[i + 1, j + 1] - f[i + 1, j]) * sy
            ax = (c11[i, j] * gx + c12[i, j] * gy) * sx
            ay = (c12[i, j] * gx + c22[i, j] * gy) * sy
            out[i, j] += ax + ay
            out[i + 1, j] += -ax + ay
            out[i, j + 1] += ax - ay
            out[i + 1, j + 1] += -ax - ay
    for i in range(nx):
        out[i, 0] = 0.0
        out[i, ny - 1] = 0.0
    for j in range(ny):
        out[0, j] = 0.0
        out[nx - 1, j] = 0.0
    return out


def _apply_aniso_np(f, c11, c12, c22, hx, hy, out):
    out[...] = 0.0
    out[1:-1, 1:-1] = (f[2:, 1:-1] - 2.0 * f[1:-1, 1:-1] + f[:-2, 1:-1]) / (hx * hx) + (
        f[1:-1, 2:] - 2.0 * f[1:-1, 1:-1] + f[1:-1, :-2]
    ) / (hy * hy)
    sx = 0.5 / hx
    sy = 0.5 / hy
    gx = (f[1:, :-1] - f[:-1, :-1] + f[1:, 1:] - f[:-1, 1:]) * sx
    gy = (f[:-1, 1:] - f[:-1, :-1] + f[1:, 1:] - f[1:, :-1]) * sy
    ax = (c11 * gx + c12 * gy) * sx
    ay = (c12 * gx + c22 * gy) * sy
    out[:-1, :-1] += ax + ay
    out[1:, :-1] += -ax + ay
    out[:-1, 1:] += ax - ay
    out[1:, 1:] += -ax - ay
    out[0, :] = 0.0
    out[-1, :] = 0.0
    out[:, 0] = 0.0
    out[:, -1] = 0.0
    return out


def operator_diagonal(c11, c12, c22, hx, hy) -> np.ndarray:
    """Diagonal of the SPD matrix ``-div(A grad .)`` at every node."""
    nx, ny = c11.shape[0] + 1, c11.shape[1] + 1
    d = np.full((nx, ny), 2.0 / hx**2 + 2.0 / hy**2)
    base = c11 / (4.0 * hx * hx) + c22 / (4.0 * hy * hy)
    cross = 2.0 * c12 / (4.0 * hx * hy)
    d[:-1, :-1] += base + cross
    d[1:, 1:] += base + cross
    d[1:, :-1] += base - cross
    d[:-1, 1:] += base - cross
    return d


# ---------------------------------------------------------------------------
# discrete energies consistent with the operator
# ---------------------------------------------------------------------------


@njit(cache=True)
def _cell_energy_nb(f, c11, c12, c22, hx, hy):
    nx, ny = f.shape
    sx = 0.5 / hx
    sy = 0.5 / hy
    acc = 0.0
    for i in range(nx - 1):
        for j in range(ny - 1):
            gx = (f[i + 1, j] - f[i, j] + f[i + 1, j + 1] - f[i, j + 1]) * sx
            gy = (f[i, j + 1] - f[i, j] + f[i + 1, j + 1] - f[i + 1, j]) * sy
            acc += c11[i, j] * gx * gx + 2.0 * c12[i, j] * gx * gy + c22[i, j] * gy * gy
    return acc * hx * hy


def _cell_energy_np(f, c11, c12, c22, hx, hy):
    gx = (f[1:, :-1] - f[:-1, :-1] + f[1:, 1:] - f[:-1, 1:]) * (0.5 / hx)
    gy = (f[:-1, 1:] - f[:-1, :-1] + f[1:, 1:] - f[1:, :-1]) * (0.5 / hy)
    return float(np.sum(c11 * gx * gx + 2.0 * c12 * gx * gy + c22 * gy * gy) * hx * hy)


def face_energy(f: np.ndarray, hx: float, hy: float) -> float:
    """Sum of squared forward differences over all faces, times cell area."""
    dx = np.diff(f, axis=0) / hx
    dy = np.diff(f, axis=1) / hy
    return float((np.sum(dx * dx) + np.sum(dy * dy)) * hx * hy)


if USE_NUMBA:
    apply_aniso = _apply_aniso_nb
    cell_energy = _cell_energy_nb
else:
    apply_aniso = _apply_aniso_np
    cell_energy = _cell_energy_np

BACKEND = "numba" if USE_NUMBA else "numpy"

__all__ = [
    "BACKEND",
    "apply_aniso",
    "cell_average",
    "cell_energy",
    "face_energy",
    "operator_diagonal",
]
