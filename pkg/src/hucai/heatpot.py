"""Heat-kernel (Duhamel) potentials of the conductance forcing.

For a forcing ``f`` the potential

    u(x, t) = int_0^t int_R2 G(x - y, t - tau) f(y, tau) dy dtau,
    G(z, s) = exp(-|z|^2 / (4 alpha^2 s)) / (4 pi alpha^2 s),

solves ``u_t - alpha^2 Lap u = f`` on the plane with ``u(., 0) = 0``.  Nodal
samples of ``f`` are read as a bilinear (hat-function) interpolant so the
spatial convolution is exact up to kernel truncation: in each direction the
weight of the hat at ``x_j`` seen from ``x_i`` is a second difference of
``Psi(a) = a Phi(a / sigma) + sigma phi(a / sigma)``, the second antiderivative
of the 1D Gaussian with standard deviation ``sigma = alpha sqrt(2 s)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .grid import Grid2D, ScalarField, VectorField2, gradient, laplacian
from .model import Params, forcing_term, reaction_term

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class HeatPotentialConfig:
    """Quadrature settings.

    ``levels`` geometric panels ``[t/2^(k+1), t/2^k]`` in the lag ``s = t - tau``
    (the last one reaches down to 0), each split into ``substeps`` midpoint
    cells.  ``truncation`` is the kernel cut-off in standard deviations.
    ``whole_plane`` extends ``f`` by its edge values instead of by zero.
    """

    alpha: float = 1.0
    substeps: int = 4
    levels: int = 8
    truncation: float = 6.0
    delta: float = 2.5
    whole_plane: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.substeps < 1 or self.levels < 1:
            raise ValueError("substeps and levels must be >= 1")
        if self.truncation < 6.0:
            raise ValueError("truncation radius must be at least 6 standard deviations")
        if not 2 < self.delta < 3:
            raise ValueError("delta must lie in (2, 3)")

    def lags(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Midpoints and widths of the lag cells covering ``(0, t)``."""
        edges = [t / 2.0**k for k in range(self.levels)] + [0.0]
        mids, widths = [], []
        for a, b in zip(edges[1:], edges[:-1]):
            w = (b - a) / self.substeps
            mids.extend(a + (np.arange(self.substeps) + 0.5) * w)
            widths.extend([w] * self.substeps)
        return np.asarray(mids), np.asarray(widths)


def _psi(a: np.ndarray, sigma: float) -> np.ndarray:
    z = a / sigma
    return a * ndtr(z) + sigma * np.exp(-0.5 * z * z) / _SQRT_2PI


def hat_weights(x: np.ndarray, sigma: float, truncation: float = 6.0,
                whole_plane: bool = False) -> np.ndarray:
    """``W[i, j]`` = Gaussian(sigma) convolution of the hat at ``x[j]`` evaluated at ``x[i]``.

    Uniform spacing is assumed.  Entries farther than ``truncation*sigma + h``
    are dropped.  With ``whole_plane`` the edge hats are replaced by ramps that
    stay 1 beyond the grid, so rows sum to one.
    """
    h = x[1] - x[0]
    d = x[:, None] - x[None, :]
    if sigma == 0.0:
        return np.eye(len(x))
    W = (_psi(d + h, sigma) - 2.0 * _psi(d, sigma) + _psi(d - h, sigma)) / h
    if whole_plane:
        # ramp 1 for y <= x0 falling to 0 at x0 + h, and its mirror at the right end
        W[:, 0] = (_psi(h - d[:, 0], sigma) - _psi(-d[:, 0], sigma)) / h
        W[:, -1] = (_psi(d[:, -1] + h, sigma) - _psi(d[:, -1], sigma)) / h
        far = np.abs(d) > truncation * sigma + h
        far[:, 0] &= d[:, 0] > 0
        far[:, -1] &= d[:, -1] < 0
    else:
        far = np.abs(d) > truncation * sigma + h
    W[far] = 0.0
    return W


def gaussian_tail_bound(truncation: float) -> float:
    """Mass of the 2D Gaussian outside the square of half-width ``truncation`` sigma."""
    one_d = 2.0 * float(ndtr(-truncation))
    return 1.0 - (1.0 - one_d) ** 2


def kernel_mass_error(grid: Grid2D, s: float, cfg: HeatPotentialConfig) -> float:
    """Max deviation from 1 of the discrete kernel mass (whole-plane weights, truncated)."""
    sigma = cfg.alpha * math.sqrt(2.0 * s)
    wx = hat_weights(grid.x, sigma, cfg.truncation, whole_plane=True)
    wy = hat_weights(grid.y, sigma, cfg.truncation, whole_plane=True)
    mass = wx.sum(axis=1)[:, None] * wy.sum(axis=1)[None, :]
    return float(np.max(np.abs(mass - 1.0)))


# ---------------------------------------------------------------------------
# forcing
# ---------------------------------------------------------------------------


def forcing_field(m: VectorField2, p: ScalarField, params: Params) -> VectorField2:
    """``f = beta^2 (m . grad p) grad p - |m|^(2(gamma-1)) m`` inside the domain."""
    a = forcing_term(m, p, params)
    b = reaction_term(m, params)
    return VectorField2(m.grid, a.comp1 - b.comp1, a.comp2 - b.comp2)


class ForcingHistory:
    """Time samples of a forcing, linearly interpolated in time.

    ``values`` has shape ``(n_times, n_comp, nx, ny)``.
    """

    def __init__(self, grid: Grid2D, times, values):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim == 3:
            self.values = self.values[:, None]
        if self.times.ndim != 1 or len(self.times) != len(self.values):
            raise ValueError("times and values disagree in length")
        if len(self.times) < 2 or np.any(np.diff(self.times) <= 0):
            raise ValueError("need at least two strictly increasing time samples")
        if self.values.shape[2:] != grid.shape:
            raise ValueError("forcing samples do not match the grid")

    @property
    def n_comp(self) -> int:
        return self.values.shape[1]

    def __call__(self, tau: float) -> np.ndarray:
        ts = self.times
        if tau < ts[0] - 1e-12 * max(1.0, abs(ts[-1])) or tau > ts[-1] + 1e-12 * max(1.0, abs(ts[-1])):
            raise ValueError(f"time {tau} outside the sampled window [{ts[0]}, {ts[-1]}]")
        k = int(np.clip(np.searchsorted(ts, tau) - 1, 0, len(ts) - 2))
        lam = (tau - ts[k]) / (ts[k + 1] - ts[k])
        return (1.0 - lam) * self.values[k] + lam * self.values[k + 1]

    @classmethod
    def from_callable(cls, grid: Grid2D, fn: Callable[[float], np.ndarray], times) -> "ForcingHistory":
        return cls(grid, times, [np.asarray(fn(t), dtype=float) for t in times])

    @classmethod
    def from_trajectory(cls, traj) -> "ForcingHistory":
        times, vals = [], []
        for st in traj.snapshots:
            f = forcing_field(st.m, st.p, traj.params)
            times.append(st.t)
            vals.append(np.stack([f.comp1, f.comp2]))
        return cls(traj.grid, times, vals)


def _as_source(f, grid: Grid2D | None):
    if isinstance(f, ForcingHistory):
        return f.grid, f
    if grid is None:
        raise ValueError("a grid is required for callable forcings")

    def fn(tau):
        val = f(tau)
        if isinstance(val, VectorField2):
            return np.stack([val.comp1, val.comp2])
        if isinstance(val, ScalarField):
            return val.values[None]
        val = np.asarray(val, dtype=float)
        return val[None] if val.ndim == 2 else val

    return grid, fn


def heat_potential(f, t: float, cfg: HeatPotentialConfig, grid: Grid2D | None = None) -> np.ndarray:
    """Potential at time ``t`` on the grid nodes, shape ``(n_comp, nx, ny)``.

    ``f`` is a :class:`ForcingHistory` or a callable ``tau -> array`` (with ``grid``).
    """
    if not t > 0:
        raise ValueError("t must be > 0")
    grid, src = _as_source(f, grid)
    mids, widths = cfg.lags(t)
    out = None
    for s, w in zip(mids, widths):
        sigma = cfg.alpha * math.sqrt(2.0 * s)
        wx = hat_weights(grid.x, sigma, cfg.truncation, cfg.whole_plane)
        wy = hat_weights(grid.y, sigma, cfg.truncation, cfg.whole_plane)
        fv = src(t - s)
        term = np.einsum("ik,ckl,jl->cij", wx, fv, wy, optimize=True)
        out = w * term if out is None else out + w * term
    return out


def heat_residual_check(f, cfg: HeatPotentialConfig, times, dt: float, grid: Grid2D | None = None,
                        margin: float = 0.1) -> float:
    """``max |u_t - alpha^2 Lap_h u - f|`` over nodes at least ``margin`` inside the box.

    ``u_t`` is a central difference with step ``dt``.
    """
    grid, src = _as_source(f, grid)
    X, Y = grid.mesh()
    lx, ly = X.max() - X.min(), Y.max() - Y.min()
    sel = ((X >= X.min() + margin * lx) & (X <= X.max() - margin * lx)
           & (Y >= Y.min() + margin * ly) & (Y <= Y.max() - margin * ly))
    worst = 0.0
    for t in times:
        if not t - dt > 0:
            raise ValueError("sample times must exceed dt")
        up = heat_potential(src, t + dt, cfg, grid)
        um = heat_potential(src, t - dt, cfg, grid)
        u0 = heat_potential(src, t, cfg, grid)
        fv = src(t)
        for c in range(u0.shape[0]):
            lap = laplacian(ScalarField(grid, u0[c])).values
            r = (up[c] - um[c]) / (2.0 * dt) - cfg.alpha**2 * lap - fv[c]
            worst = max(worst, float(np.max(np.abs(r[sel]))))
    return worst


@dataclass
class ScalingReport:
    times: np.ndarray
    sup_grad: np.ndarray
    slope: float | None       # None when every norm vanishes or the fit is degenerate
    c_fit: float
    bound_exponent: float     # -1 + delta/2

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "sup_grad_u", "fitted_exponent"])
            slope = "" if self.slope is None else repr(self.slope)
            for t, g in zip(self.times, self.sup_grad):
                wr.writerow([repr(float(t)), repr(float(g)), slope])


def potential_gradient_scaling(f, cfg: HeatPotentialConfig, times, grid: Grid2D | None = None,
                               path: str | Path | None = None) -> ScalingReport:
    """``sup |grad u(t)|`` along ``times`` with a log-log slope fit and
    ``c_fit = max_t sup|grad u(t)| / t^(-1 + delta/2)``."""
    times = np.asarray(sorted(times), dtype=float)
    if len(times) < 4 or times[-1] / times[0] < 10**1.5:
        raise ValueError("need at least 4 times spanning 1.5 decades")
    grid, src = _as_source(f, grid)
    sup = np.empty(len(times))
    for k, t in enumerate(times):
        u = heat_potential(src, t, cfg, grid)
        sup[k] = max(float(np.max(gradient(ScalarField(grid, u[c])).norm())) for c in range(u.shape[0]))
    expo = -1.0 + cfg.delta / 2.0
    usable = sup > 0
    slope = None
    if usable.sum() >= 4:
        slope = float(np.polyfit(np.log(times[usable]), np.log(sup[usable]), 1)[0])
    elif usable.any():
        raise ValueError("degenerate fit: fewer than 4 usable points")
    rep = ScalingReport(times, sup, slope, float(np.max(sup / times**expo)), expo)
    if path is not None:
        rep.write_csv(path)
    return rep


# ---------------------------------------------------------------------------
# continuation function
# ---------------------------------------------------------------------------


@dataclass
class FixedPointReport:
    tau0: float
    g_tau0: float
    condition1: bool           # (c + 2 e) e^(1/(2r-1)) <= (2r-1) / (2r)^(2r/(2r-1))
    g_bound_holds: bool        # g(tau0) <= -eps_hat
    roots: tuple[float, float] | None   # zeros of g on either side of tau0


def g_function(tau, eps_hat: float, r: float, c: float):
    return eps_hat * np.power(tau, 2 * r) - tau + eps_hat + c


def fixed_point_g(eps_hat: float, r: float, c: float) -> FixedPointReport:
    """Minimiser ``tau0 = (2 e r)^(-1/(2r-1))`` of ``g(tau) = e tau^(2r) - tau + e + c``.

    The smallness condition is algebraically the same as ``g(tau0) <= -e``.
    """
    if not (eps_hat > 0 and r > 1 and c >= 0):
        raise ValueError("need eps_hat > 0, r > 1, c >= 0")
    tau0 = (2.0 * eps_hat * r) ** (-1.0 / (2.0 * r - 1.0))
    g0 = float(g_function(tau0, eps_hat, r, c))
    lhs = (c + 2.0 * eps_hat) * eps_hat ** (1.0 / (2.0 * r - 1.0))
    rhs = (2.0 * r - 1.0) / (2.0 * r) ** (2.0 * r / (2.0 * r - 1.0))
    cond = bool(lhs <= rhs)
    roots = None
    if g0 < 0:
        lo = brentq(g_function, 0.0, tau0, args=(eps_hat, r, c), xtol=1e-14, rtol=1e-14)
        hi_b = 2.0 * tau0
        while g_function(hi_b, eps_hat, r, c) < 0:
            hi_b *= 2.0
        hi = brentq(g_function, tau0, hi_b, args=(eps_hat, r, c), xtol=1e-14, rtol=1e-14)
        roots = (float(lo), float(hi))
    # allow rounding at the boundary of the condition
    slack = 1e-12 * max(1.0, tau0, c)
    return FixedPointReport(tau0, g0, cond, bool(g0 <= -eps_hat + slack), roots)
