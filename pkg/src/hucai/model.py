"""Pointwise model coefficients and the auxiliary fields of the gradient estimate.

With ``A = I + m m^T`` and ``v = A grad p . grad p`` the log-gradient
``phi = ln v`` satisfies

    div(A grad phi) = H . grad phi + h + div K      on {v > 0}

where ``G, H, K, h`` are built from ``m, grad m, grad p, hess p`` and
``w = A : hess p``.  :func:`aux_from_derivatives` evaluates all of them
from raw derivative arrays so the same formulas serve discrete fields and
closed-form test cases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    Grid2D,
    Matrix2Field,
    ScalarField,
    VectorField2,
    gradient,
    hessian,
    jacobian,
)


@dataclass(frozen=True)
class Params:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    eps_reg: float = 0.0
    v_min: float = 1.0
    r_exp: float = 2.0
    delta_exp: float = 2.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.gamma > 0.5:
            raise ValueError(f"gamma must be > 1/2 (hypothesis H2), got {self.gamma}")
        if self.eps_reg < 0:
            raise ValueError(f"eps_reg must be >= 0, got {self.eps_reg}")
        if self.gamma < 1 and self.eps_reg == 0:
            raise ValueError("gamma < 1 needs eps_reg > 0: the reaction term is singular at m = 0")
        if not self.v_min > 0:
            raise ValueError(f"v_min must be > 0, got {self.v_min}")
        if not self.r_exp > 1:
            raise ValueError(f"r_exp must be > 1, got {self.r_exp}")
        if not 2 < self.delta_exp < 3:
            raise ValueError(f"delta_exp must lie in (2, 3), got {self.delta_exp}")


@dataclass
class State:
    m: VectorField2
    p: ScalarField
    t: float = 0.0

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("time must be >= 0")

    @property
    def grid(self) -> Grid2D:
        return self.p.grid

    def check_boundary(self) -> None:
        edge = self.grid.boundary_mask()
        if np.any(self.p.values[edge] != 0) or np.any(self.m.comp1[edge] != 0) \
                or np.any(self.m.comp2[edge] != 0):
            raise ValueError("state violates p = |m| = 0 on the boundary")


@dataclass
class AuxFields:
    A: Matrix2Field
    detA: ScalarField
    v: ScalarField
    w: ScalarField
    nu: VectorField2
    E: VectorField2
    G: VectorField2
    A1: Matrix2Field
    A2: Matrix2Field
    A3: Matrix2Field
    H: VectorField2
    K: VectorField2
    h: ScalarField
    d: ScalarField
    mask: np.ndarray


def conductivity(m: VectorField2) -> tuple[Matrix2Field, ScalarField]:
    """``A = I + m m^T`` and ``det A = 1 + |m|^2``."""
    m1, m2 = m.comp1, m.comp2
    A = Matrix2Field.symmetric_from(m.grid, 1.0 + m1 * m1, m1 * m2, 1.0 + m2 * m2)
    return A, ScalarField(m.grid, 1.0 + m1 * m1 + m2 * m2)


def compute_v(m: VectorField2, p: ScalarField) -> ScalarField:
    gp = gradient(p)
    mg = m.dot(gp)
    return ScalarField(p.grid, gp.comp1**2 + gp.comp2**2 + mg * mg)


def divA_from_m(m1, m2, m1x, m1y, m2x, m2y):
    """Column divergences of ``I + m m^T`` from first derivatives of m."""
    divm = m1x + m2y
    return divm * m1 + m1 * m1x + m2 * m1y, divm * m2 + m1 * m2x + m2 * m2y


def compute_w(m: VectorField2, p: ScalarField, s: ScalarField) -> ScalarField:
    """``w = -((div A) grad p + s)``, which equals ``A : hess p`` for solutions."""
    J = jacobian(m)
    gp = gradient(p)
    d1, d2 = divA_from_m(m.comp1, m.comp2, J.a11, J.a21, J.a12, J.a22)
    return ScalarField(p.grid, -(d1 * gp.comp1 + d2 * gp.comp2 + s.values))


def aux_from_derivatives(m1, m2, m1x, m1y, m2x, m2y, px, py, pxx, pxy, pyy, w,
                         v_min: float) -> dict[str, np.ndarray]:
    """All auxiliary coefficients from pointwise derivative arrays.

    Fields carrying a ``1/v`` factor (G, H, K, h) are evaluated only where
    ``v >= v_min`` and are zero elsewhere.
    """
    a11 = 1.0 + m1 * m1
    a12 = m1 * m2
    a22 = 1.0 + m2 * m2
    detA = 1.0 + m1 * m1 + m2 * m2
    nu1 = a11 * px + a12 * py
    nu2 = a12 * px + a22 * py
    v = px * nu1 + py * nu2
    e1 = 2.0 * (pxx * nu1 + pxy * nu2)
    e2 = 2.0 * (pxy * nu1 + pyy * nu2)

    # derivatives of A = I + m m^T
    ax11, ax12, ax22 = 2 * m1 * m1x, m1x * m2 + m1 * m2x, 2 * m2 * m2x
    ay11, ay12, ay22 = 2 * m1 * m1y, m1y * m2 + m1 * m2y, 2 * m2 * m2y
    qx = ax11 * px * px + 2 * ax12 * px * py + ax22 * py * py
    qy = ay11 * px * px + 2 * ay12 * px * py + ay22 * py * py
    ddx = 2.0 * (m1 * m1x + m2 * m2x)
    ddy = 2.0 * (m1 * m1y + m2 * m2y)

    s_ = a11 * a22 - 2.0 * a12 * a12
    A1 = (a11 * nu1, a12 * a11 * px - s_ * py, a11 * nu2, a22 * nu1)
    A2 = (a11 * nu2, a22 * nu1, -s_ * px + a12 * a22 * py, a22 * nu2)
    A3 = (-nu1 * nu1, -nu1 * nu2, -nu1 * nu2, -nu2 * nu2)

    mask = v >= v_min
    vs = np.where(mask, v, 1.0)
    inv_v = np.where(mask, 1.0 / vs, 0.0)

    g1, g2 = qx * inv_v, qy * inv_v
    ag1 = a11 * g1 + a12 * g2
    ag2 = a12 * g1 + a22 * g2
    # rows (grad p)^T A_k, applied to grad det A
    r1 = (px * A1[0] + py * A1[2]) * ddx + (px * A1[1] + py * A1[3]) * ddy
    r2 = (px * A2[0] + py * A2[2]) * ddx + (px * A2[1] + py * A2[3]) * ddy
    rd1 = r1 * inv_v / detA
    rd2 = r2 * inv_v / detA
    H1, H2 = rd1 - ag1, rd2 - ag2
    K1 = ag1 + 2.0 * w * nu1 * inv_v
    K2 = ag2 + 2.0 * w * nu2 * inv_v
    a3p1 = A3[0] * px + A3[1] * py
    a3p2 = A3[2] * px + A3[3] * py
    h = ((2.0 * w * nu1 * inv_v - rd1 + ag1) * g1 + (2.0 * w * nu2 * inv_v - rd2 + ag2) * g2
         + 2.0 * w * inv_v * inv_v / detA * (a3p1 * ddx + a3p2 * ddy))
    gradm = np.sqrt(m1x**2 + m1y**2 + m2x**2 + m2y**2)
    d = detA * np.hypot(m1, m2) * gradm
    return {
        "a11": a11, "a12": a12, "a22": a22, "detA": detA, "v": v, "w": w,
        "nu1": nu1, "nu2": nu2, "e1": e1, "e2": e2, "G1": g1, "G2": g2,
        "A1": A1, "A2": A2, "A3": A3, "H1": H1, "H2": H2, "K1": K1, "K2": K2,
        "h": h, "d": d, "mask": mask,
    }


def compute_aux(m: VectorField2, p: ScalarField, s: ScalarField, params: Params) -> AuxFields:
    g = p.grid
    J = jacobian(m)  # a11 = m1_x, a12 = m2_x, a21 = m1_y, a22 = m2_y
    gp = gradient(p)
    Hp = hessian(p)
    w = compute_w(m, p, s).values
    r = aux_from_derivatives(m.comp1, m.comp2, J.a11, J.a21, J.a12, J.a22,
                             gp.comp1, gp.comp2, Hp.a11, Hp.a12, Hp.a22, w, params.v_min)
    mat = lambda t: Matrix2Field(g, *t)  # noqa: E731
    return AuxFields(
        A=Matrix2Field.symmetric_from(g, r["a11"], r["a12"], r["a22"]),
        detA=ScalarField(g, r["detA"]),
        v=ScalarField(g, r["v"]),
        w=ScalarField(g, w),
        nu=VectorField2(g, r["nu1"], r["nu2"]),
        E=VectorField2(g, r["e1"], r["e2"]),
        G=VectorField2(g, r["G1"], r["G2"]),
        A1=mat(r["A1"]), A2=mat(r["A2"]), A3=mat(r["A3"]),
        H=VectorField2(g, r["H1"], r["H2"]),
        K=VectorField2(g, r["K1"], r["K2"]),
        h=ScalarField(g, r["h"]),
        d=ScalarField(g, r["d"]),
        mask=r["mask"],
    )


def reaction_term(m: VectorField2, params: Params) -> VectorField2:
    """``(|m|^2 + eps_reg)^(gamma-1) m``; the exact decay term when eps_reg = 0."""
    if params.gamma < 1 and params.eps_reg == 0:
        raise ValueError("gamma < 1 requires eps_reg > 0")
    if params.gamma == 1:
        return VectorField2(m.grid, m.comp1.copy(), m.comp2.copy())
    base = m.comp1**2 + m.comp2**2 + params.eps_reg
    fac = base ** (params.gamma - 1.0)
    return VectorField2(m.grid, fac * m.comp1, fac * m.comp2)


def forcing_term(m: VectorField2, p: ScalarField, params: Params,
                 grad_p: VectorField2 | None = None) -> VectorField2:
    """``beta^2 (m . grad p) grad p``."""
    gp = gradient(p) if grad_p is None else grad_p
    c = params.beta**2 * m.dot(gp)
    return VectorField2(m.grid, c * gp.comp1, c * gp.comp2)


def coefficient_ratios(aux: AuxFields, s: ScalarField, tiny: float = 1e-12) -> dict[str, float]:
    """Max over {v >= v_min, d > tiny} of |H|/d, |K|/(d + (1+|m|^2)^1.5 |s|),
    |h|/(d^2 + (1+|m|^2) s^2)."""
    d = aux.d.values
    det = aux.detA.values
    sv = np.abs(s.values)
    sel = aux.mask & (d > tiny)
    if not np.any(sel):
        return {"H": 0.0, "K": 0.0, "h": 0.0}
    H = aux.H.norm()[sel] / d[sel]
    K = aux.K.norm()[sel] / (d[sel] + det[sel] ** 1.5 * sv[sel])
    h = np.abs(aux.h.values[sel]) / (d[sel] ** 2 + det[sel] * sv[sel] ** 2)
    return {"H": float(H.max()), "K": float(K.max()), "h": float(h.max())}
