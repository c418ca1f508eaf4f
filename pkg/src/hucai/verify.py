"""Verification battery for the gradient-estimate machinery.

Closed-form test states come from :class:`ManufacturedCase`, which
differentiates sympy expressions for ``p`` and ``m`` and sets the source to
``s = -div(A grad p)`` so the pressure equation holds exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import sympy as sp

from .elliptic import assemble_pressure_system, solve_pressure
from .grid import (
    Grid2D,
    ScalarField,
    VectorField2,
    div_anisotropic,
    gradient,
    hessian,
    laplacian,
    lp_norm,
)
from .model import (
    AuxFields,
    Params,
    aux_from_derivatives,
    compute_aux,
    conductivity,
    forcing_term,
    reaction_term,
)

X_, Y_ = sp.symbols("x y", real=True)


class ManufacturedCase:
    """Analytic ``(p, m)`` with exact derivatives and the induced source."""

    def __init__(self, p_expr, m1_expr, m2_expr, name: str = "case", v_floor: float = 1e-2,
                 subdomain: tuple[float, float, float, float] = (0.1, 0.9, 0.1, 0.9),
                 domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)):
        self.name = name
        self.v_floor = v_floor
        self.subdomain = subdomain
        self.domain = domain
        self.exprs = {"p": sp.sympify(p_expr), "m1": sp.sympify(m1_expr), "m2": sp.sympify(m2_expr)}

    @cached_property
    def _fns(self) -> dict:
        x, y = X_, Y_
        p, m1, m2 = self.exprs["p"], self.exprs["m1"], self.exprs["m2"]
        a11, a12, a22 = 1 + m1**2, m1 * m2, 1 + m2**2
        px, py = sp.diff(p, x), sp.diff(p, y)
        flux1 = a11 * px + a12 * py
        flux2 = a12 * px + a22 * py
        s = -(sp.diff(flux1, x) + sp.diff(flux2, y))
        v = px * flux1 + py * flux2
        ex = {
            "p": p, "px": px, "py": py,
            "pxx": sp.diff(p, x, 2), "pxy": sp.diff(p, x, y), "pyy": sp.diff(p, y, 2),
            "m1": m1, "m2": m2,
            "m1x": sp.diff(m1, x), "m1y": sp.diff(m1, y), "m2x": sp.diff(m2, x), "m2y": sp.diff(m2, y),
            "lap_m1": sp.diff(m1, x, 2) + sp.diff(m1, y, 2),
            "lap_m2": sp.diff(m2, x, 2) + sp.diff(m2, y, 2),
            "s": s, "v": v, "vx": sp.diff(v, x), "vy": sp.diff(v, y),
        }
        return {k: sp.lambdify((x, y), e, "numpy") for k, e in ex.items()}

    def eval(self, name: str, X, Y) -> np.ndarray:
        return np.broadcast_to(np.asarray(self._fns[name](X, Y), dtype=float), np.shape(X)).copy()

    def derivatives(self, X, Y) -> dict[str, np.ndarray]:
        return {k: self.eval(k, X, Y) for k in self._fns}

    def grid(self, n: int) -> Grid2D:
        x0, x1, y0, y1 = self.domain
        return Grid2D.unit(n, lx=x1 - x0, ly=y1 - y0, x0=x0, y0=y0)

    def fields(self, grid: Grid2D) -> tuple[VectorField2, ScalarField, ScalarField]:
        X, Y = grid.mesh()
        m = VectorField2(grid, self.eval("m1", X, Y), self.eval("m2", X, Y))
        return m, ScalarField(grid, self.eval("p", X, Y)), ScalarField(grid, self.eval("s", X, Y))

    def exact_aux(self, X, Y, v_min: float | None = None) -> dict[str, np.ndarray]:
        d = self.derivatives(X, Y)
        w = ((1 + d["m1"] ** 2) * d["pxx"] + 2 * d["m1"] * d["m2"] * d["pxy"]
             + (1 + d["m2"] ** 2) * d["pyy"])
        return aux_from_derivatives(d["m1"], d["m2"], d["m1x"], d["m1y"], d["m2x"], d["m2y"],
                                    d["px"], d["py"], d["pxx"], d["pxy"], d["pyy"], w,
                                    self.v_floor if v_min is None else v_min)

    def random_nodes(self, n: int, seed: int = 0, subdomain: bool = True) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(seed)
        x0, x1, y0, y1 = self.subdomain if subdomain else self.domain
        return rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)


def default_case() -> ManufacturedCase:
    """Generic smooth case: p and m vanish on the unit-square boundary, no symmetry."""
    x, y = X_, Y_
    p = sp.sin(sp.pi * x) * sp.sin(sp.pi * y) * (1 + x / 2 + y**2 / 3)
    m1 = sp.Rational(4, 5) * sp.sin(sp.pi * x) * sp.sin(2 * sp.pi * y)
    m2 = 4 * x * (1 - x) * y * (1 - y) * (1 + sp.sin(3 * x + y) / 2)
    return ManufacturedCase(p, m1, m2, name="default")


def quadratic_case(a=1.3, b=-0.4, c=0.7, mc=(0.6, -0.9), lin=(0.5, 0.8)) -> ManufacturedCase:
    """Quadratic pressure and constant conductance (boundary values not zero)."""
    x, y = X_, Y_
    p = sp.Rational(1, 2) * (a * x**2 + 2 * b * x * y + c * y**2) + lin[0] * x + lin[1] * y
    return ManufacturedCase(p, sp.Float(mc[0]), sp.Float(mc[1]), name="quadratic")


# ---------------------------------------------------------------------------
# pointwise algebra with exact derivatives
# ---------------------------------------------------------------------------


def hessian_identity_check(case: ManufacturedCase, X, Y) -> float:
    """Max relative error of ``A hess(p) A = w A + det(A) M`` with ``w = A : hess p``
    and ``M = [[-p_yy, p_xy], [p_xy, -p_xx]]``.

    Errors are scaled by ``|A|_F^2 |hess p|_F`` at each node.
    """
    d = case.derivatives(X, Y)
    m1, m2 = d["m1"], d["m2"]
    A = np.empty(X.shape + (2, 2))
    A[..., 0, 0] = 1 + m1**2
    A[..., 0, 1] = A[..., 1, 0] = m1 * m2
    A[..., 1, 1] = 1 + m2**2
    P = np.empty_like(A)
    P[..., 0, 0], P[..., 1, 1] = d["pxx"], d["pyy"]
    P[..., 0, 1] = P[..., 1, 0] = d["pxy"]
    lhs = A @ P @ A
    w = np.sum(A * P, axis=(-1, -2))
    detA = np.linalg.det(A)
    M = np.empty_like(A)
    M[..., 0, 0], M[..., 1, 1] = -d["pyy"], -d["pxx"]
    M[..., 0, 1] = M[..., 1, 0] = d["pxy"]
    rhs = w[..., None, None] * A + detA[..., None, None] * M
    scale = np.linalg.norm(A, axis=(-1, -2)) ** 2 * np.linalg.norm(P, axis=(-1, -2))
    ok = scale > 0
    err = np.linalg.norm(lhs - rhs, axis=(-1, -2))
    return float(np.max(err[ok] / scale[ok])) if np.any(ok) else 0.0


def cramer_hessian(a11, a12, a22, px, py, e1, e2, w):
    """Second derivatives of p from ``(nu, E, w)`` by the closed-form Cramer solution."""
    nu1 = a11 * px + a12 * py
    nu2 = a12 * px + a22 * py
    detA = a11 * a22 - a12 * a12
    v = px * nu1 + py * nu2
    den = 2.0 * detA * v
    s_ = a11 * a22 - 2.0 * a12 * a12
    pxx = ((s_ * px - a12 * a22 * py) * e1 - a22 * nu2 * e2 + 2.0 * w * nu2**2) / den
    pxy = (a11 * nu2 * e1 + a22 * nu1 * e2 - 2.0 * w * nu1 * nu2) / den
    pyy = (-a11 * nu1 * e1 + (-a12 * a11 * px + s_ * py) * e2 + 2.0 * w * nu1**2) / den
    return pxx, pxy, pyy


@dataclass
class CramerReport:
    n_nodes: int
    det_rel_error: float
    recon_rel_error: float
    matrix_form_rel_error: float
    pp2_restored_residual: float
    pp2_as_printed_residual: float


def cramer_check(case: ManufacturedCase, X, Y, v_floor: float | None = None) -> CramerReport:
    """Check ``det E = 4 det(A) v`` and rebuild the Hessian from ``(nu, E, w)``.

    ``E`` is the 3x3 coefficient matrix of the linear system for
    ``(p_xx, p_xy, p_yy)``.  The second row is the one consistent with
    ``E = 2 hess(p) A grad p``; the residual of the variant without the
    ``p_yy`` factor is reported alongside.
    """
    v_floor = case.v_floor if v_floor is None else v_floor
    d = case.derivatives(X, Y)
    aux = case.exact_aux(X, Y, v_min=v_floor)
    keep = aux["v"] >= v_floor
    a11, a12, a22 = aux["a11"][keep], aux["a12"][keep], aux["a22"][keep]
    px, py = d["px"][keep], d["py"][keep]
    nu1, nu2 = aux["nu1"][keep], aux["nu2"][keep]
    e1, e2, w = aux["e1"][keep], aux["e2"][keep], aux["w"][keep]
    v, detA = aux["v"][keep], aux["detA"][keep]

    Emat = np.zeros((keep.sum(), 3, 3))
    Emat[:, 0, 0], Emat[:, 0, 1] = 2 * nu1, 2 * nu2
    Emat[:, 1, 1], Emat[:, 1, 2] = 2 * nu1, 2 * nu2
    Emat[:, 2, 0], Emat[:, 2, 1], Emat[:, 2, 2] = a11, 2 * a12, a22
    det_rel = np.abs(np.linalg.det(Emat) - 4 * detA * v) / (4 * detA * v)

    rxx, rxy, ryy = cramer_hessian(a11, a12, a22, px, py, e1, e2, w)
    txx, txy, tyy = d["pxx"][keep], d["pxy"][keep], d["pyy"][keep]
    tn = np.sqrt(txx**2 + 2 * txy**2 + tyy**2)
    ok = tn > 0
    rec = np.sqrt((rxx - txx) ** 2 + 2 * (rxy - txy) ** 2 + (ryy - tyy) ** 2)
    # matrix form: [[-p_yy, p_xy], [p_xy, -p_xx]] = (A1 E, A2 E)/(2 det(A) v) + w A3/(det(A) v)
    A1 = [t[keep] for t in aux["A1"]]
    A2 = [t[keep] for t in aux["A2"]]
    A3 = [t[keep] for t in aux["A3"]]
    den = 2.0 * detA * v
    c1 = ((A1[0] * e1 + A1[1] * e2) / den + w * A3[0] / (detA * v),
          (A1[2] * e1 + A1[3] * e2) / den + w * A3[2] / (detA * v))
    c2 = ((A2[0] * e1 + A2[1] * e2) / den + w * A3[1] / (detA * v),
          (A2[2] * e1 + A2[3] * e2) / den + w * A3[3] / (detA * v))
    mat = np.sqrt((c1[0] + tyy) ** 2 + (c1[1] - txy) ** 2 + (c2[0] - txy) ** 2 + (c2[1] + txx) ** 2)
    restored = np.abs(2 * nu1 * txy + 2 * nu2 * tyy - e2)
    printed = np.abs(2 * nu1 * txy + 2 * nu2 - e2)
    e2s = np.maximum(np.abs(e2), 1e-300)
    return CramerReport(
        n_nodes=int(keep.sum()),
        det_rel_error=float(det_rel.max()) if det_rel.size else 0.0,
        recon_rel_error=float(np.max(rec[ok] / tn[ok])) if np.any(ok) else 0.0,
        matrix_form_rel_error=float(np.max(mat[ok] / tn[ok])) if np.any(ok) else 0.0,
        pp2_restored_residual=float(np.max(restored / e2s)) if e2.size else 0.0,
        pp2_as_printed_residual=float(np.max(printed / e2s)) if e2.size else 0.0,
    )


# ---------------------------------------------------------------------------
# discrete checks on grids
# ---------------------------------------------------------------------------


def discrete_aux(case: ManufacturedCase, grid: Grid2D, v_min: float) -> tuple[AuxFields, VectorField2, ScalarField, ScalarField]:
    m, p, s = case.fields(grid)
    return compute_aux(m, p, s, Params(v_min=v_min)), m, p, s


def _subdomain_mask(case: ManufacturedCase, grid: Grid2D) -> np.ndarray:
    X, Y = grid.mesh()
    x0, x1, y0, y1 = case.subdomain
    return (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)


@dataclass
class GradientIdentityReport:
    n: int
    discrete_identity: float   # max |grad_h ln v_h - (G_h + E_h / v_h)|
    lhs_vs_exact: float        # max |grad_h ln v_h - grad ln v|
    rhs_vs_exact: float        # max |G_h + E_h / v_h - grad ln v|
    n_nodes: int


def log_gradient_check(case: ManufacturedCase, n: int, v_min: float = 1.0) -> GradientIdentityReport:
    """``grad(ln v) = G + E / v`` with discrete operators on ``{v >= v_min}`` inside the subdomain."""
    grid = case.grid(n)
    aux, *_ = discrete_aux(case, grid, v_min=0.5 * v_min)
    X, Y = grid.mesh()
    v_exact = case.eval("v", X, Y)
    sel = _subdomain_mask(case, grid) & (v_exact >= v_min)
    if not np.any(sel):
        raise ValueError(f"no nodes with v >= {v_min} in the subdomain")
    vh = aux.v.values
    lnv = np.log(np.where(vh > 0, vh, 1.0))
    gl = gradient(ScalarField(grid, lnv))
    inv_v = 1.0 / np.where(vh > 0, vh, 1.0)
    r1 = aux.G.comp1 + aux.E.comp1 * inv_v
    r2 = aux.G.comp2 + aux.E.comp2 * inv_v
    vs = np.where(sel, v_exact, 1.0)
    ex1 = case.eval("vx", X, Y) / vs
    ex2 = case.eval("vy", X, Y) / vs
    mx = lambda a, b: float(np.max(np.hypot(a[sel], b[sel])))  # noqa: E731
    return GradientIdentityReport(n, mx(gl.comp1 - r1, gl.comp2 - r2),
                                  mx(gl.comp1 - ex1, gl.comp2 - ex2),
                                  mx(r1 - ex1, r2 - ex2), int(sel.sum()))


def _bump_1d(t):
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti))
    return out


def _bump_1d_prime(t):
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti)) * (-2.0 * ti / (1.0 - ti * ti) ** 2)
    return out


@dataclass(frozen=True)
class Bump:
    """Tensor-product test function ``b((x-cx)/rho) b((y-cy)/rho)``."""

    cx: float
    cy: float
    rho: float

    def values(self, X, Y):
        tx, ty = (X - self.cx) / self.rho, (Y - self.cy) / self.rho
        bx, by = _bump_1d(tx), _bump_1d(ty)
        return bx * by, _bump_1d_prime(tx) * by / self.rho, bx * _bump_1d_prime(ty) / self.rho


def select_bumps(case: ManufacturedCase, scales=(0.08, 0.12, 0.16), samples: int = 25) -> list[Bump]:
    """One bump per scale, centred where the smallest ``v`` on its support is largest."""
    x0, x1, y0, y1 = case.subdomain
    out = []
    u = np.linspace(-1, 1, samples)
    for rho in scales:
        best, best_val = None, -np.inf
        for cx in np.linspace(x0 + rho, x1 - rho, 15):
            for cy in np.linspace(y0 + rho, y1 - rho, 15):
                PX, PY = np.meshgrid(cx + rho * u, cy + rho * u, indexing="ij")
                val = float(case.eval("v", PX, PY).min())
                if val > best_val:
                    best, best_val = Bump(float(cx), float(cy), rho), val
        if best is None or best_val < case.v_floor:
            raise ValueError(f"no support of radius {rho} keeps v >= v_floor={case.v_floor}")
        out.append(best)
    return out


def weak_residuals(case: ManufacturedCase, grid: Grid2D, bumps: list[Bump],
                   form: str = "phi") -> np.ndarray:
    """Weak residual of the log-gradient equation against each bump.

    ``form="phi"``: int A grad(phi).grad(psi) + (H.grad phi) psi + h psi - K.grad psi
    ``form="v"``:   int (1/v) A grad(v).grad(psi) + (1/v)(H.grad v) psi + h psi - K.grad psi
    """
    aux, *_ = discrete_aux(case, grid, v_min=0.5 * case.v_floor)
    X, Y = grid.mesh()
    wts = grid.weights()
    vh = aux.v.values
    safe = np.where(vh > 0, vh, 1.0)
    if form == "phi":
        gq = gradient(ScalarField(grid, np.log(safe)))
        q1, q2 = gq.comp1, gq.comp2
    elif form == "v":
        gq = gradient(aux.v)
        q1, q2 = gq.comp1 / safe, gq.comp2 / safe
    else:
        raise ValueError(f"unknown form {form!r}")
    A = aux.A
    aq1 = A.a11 * q1 + A.a12 * q2
    aq2 = A.a12 * q1 + A.a22 * q2
    hq = aux.H.comp1 * q1 + aux.H.comp2 * q2
    out = []
    for b in bumps:
        psi, psx, psy = b.values(X, Y)
        support = psi > 0
        if np.any(vh[support] < case.v_floor * 0.5):
            raise ValueError("test-function support leaves the region v >= v_floor")
        integrand = (aq1 * psx + aq2 * psy + hq * psi + aux.h.values * psi
                     - aux.K.comp1 * psx - aux.K.comp2 * psy)
        out.append(float(np.sum(wts * integrand)))
    return np.array(out)


@dataclass
class ResidualStudy:
    form: str
    ns: list[int]
    residuals: list[float]
    orders: list[float]
    order: float

    def as_dict(self):
        return asdict(self)


def _orders(ns, errs) -> list[float]:
    out = []
    for k in range(len(ns) - 1):
        a, b = errs[k], errs[k + 1]
        out.append(math.log(a / b) / math.log(ns[k + 1] / ns[k]) if a > 0 and b > 0 else float("nan"))
    return out


def _overall_order(ns, errs) -> float:
    a, b = errs[0], errs[-1]
    if a <= 0 or b <= 0:
        return float("inf") if b == 0 else float("nan")
    return math.log(a / b) / math.log(ns[-1] / ns[0])


def equation_residual_study(case: ManufacturedCase, ns=(64, 128, 256, 512), form: str = "phi",
                            bumps: list[Bump] | None = None) -> ResidualStudy:
    bumps = select_bumps(case) if bumps is None else bumps
    res = [float(np.max(np.abs(weak_residuals(case, case.grid(n), bumps, form)))) for n in ns]
    return ResidualStudy(form, list(ns), res, _orders(ns, res), _overall_order(ns, res))


def v_equation_residual(case: ManufacturedCase, ns=(64, 128, 256, 512), bumps=None) -> ResidualStudy:
    return equation_residual_study(case, ns, "v", bumps)


def phi_equation_residual(case: ManufacturedCase, ns=(64, 128, 256, 512), bumps=None) -> ResidualStudy:
    return equation_residual_study(case, ns, "phi", bumps)


# ---------------------------------------------------------------------------
# De Giorgi level-set profile
# ---------------------------------------------------------------------------


@dataclass
class DeGiorgiReport:
    K: float
    c_used: float
    levels: np.ndarray        # K_n
    radii: np.ndarray         # R_n
    measures: np.ndarray      # |S_n|
    y: np.ndarray             # y_n
    Gamma: float
    sup_half: float           # max of v over the closed ball of radius R/2
    bound_holds: bool         # sup_half <= K
    trivial: bool             # S_0 empty, every y_n = 0
    recursion: dict | None = None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["n", "K_n", "R_n", "S_n", "y_n"])
            for n in range(len(self.levels)):
                wr.writerow([n, repr(float(self.levels[n])), repr(float(self.radii[n])),
                             repr(float(self.measures[n])), repr(float(self.y[n]))])

    def summary(self) -> dict:
        return {"K": self.K, "c_used": self.c_used, "Gamma": self.Gamma, "sup_half": self.sup_half,
                "bound_holds": self.bound_holds, "trivial": self.trivial,
                "y_last": float(self.y[-1]), "recursion": self.recursion}


def _ball_norm(vals: np.ndarray, cell: float, q: float) -> float:
    if vals.size == 0:
        return 0.0
    return float(np.sum(np.abs(vals) ** q) * cell) ** (1.0 / q)


def de_giorgi_profile(v: ScalarField, x0: tuple[float, float], R: float, params: Params,
                      K: float | None = None, aux: AuxFields | None = None,
                      m: VectorField2 | None = None, c: float = 1.0,
                      n_levels: int = 40) -> DeGiorgiReport:
    """Level-set profile of ``v`` on the shrinking balls ``B_{R_n}(x0)``.

    ``R_n = R/2 + R/2^(n+1)``, ``K_n = K - K/2^(n+1)``,
    ``S_n = {v >= K_n} within B_{R_{n-1}}`` (``B_R`` for n = 0) and
    ``y_n = (int_{B_{R_n}} ((sqrt v - sqrt K_n)^+)^(2r))^(1/r)``.
    Without ``K`` the level comes from the self-consistent choice
    ``K = (c/R^2) y_0(K) (Gamma(K) + R^(2(r-1)/r)) + 2``, with ``c`` raised
    above its given value when needed so that ``K >= sup_{B_{R/2}} v``;
    the constant actually used is reported as ``c_used``.
    """
    g = v.grid
    r = params.r_exp
    xs, ys = g.x, g.y
    if x0[0] - R < xs[0] or x0[0] + R > xs[-1] or x0[1] - R < ys[0] or x0[1] + R > ys[-1]:
        raise ValueError("ball leaves the grid domain")
    X, Y = g.mesh()
    dist = np.hypot(X - x0[0], Y - x0[1])
    cell = g.hx * g.hy
    if not np.any(dist < R):
        raise ValueError("ball contains no grid nodes")
    vv = v.values
    radii = R / 2 + R / 2.0 ** (np.arange(n_levels + 1) + 1)

    if aux is not None:
        Hn, Kn, hn = aux.H.norm(), aux.K.norm(), np.abs(aux.h.values)
    if m is not None:
        mm = 1.0 + m.comp1**2 + m.comp2**2
    ball0 = dist < radii[0]

    def y_at(level, rad):
        sel = dist < rad
        tr = np.maximum(np.sqrt(np.maximum(vv[sel], 0.0)) - math.sqrt(level), 0.0)
        return float(np.sum(tr ** (2 * r)) * cell) ** (1.0 / r)

    def gamma_at(KK):
        s1 = ball0 & (vv >= KK - KK / 4.0)
        q1, q2 = r / (r - 1.0), 2 * r / (r - 1.0)
        base = _ball_norm(mm[s1], cell, q1) if m is not None else (s1.sum() * cell) ** (1.0 / q1)
        if aux is None:
            return base
        return base + R**2 * (_ball_norm(Hn[s1], cell, q2) ** 2 + _ball_norm(hn[s1], cell, q1)
                              + _ball_norm(Kn[s1], cell, q2) ** 2)

    tail = R ** (2 * (r - 1) / r)

    def k_formula(KK, cc):
        return cc / R**2 * y_at(KK / 2.0, radii[0]) * (gamma_at(KK) + tail) + 2.0

    half = dist <= R / 2
    sup_half = float(vv[half].max()) if np.any(half) else float(vv[dist < R].max())

    c_used = c
    if K is None:
        lo, hi = 2.0, max(4.0, 2.0 * float(vv[ball0].max()) + 4.0)
        while k_formula(hi, c) > hi:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if k_formula(mid, c) > mid:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-13 * hi:
                break
        K = hi
        if K < sup_half:
            K = sup_half
            y0 = y_at(K / 2.0, radii[0])
            denom = y0 * (gamma_at(K) + tail)
            c_used = max(c, (K - 2.0) * R**2 / denom) if denom > 0 else c
    if K < 2:
        raise ValueError(f"level scale K={K} must be >= 2")

    levels = K - K / 2.0 ** (np.arange(n_levels + 1) + 1)
    y = np.array([y_at(levels[n], radii[n]) for n in range(n_levels + 1)])
    meas = np.empty(n_levels + 1)
    for n in range(n_levels + 1):
        outer = R if n == 0 else radii[n - 1]
        meas[n] = float(np.sum((dist < outer) & (vv >= levels[n])) * cell)
    G = gamma_at(K)
    return DeGiorgiReport(K=float(K), c_used=float(c_used), levels=levels, radii=radii,
                          measures=meas, y=y, Gamma=float(G), sup_half=sup_half,
                          bound_holds=bool(sup_half <= K), trivial=bool(np.all(y == 0)),
                          recursion=fit_recursion(y))


def fit_recursion(y: np.ndarray, alpha: float = 1.0) -> dict | None:
    """Fit ``y_{n+1} <= c b^n y_n^(1+alpha)``: log-linear least squares for ``b``,
    then the smallest ``c`` making every observed step satisfy the inequality."""
    n = np.arange(len(y) - 1)
    ok = (y[:-1] > 0) & (y[1:] > 0)
    if ok.sum() < 2:
        return None
    z = np.log(y[1:][ok]) - (1 + alpha) * np.log(y[:-1][ok])
    slope, _ = np.polyfit(n[ok], z, 1)
    b = float(math.exp(slope))
    c = float(np.max(np.exp(z - n[ok] * slope)))
    return {"c": c, "b": b, "alpha": alpha}


# ---------------------------------------------------------------------------
# recursive sequence y_{n+1} = c b^n y_n^(1+alpha)
# ---------------------------------------------------------------------------


@dataclass
class YnbResult:
    y: np.ndarray
    verdict: str           # "converged", "diverged" or "undecided"
    threshold: float       # c^(-1/alpha) b^(-1/alpha^2)
    meets_threshold: bool


def ynb_threshold(c: float, b: float, alpha: float) -> float:
    return c ** (-1.0 / alpha) * b ** (-1.0 / alpha**2)


def ynb_sequence(c: float, b: float, alpha: float, y0: float, N: int = 200,
                 tol: float = 1e-12) -> YnbResult:
    """Iterate ``y_{n+1} = c b^n y_n^(1+alpha)``.

    With ``y_n = theta b^(-n/alpha) z_n`` and ``theta`` the threshold the
    recursion becomes ``z_{n+1} = z_n^(1+alpha)`` exactly, so it is run on
    ``ln z`` and no rounding accumulates at the unstable point ``z = 1``.
    """
    if not (b > 1 and c > 0 and alpha > 0 and y0 >= 0):
        raise ValueError("need b > 1, c > 0, alpha > 0, y0 >= 0")
    thr = ynb_threshold(c, b, alpha)
    if y0 == 0:
        return YnbResult(np.zeros(N + 1), "converged", thr, True)
    n = np.arange(N + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        lz = math.log(y0 / thr) * (1.0 + alpha) ** n.astype(float)
        if y0 == thr:
            lz = np.zeros(N + 1)
        logs = math.log(thr) - n * math.log(b) / alpha + lz
    verdict = "undecided"
    blown = np.nonzero(logs > 700.0)[0]
    if blown.size:
        logs[blown[0]:] = np.inf
        verdict = "diverged"
    y = np.exp(logs)
    if verdict != "diverged" and y[-1] < tol:
        verdict = "converged"
    return YnbResult(y, verdict, thr, bool(y0 <= thr))


# ---------------------------------------------------------------------------
# convergence table
# ---------------------------------------------------------------------------


@dataclass
class OrderRow:
    operator: str
    ns: list[int]
    errors: list[float]
    orders: list[float] = field(default_factory=list)


def _order_row(name, ns, errs) -> OrderRow:
    return OrderRow(name, list(ns), [float(e) for e in errs], _orders(ns, errs))


def mms_convergence(case: ManufacturedCase | None = None, ns=(32, 64, 128),
                    params: Params | None = None) -> list[OrderRow]:
    """Observed orders for the discrete operators, the pressure solve and one coupled step.

    Affine rows use ``f = 2x - 3y + 1`` and must show zero error.
    """
    from .dynamics import ConductanceStepper
    from .model import State

    case = default_case() if case is None else case
    params = Params() if params is None else params
    errs = {k: [] for k in ("gradient", "hessian", "laplacian", "div_anisotropic", "pressure",
                            "coupled_step", "gradient_affine", "hessian_affine")}
    for n in ns:
        grid = case.grid(n)
        X, Y = grid.mesh()
        d = case.derivatives(X, Y)
        m, p, s = case.fields(grid)
        gp = gradient(p)
        errs["gradient"].append(np.max(np.hypot(gp.comp1 - d["px"], gp.comp2 - d["py"])))
        Hp = hessian(p)
        errs["hessian"].append(max(np.max(np.abs(Hp.a11 - d["pxx"])), np.max(np.abs(Hp.a12 - d["pxy"])),
                                   np.max(np.abs(Hp.a22 - d["pyy"]))))
        errs["laplacian"].append(np.max(np.abs(laplacian(p).values - d["pxx"] - d["pyy"])))
        A, _ = conductivity(m)
        errs["div_anisotropic"].append(np.max(np.abs(div_anisotropic(A, p).values + d["s"])))
        sol = solve_pressure(assemble_pressure_system(A, s))
        errs["pressure"].append(lp_norm(ScalarField(grid, sol.p.values - p.values), 2)
                                / lp_norm(p, 2))
        # one IMEX step from the exact state with dt = h^4, compared with the exact rate
        h = min(grid.hx, grid.hy)
        dt = h**4
        stepper = ConductanceStepper(grid, s, params, dt)
        st = State(m, sol.p, 0.0)
        new = stepper.step(st)
        mstar = VectorField2(grid, d["m1"], d["m2"])
        pstar = ScalarField(grid, d["p"])
        f = forcing_term(mstar, pstar, params, VectorField2(grid, d["px"], d["py"]))
        rr = reaction_term(mstar, params)
        rate1 = params.alpha**2 * d["lap_m1"] + f.comp1 - rr.comp1
        rate2 = params.alpha**2 * d["lap_m2"] + f.comp2 - rr.comp2
        inner = grid.interior_mask()
        e1 = (new.m.comp1 - m.comp1) / dt - rate1
        e2 = (new.m.comp2 - m.comp2) / dt - rate2
        errs["coupled_step"].append(np.max(np.hypot(e1[inner], e2[inner])))
        aff = ScalarField(grid, 2 * X - 3 * Y + 1)
        ga = gradient(aff)
        errs["gradient_affine"].append(max(np.max(np.abs(ga.comp1 - 2)), np.max(np.abs(ga.comp2 + 3))))
        Ha = hessian(aff)
        errs["hessian_affine"].append(max(np.max(np.abs(Ha.a11)), np.max(np.abs(Ha.a12)),
                                          np.max(np.abs(Ha.a22))))
    return [_order_row(k, ns, v) for k, v in errs.items()]


def write_order_table(path: str | Path, rows: list[OrderRow]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        ns = rows[0].ns
        wr.writerow(["operator"] + [f"err_{n}" for n in ns] + [f"order_{a}_{b}" for a, b in zip(ns, ns[1:])])
        for row in rows:
            wr.writerow([row.operator] + [repr(e) for e in row.errors] + [repr(o) for o in row.orders])
