import csv
import math

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from hucai.grid import Grid2D, ScalarField
from hucai.model import Params
from hucai.verify import (
    Bump,
    ManufacturedCase,
    X_,
    Y_,
    cramer_check,
    de_giorgi_profile,
    default_case,
    fit_recursion,
    hessian_identity_check,
    log_gradient_check,
    mms_convergence,
    phi_equation_residual,
    quadratic_case,
    select_bumps,
    v_equation_residual,
    weak_residuals,
    write_order_table,
    ynb_sequence,
    ynb_threshold,
)

x, y = X_, Y_


# --- pointwise algebra ---------------------------------------------------------

def test_hessian_identity_zero_conductance():
    case = ManufacturedCase(sp.sin(3 * x) * sp.exp(y) + x * y**3, 0, 0)
    X, Y = case.random_nodes(500)
    assert hessian_identity_check(case, X, Y) <= 1e-14


def test_hessian_identity_quadratic_constant_m():
    case = quadratic_case()
    X, Y = case.random_nodes(1000)
    assert hessian_identity_check(case, X, Y) <= 1e-13


def test_hessian_identity_generic():
    case = default_case()
    X, Y = case.random_nodes(10_000, seed=3)
    assert hessian_identity_check(case, X, Y) <= 1e-12


def test_cramer_trivial():
    case = ManufacturedCase(x, 0, 0, v_floor=0.5)
    X, Y = case.random_nodes(10)
    rep = cramer_check(case, X, Y)
    assert rep.n_nodes == 10 and rep.det_rel_error <= 1e-15


def test_cramer_quadratic_against_linear_solve():
    case = quadratic_case()
    X, Y = case.random_nodes(200)
    rep = cramer_check(case, X, Y)
    assert rep.recon_rel_error <= 1e-12 and rep.det_rel_error <= 1e-12
    # independent oracle: solve the 3x3 system directly
    d = case.derivatives(X, Y)
    aux = case.exact_aux(X, Y)
    for k in range(20):
        n1, n2 = aux["nu1"][k], aux["nu2"][k]
        E = np.array([[2 * n1, 2 * n2, 0], [0, 2 * n1, 2 * n2],
                      [aux["a11"][k], 2 * aux["a12"][k], aux["a22"][k]]])
        sol = np.linalg.solve(E, [aux["e1"][k], aux["e2"][k], aux["w"][k]])
        assert np.allclose(sol, [d["pxx"][k], d["pxy"][k], d["pyy"][k]], rtol=1e-12)


def test_cramer_generic_and_both_readings():
    case = default_case()
    X, Y = case.random_nodes(10_000, seed=7)
    rep = cramer_check(case, X, Y, v_floor=1e-2)
    assert rep.det_rel_error <= 1e-12
    assert rep.recon_rel_error <= 1e-10 and rep.matrix_form_rel_error <= 1e-10
    assert rep.pp2_restored_residual <= 1e-12
    assert rep.pp2_as_printed_residual > 1e-3  # the variant without p_yy is not an identity


# --- discrete log-gradient identity -------------------------------------------

def test_log_gradient_second_order():
    case = default_case()
    errs = [log_gradient_check(case, n).discrete_identity for n in (64, 128, 256)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(3 <= q <= 5 for q in ratios)


def test_log_gradient_constant_v():
    case = ManufacturedCase(2 * x - y, sp.Float(0.3), sp.Float(-0.5))
    rep = log_gradient_check(case, 32)
    assert rep.discrete_identity <= 1e-10 and rep.rhs_vs_exact <= 1e-10


# --- weak residuals ------------------------------------------------------------

def test_weak_residual_constant_state():
    case = ManufacturedCase(2 * x - y + 1, sp.Float(0.3), sp.Float(-0.5), v_floor=1e-2)
    bumps = select_bumps(case)
    for form in ("v", "phi"):
        assert np.abs(weak_residuals(case, case.grid(32), bumps, form)).max() <= 1e-10


def test_weak_residual_one_dimensional_oracle():
    # m = (m1(x), 0), p = p(x): the residual integrand factors into f(x) b(y)
    case = ManufacturedCase(sp.sin(sp.pi * x) * (1 + x) / 2, sp.sin(sp.pi * x) * x / 2, 0, v_floor=1e-2)
    bump = Bump(0.3, 0.5, 0.12)

    def integrand(t):
        X, Y = np.array([t]), np.array([0.5])
        a = case.exact_aux(X, Y)
        d = case.derivatives(X, Y)
        phix = d["vx"][0] / a["v"][0]
        tx = (t - bump.cx) / bump.rho
        if abs(tx) >= 1:
            return 0.0
        b = math.exp(-1 / (1 - tx * tx))
        bp = b * (-2 * tx / (1 - tx * tx) ** 2) / bump.rho
        return (a["a11"][0] * phix - a["K1"][0]) * bp + (a["H1"][0] * phix + a["h"][0]) * b

    by = quad(lambda s: math.exp(-1 / (1 - s * s)), -1, 1, epsabs=1e-14)[0] * bump.rho
    oracle = quad(integrand, bump.cx - bump.rho, bump.cx + bump.rho, epsabs=1e-13, limit=200)[0] * by
    assert abs(oracle) <= 1e-10  # the equation holds exactly for smooth fields
    errs = [abs(weak_residuals(case, case.grid(n), [bump], "phi")[0] - oracle) for n in (64, 128, 256)]
    assert all(a / b >= 3 for a, b in zip(errs, errs[1:]))


def test_weak_residual_orders_generic():
    case = default_case()
    bumps = select_bumps(case)
    assert len(bumps) == 3 and len({b.rho for b in bumps}) == 3
    for study in (phi_equation_residual(case, bumps=bumps), v_equation_residual(case, bumps=bumps)):
        assert study.order >= 1.0
        # the 256 -> 512 pair is in the asymptotic regime
        assert 1.0 <= study.orders[-1] <= 2.2


def test_bumps_respect_floor():
    case = ManufacturedCase(sp.sin(sp.pi * x) * sp.sin(sp.pi * y), 0, 0, v_floor=10.0)
    with pytest.raises(ValueError, match="v_floor"):
        select_bumps(case)


# --- De Giorgi profile ---------------------------------------------------------

def test_de_giorgi_sub_level_field_is_trivial():
    g = Grid2D.unit(32)
    rep = de_giorgi_profile(ScalarField(g, np.full(g.shape, 0.5)), (0.5, 0.5), 0.3, Params())
    assert rep.trivial and np.all(rep.y == 0) and rep.bound_holds
    assert rep.K >= 2


def test_de_giorgi_constant_field_closed_form():
    g = Grid2D.unit(64)
    V, K, R, r = 9.0, 4.0, 0.3, 2.0
    rep = de_giorgi_profile(ScalarField(g, np.full(g.shape, V)), (0.5, 0.5), R, Params(r_exp=r), K=K)
    X, Y = g.mesh()
    dist = np.hypot(X - 0.5, Y - 0.5)
    for n in range(len(rep.y)):
        Kn = K - K / 2 ** (n + 1)
        Rn = R / 2 + R / 2 ** (n + 1)
        meas = np.sum(dist < Rn) * g.hx * g.hy
        expect = max(math.sqrt(V) - math.sqrt(Kn), 0.0) ** 2 * meas ** (1 / r)
        assert rep.y[n] == pytest.approx(expect, rel=1e-12)
    assert not rep.bound_holds


def test_de_giorgi_invariants_and_errors():
    g = Grid2D.unit(48)
    X, Y = g.mesh()
    v = ScalarField(g, 8 * np.exp(-((X - 0.5) ** 2 + (Y - 0.45) ** 2) / 0.02))
    rep = de_giorgi_profile(v, (0.5, 0.5), 0.3, Params())
    assert rep.K >= 2 and np.all(np.diff(rep.levels) > 0) and np.all(rep.levels >= 1)
    assert np.all(np.diff(rep.y) <= 1e-15)
    assert rep.bound_holds
    with pytest.raises(ValueError, match="ball"):
        de_giorgi_profile(v, (0.1, 0.5), 0.3, Params())


def test_de_giorgi_fitted_c_raises_level():
    g = Grid2D.unit(48)
    X, Y = g.mesh()
    v = ScalarField(g, 400 * np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2) / 0.002))
    rep = de_giorgi_profile(v, (0.5, 0.5), 0.3, Params(), c=1e-6)
    assert rep.c_used > 1e-6
    assert rep.K == pytest.approx(rep.sup_half)
    assert rep.bound_holds and rep.y[-1] < 1e-12


def test_de_giorgi_csv(tmp_path):
    g = Grid2D.unit(32)
    X, Y = g.mesh()
    rep = de_giorgi_profile(ScalarField(g, 5 + X), (0.5, 0.5), 0.25, Params(), K=4.0, n_levels=10)
    rep.write_csv(tmp_path / "dg.csv")
    rows = list(csv.reader(open(tmp_path / "dg.csv")))
    assert rows[0] == ["n", "K_n", "R_n", "S_n", "y_n"]
    assert len(rows) == 12
    assert float(rows[5][4]) == rep.y[4]


def test_fit_recursion_recovers_constants():
    c, b = 0.5, 4.0
    y = [0.05]
    for n in range(8):
        y.append(c * b**n * y[-1] ** 2)
    fit = fit_recursion(np.array(y))
    assert fit["b"] == pytest.approx(b, rel=1e-10)
    assert fit["c"] == pytest.approx(c, rel=1e-10)
    assert fit_recursion(np.array([1.0, 0.0, 0.0])) is None


# --- recursive sequence ---------------------------------------------------------

def test_ynb_examples():
    assert ynb_threshold(1, 4, 1) == pytest.approx(0.25)
    res = ynb_sequence(1, 4, 1, 0.0)
    assert np.all(res.y == 0) and res.verdict == "converged"
    res = ynb_sequence(1, 4, 1, 0.2, N=200)
    assert res.verdict == "converged" and res.meets_threshold
    res = ynb_sequence(1, 4, 1, 1.0)
    assert res.verdict == "diverged" and not res.meets_threshold
    for bad in ((1, 1, 1, 0.1), (0, 4, 1, 0.1), (1, 4, 0, 0.1), (1, 4, 1, -0.1)):
        with pytest.raises(ValueError):
            ynb_sequence(*bad)


def test_ynb_matches_direct_iteration():
    for c, b, a, y0 in ((1, 4, 1, 0.2), (2, 3, 0.5, 0.01), (0.5, 1.5, 2, 0.4), (1, 4, 1, 0.3)):
        ref = [y0]
        for n in range(10):
            ref.append(c * b**n * ref[-1] ** (1 + a))
        assert np.allclose(ynb_sequence(c, b, a, y0, N=10).y, ref, rtol=1e-12, atol=0)


def test_ynb_at_threshold_decays_geometrically():
    c, b, a = 1.3, 1.1, 3.0
    thr = ynb_threshold(c, b, a)
    res = ynb_sequence(c, b, a, thr, N=2000)
    n = np.arange(2001)
    assert np.allclose(res.y, thr * b ** (-n / a), rtol=1e-9)
    assert res.verdict == "converged" and res.meets_threshold


# --- convergence table ------------------------------------------------------------

def test_mms_table(tmp_path):
    rows = mms_convergence(default_case(), (16, 32, 64))
    names = {r.operator for r in rows}
    assert {"gradient", "hessian", "laplacian", "div_anisotropic", "pressure", "coupled_step"} <= names
    for r in rows:
        if r.operator.endswith("_affine"):
            assert max(r.errors) <= 1e-10
        else:
            assert all(1.7 <= o <= 2.3 for o in r.orders), r
    write_order_table(tmp_path / "t.csv", rows)
    got = list(csv.reader(open(tmp_path / "t.csv")))
    assert got[0][0] == "operator" and len(got) == len(rows) + 1


def test_laplacian_row_on_sine():
    case = ManufacturedCase(sp.sin(sp.pi * x) * sp.sin(sp.pi * y), 0, 0)
    row = next(r for r in mms_convergence(case, (32, 64, 128)) if r.operator == "laplacian")
    assert all(1.8 <= o <= 2.2 for o in row.orders)
