import math

import numpy as np
import pytest

from hucai.grid import (
    CoefficientError,
    Grid2D,
    GridError,
    Matrix2Field,
    ScalarField,
    VectorField2,
    calculus_identities_check,
    div_anisotropic,
    divergence,
    gradient,
    hessian,
    interpolation_exponent,
    interpolation_inequality,
    laplacian,
    lp_norm,
    read_field,
    write_field,
)
from hucai.model import conductivity


def orders(errs):
    return [math.log2(a / b) for a, b in zip(errs, errs[1:])]


def test_grid_validation():
    with pytest.raises(GridError):
        Grid2D(2, 5, 0.1, 0.1)
    with pytest.raises(GridError):
        Grid2D(5, 5, 0.0, 0.1)
    g = Grid2D.unit(4, 8, lx=2.0)
    assert g.shape == (5, 9)
    assert g.hx == 0.5 and g.hy == 0.125
    assert g.area == pytest.approx(2.0)
    assert g.weights().sum() == pytest.approx(g.area)


def test_field_shape_and_finiteness():
    g = Grid2D.unit(4)
    with pytest.raises(GridError):
        ScalarField(g, np.zeros((4, 4)))
    bad = np.zeros(g.shape)
    bad[1, 1] = np.nan
    with pytest.raises(GridError):
        VectorField2(g, bad, np.zeros(g.shape))


def test_gradient_constant_and_linear():
    g = Grid2D.unit(8)
    gc = gradient(ScalarField(g, np.full(g.shape, 7.0)))
    assert np.all(gc.comp1 == 0) and np.all(gc.comp2 == 0)
    gl = gradient(ScalarField.from_function(g, lambda x, y: x))
    assert np.allclose(gl.comp1, 1.0, atol=1e-13) and np.allclose(gl.comp2, 0.0, atol=1e-13)


def test_gradient_order():
    errs = []
    for n in (32, 64, 128):
        g = Grid2D.unit(n)
        X, Y = g.mesh()
        gr = gradient(ScalarField(g, np.sin(X) * np.cos(Y)))
        errs.append(max(np.abs(gr.comp1 - np.cos(X) * np.cos(Y)).max(),
                        np.abs(gr.comp2 + np.sin(X) * np.sin(Y)).max()))
    assert all(1.8 <= o <= 2.2 for o in orders(errs))


def test_divergence_cases():
    g = Grid2D.unit(10)
    X, Y = g.mesh()
    assert np.all(divergence(VectorField2(g, np.full(g.shape, 2.0), np.full(g.shape, -1.0))).values == 0)
    assert np.allclose(divergence(VectorField2(g, X, Y)).values, 2.0, atol=1e-12)
    errs = []
    for n in (32, 64, 128):
        g = Grid2D.unit(n)
        X, Y = g.mesh()
        d = divergence(VectorField2(g, np.sin(X), np.sin(Y))).values
        errs.append(np.abs(d - np.cos(X) - np.cos(Y)).max())
    assert all(1.8 <= o <= 2.2 for o in orders(errs))


def test_hessian_quadratic_exact_and_symmetric():
    a, b, c = 1.5, -0.7, 2.25
    g = Grid2D.unit(12)
    X, Y = g.mesh()
    H = hessian(ScalarField(g, 0.5 * (a * X**2 + 2 * b * X * Y + c * Y**2)))
    inner = g.interior_mask()
    assert np.allclose(H.a11[inner], a, atol=1e-10)
    assert np.allclose(H.a12[inner], b, atol=1e-10)
    assert np.allclose(H.a22[inner], c, atol=1e-10)
    assert np.array_equal(H.a12, H.a21)
    Hc = hessian(ScalarField(g, np.full(g.shape, 3.0)))
    assert np.all(Hc.stack() == 0)


def test_hessian_order_and_gradient_identity():
    errs, ident = [], []
    for n in (32, 64, 128):
        g = Grid2D.unit(n)
        X, Y = g.mesh()
        f = ScalarField(g, np.sin(X) * np.sin(Y))
        H = hessian(f)
        errs.append(max(np.abs(H.a11 + np.sin(X) * np.sin(Y)).max(),
                        np.abs(H.a12 - np.cos(X) * np.cos(Y)).max()))
        gf = gradient(f)
        lhs = gradient(ScalarField(g, gf.comp1**2 + gf.comp2**2))
        rhs = H.apply(gf)
        # nested one-sided differences are first order on the outer two rows
        inner = g.interior_mask(2)
        ident.append(max(np.abs(lhs.comp1 - 2 * rhs.comp1)[inner].max(),
                         np.abs(lhs.comp2 - 2 * rhs.comp2)[inner].max()))
    assert all(1.8 <= o <= 2.2 for o in orders(errs))
    assert all(o >= 1.8 for o in orders(ident))


def test_div_anisotropic_identity_is_laplacian():
    g = Grid2D.unit(16)
    X, Y = g.mesh()
    f = ScalarField(g, np.sin(3 * X) * np.exp(Y))
    I = Matrix2Field.identity(g)
    inner = g.interior_mask()
    assert np.allclose(div_anisotropic(I, f).values[inner], laplacian(f).values[inner], rtol=0, atol=1e-9)
    q = div_anisotropic(I, ScalarField(g, X**2 + Y**2)).values
    assert np.allclose(q[inner], 4.0, atol=1e-9)


def test_div_anisotropic_order():
    errs = []
    for n in (32, 64, 128):
        g = Grid2D.unit(n)
        X, Y = g.mesh()
        m1, m2 = np.sin(X), np.cos(Y)
        A, _ = conductivity(VectorField2(g, m1, m2))
        f = ScalarField(g, np.sin(X) * np.sin(Y))
        # analytic div((I + m m^T) grad f), expanded by hand
        fx, fy = np.cos(X) * np.sin(Y), np.sin(X) * np.cos(Y)
        fxx, fxy, fyy = -np.sin(X) * np.sin(Y), np.cos(X) * np.cos(Y), -np.sin(X) * np.sin(Y)
        m1x, m2y = np.cos(X), -np.sin(Y)
        mg = m1 * fx + m2 * fy
        mgx = m1x * fx + m1 * fxx + m2 * fxy
        mgy = m1 * fxy + m2y * fy + m2 * fyy
        exact = fxx + fyy + mgx * m1 + mg * m1x + mgy * m2 + mg * m2y
        errs.append(np.abs(div_anisotropic(A, f).values - exact).max())
    assert all(1.8 <= o <= 2.2 for o in orders(errs))


def test_div_anisotropic_rejects_bad_coefficients():
    g = Grid2D.unit(6)
    f = ScalarField.zeros(g)
    one, zero = np.ones(g.shape), np.zeros(g.shape)
    with pytest.raises(CoefficientError):
        div_anisotropic(Matrix2Field(g, one, 0.1 * one, zero, one), f)
    with pytest.raises(CoefficientError):
        div_anisotropic(Matrix2Field.symmetric_from(g, 0.5 * one, zero, one), f)


def test_lp_norm_examples():
    g = Grid2D.unit(20)
    assert lp_norm(ScalarField(g, np.ones(g.shape)), 2) == pytest.approx(1.0, abs=1e-12)
    assert lp_norm(ScalarField(g, np.full(g.shape, -3.0)), np.inf) == 3.0
    with pytest.raises(ValueError):
        lp_norm(ScalarField(g, np.ones(g.shape)), 2, mask=np.zeros(g.shape, bool))
    with pytest.raises(ValueError):
        lp_norm(ScalarField(g, np.ones(g.shape)), 0.5)


def test_interpolation_inequality_random(rng):
    g = Grid2D.unit(24)
    u = ScalarField(g, rng.normal(size=g.shape))
    assert interpolation_exponent(1, 2, 4) == pytest.approx(2.0)
    for eps in (0.1, 1.0, 10.0):
        lhs, rhs = interpolation_inequality(u, 1, 2, 4, eps)
        assert lhs <= rhs


def test_calculus_identities():
    # constant A and F: form2 exact
    g = Grid2D.unit(10)
    X, Y = g.mesh()
    F = VectorField2(g, np.full(g.shape, 0.3), np.full(g.shape, -2.0))
    A = Matrix2Field.symmetric_from(g, np.full(g.shape, 2.0), np.full(g.shape, 0.5), np.full(g.shape, 3.0))
    r = calculus_identities_check(F, F, A, ScalarField(g, X * Y))
    assert r["form2"] <= 1e-12
    # A = I: form3 is the plain Jacobian relation
    F2 = VectorField2(g, np.sin(Y), np.cos(X))
    assert calculus_identities_check(F2, F2, Matrix2Field.identity(g), ScalarField(g, X))["form3"] <= 1e-12
    res = []
    for n in (32, 64, 128):
        g = Grid2D.unit(n)
        X, Y = g.mesh()
        A, _ = conductivity(VectorField2(g, X, Y))
        F = VectorField2(g, np.sin(Y), np.cos(X))
        G = VectorField2(g, np.cos(X * Y), X - Y**2)
        res.append(calculus_identities_check(F, G, A, ScalarField(g, np.sin(X + 2 * Y))))
    for key in ("form1", "form2", "form3", "form4"):
        errs = [r[key] for r in res]
        assert all(o >= 1.7 for o in orders(errs)), (key, errs)


def test_field_file_roundtrip(tmp_path, rng):
    g = Grid2D(5, 7, 0.1, 1 / 3, x0=-0.25, y0=0.5)
    comps = {"m1": rng.normal(size=g.shape), "m2": rng.normal(size=g.shape)}
    path = tmp_path / "f.csv"
    write_field(path, g, comps)
    g2, back = read_field(path)
    assert g2 == g
    assert list(back) == ["m1", "m2"]
    for k in comps:
        assert np.array_equal(back[k], comps[k])
    assert path.read_text().splitlines()[0] == "nx,ny,hx,hy,x0,y0"
