import math

import numpy as np
import pytest

from hucai.cli import duhamel_case
from hucai.dynamics import SimulationConfig, run_simulation
from hucai.grid import Grid2D, ScalarField, VectorField2
from hucai.heatpot import (
    ForcingHistory,
    HeatPotentialConfig,
    fixed_point_g,
    forcing_field,
    g_function,
    gaussian_tail_bound,
    hat_weights,
    heat_potential,
    heat_residual_check,
    kernel_mass_error,
    potential_gradient_scaling,
)
from hucai.model import Params, forcing_term, reaction_term
from hucai.profiles import bump_source, default_m0


def test_config_validation():
    with pytest.raises(ValueError):
        HeatPotentialConfig(truncation=5.0)
    with pytest.raises(ValueError):
        HeatPotentialConfig(delta=3.0)
    with pytest.raises(ValueError):
        HeatPotentialConfig(substeps=0)
    mids, widths = HeatPotentialConfig(levels=3, substeps=2).lags(1.0)
    assert widths.sum() == pytest.approx(1.0)
    assert np.all(mids > 0) and np.all(mids < 1)


def test_forcing_field_examples(rng):
    g = Grid2D.unit(8)
    X, Y = g.mesh()
    f = forcing_field(VectorField2.zeros(g), ScalarField(g, X), Params())
    assert np.all(f.comp1 == 0) and np.all(f.comp2 == 0)
    one = VectorField2(g, np.ones(g.shape), np.zeros(g.shape))
    f = forcing_field(one, ScalarField(g, X), Params())
    assert np.allclose(f.comp1, 0, atol=1e-13) and np.allclose(f.comp2, 0)
    m = VectorField2(g, rng.normal(size=g.shape), rng.normal(size=g.shape))
    p = ScalarField(g, np.sin(X + Y))
    params = Params(gamma=1.5, beta=0.7)
    f = forcing_field(m, p, params)
    a, b = forcing_term(m, p, params), reaction_term(m, params)
    assert np.allclose(f.comp1, a.comp1 - b.comp1, rtol=0, atol=1e-14)
    assert np.allclose(f.comp2, a.comp2 - b.comp2, rtol=0, atol=1e-14)


def test_hat_weights_quadrature_oracle():
    # one weight entry by direct numerical integration of hat * Gaussian
    from scipy.integrate import quad

    x = np.linspace(0, 1, 11)
    h, sigma = x[1] - x[0], 0.07
    W = hat_weights(x, sigma)
    for i, j in ((5, 5), (5, 6), (2, 4), (0, 1)):
        hat = lambda yy: max(0.0, 1 - abs(yy - x[j]) / h)  # noqa: E731
        gauss = lambda yy: math.exp(-((x[i] - yy) ** 2) / (2 * sigma**2)) / (sigma * math.sqrt(2 * math.pi))  # noqa: E731
        ref = quad(lambda yy: hat(yy) * gauss(yy), x[j] - h, x[j] + h, epsabs=1e-15)[0]
        assert W[i, j] == pytest.approx(ref, rel=1e-9, abs=1e-15)


def test_kernel_normalization():
    g = Grid2D.unit(64)
    cfg = HeatPotentialConfig()
    for s in (1e-5, 1e-3, 1e-2, 0.05):
        assert kernel_mass_error(g, s, cfg) <= 1e-6
    assert gaussian_tail_bound(6.0) < 1e-8


def test_zero_forcing_zero_potential():
    g = Grid2D.unit(16)
    u = heat_potential(lambda t: np.zeros((2,) + g.shape), 0.3, HeatPotentialConfig(), g)
    assert u.shape == (2,) + g.shape and np.all(u == 0)
    assert heat_residual_check(lambda t: np.zeros(g.shape), HeatPotentialConfig(), [0.1], 0.01, g) == 0


def test_constant_source_whole_plane():
    g = Grid2D.unit(24)
    cfg = HeatPotentialConfig(whole_plane=True)
    for t in (0.01, 0.4, 2.0):
        u = heat_potential(lambda tau: np.full(g.shape, 3.0), t, cfg, g)
        # only the truncated Gaussian tail mass is lost
        assert np.abs(u - 3.0 * t).max() <= gaussian_tail_bound(cfg.truncation) * 3.0 * t


def test_linearity(rng):
    g = Grid2D.unit(20)
    cfg = HeatPotentialConfig(substeps=2, levels=5)
    A = rng.normal(size=g.shape)
    B = rng.normal(size=g.shape)
    fa = lambda t: A * (1 + t)  # noqa: E731
    fb = lambda t: B * np.cos(t)  # noqa: E731
    ua = heat_potential(fa, 0.2, cfg, g)
    ub = heat_potential(fb, 0.2, cfg, g)
    uc = heat_potential(lambda t: 2 * fa(t) - 3 * fb(t), 0.2, cfg, g)
    assert np.abs(uc - (2 * ua - 3 * ub)).max() <= 1e-12 * np.abs(uc).max()


def test_duhamel_recovery():
    errs = []
    for k, n in enumerate((32, 64, 128)):
        g = Grid2D.unit(n)
        f, exact = duhamel_case(g, 1.0)
        u = heat_potential(f, 0.05, HeatPotentialConfig(substeps=2 * 2**k), g)
        errs.append(np.abs(u[0] - exact(0.05)).max())
    assert errs[-1] < 2e-4
    assert all(a / b >= 3 for a, b in zip(errs, errs[1:]))


def test_duhamel_residual_refinement():
    res = []
    for k, n in enumerate((32, 64, 128)):
        g = Grid2D.unit(n)
        f, _ = duhamel_case(g, 1.0)
        res.append(heat_residual_check(f, HeatPotentialConfig(substeps=2 * 2**k), [0.02, 0.05], 0.064 / n, g))
    assert all(a / b >= 2 for a, b in zip(res, res[1:]))


def test_errors():
    g = Grid2D.unit(8)
    with pytest.raises(ValueError):
        heat_potential(lambda t: np.zeros(g.shape), 0.0, HeatPotentialConfig(), g)
    hist = ForcingHistory(g, [0.0, 0.1], np.zeros((2, 2) + g.shape))
    with pytest.raises(ValueError, match="outside"):
        heat_potential(hist, 0.5, HeatPotentialConfig())
    with pytest.raises(ValueError):
        ForcingHistory(g, [0.0], np.zeros((1, 2) + g.shape))


def test_forcing_history_interpolates():
    g = Grid2D.unit(4)
    hist = ForcingHistory(g, [0.0, 1.0, 3.0], np.stack([np.full(g.shape, v) for v in (0.0, 2.0, 6.0)]))
    assert np.allclose(hist(0.5), 1.0) and np.allclose(hist(2.0), 4.0) and hist.n_comp == 1


def test_simulation_forcing_residual_decreases():
    res = []
    for k, n in enumerate((16, 32)):
        g = Grid2D.unit(n)
        traj = run_simulation(SimulationConfig(g, Params(), bump_source(g), default_m0(g), T=0.1,
                                               dt=0.1 / (8 * 2**k)))
        hist = ForcingHistory.from_trajectory(traj)
        res.append(heat_residual_check(hist, HeatPotentialConfig(substeps=2 * 2**k), [0.05], 0.04 / 2**k))
    assert res[1] < res[0]


def test_gradient_scaling():
    g = Grid2D.unit(32)
    cfg = HeatPotentialConfig(substeps=2)
    times = [1e-3, 3e-3, 1e-2, 3e-2, 0.1]
    zero = potential_gradient_scaling(lambda t: np.zeros(g.shape), cfg, times, g)
    assert zero.slope is None and zero.c_fit == 0
    X, Y = g.mesh()
    bump = np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2) / 0.02)
    rep = potential_gradient_scaling(lambda t: bump, cfg, times, g)
    assert rep.slope >= -1 + 2.5 / 2 - 0.1
    assert math.isfinite(rep.c_fit)
    fine = potential_gradient_scaling(lambda t: bump, HeatPotentialConfig(substeps=8), times, g)
    assert 0.5 <= fine.c_fit / rep.c_fit <= 2.0
    with pytest.raises(ValueError):
        potential_gradient_scaling(lambda t: bump, cfg, [1e-2, 2e-2, 3e-2, 4e-2], g)


def test_gradient_scaling_csv(tmp_path):
    g = Grid2D.unit(16)
    rep = potential_gradient_scaling(lambda t: np.ones(g.shape), HeatPotentialConfig(),
                                     [1e-3, 1e-2, 3e-2, 0.1], g, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,sup_grad_u,fitted_exponent" and len(lines) == 5
    assert float(lines[1].split(",")[1]) == rep.sup_grad[0]


def test_fixed_point_example():
    rep = fixed_point_g(1e-3, 2.0, 0.0)
    assert rep.tau0 == pytest.approx((4e-3) ** (-1 / 3), rel=1e-14)
    assert rep.tau0 == pytest.approx(6.2996, abs=1e-4)
    assert rep.condition1 and rep.g_bound_holds and rep.g_tau0 <= -1e-3
    lo, hi = rep.roots
    assert lo < rep.tau0 < hi
    assert abs(g_function(lo, 1e-3, 2.0, 0.0)) < 1e-10 and abs(g_function(hi, 1e-3, 2.0, 0.0)) < 1e-10


def test_fixed_point_domain():
    for bad in ((0, 2, 0), (1e-3, 1.0, 0), (1e-3, 2, -1)):
        with pytest.raises(ValueError):
            fixed_point_g(*bad)


def test_fixed_point_sweep_condition_matches_bound():
    for e in np.logspace(-6, 1, 40):
        for r in (1.2, 2.0, 3.5):
            for c in (0.0, 0.05, 1.0, 20.0):
                rep = fixed_point_g(float(e), r, c)
                if rep.condition1:
                    assert rep.g_bound_holds
                # away from the boundary of the condition the converse holds too
                margin = abs(rep.g_tau0 + e) / max(1.0, rep.tau0)
                if margin > 1e-9:
                    assert rep.condition1 == (rep.g_tau0 <= -e)
