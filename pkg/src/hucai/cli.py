"""Command-line driver.

Config files are plain text, one ``key = value`` per line; ``#`` starts a
comment.  Keys are listed in :data:`SCHEMA`, defaults on :class:`RunConfig`.  Lists are
comma-separated.  Run with::

    hucai --config run.cfg [--mode MODE] [--out DIR]

The output directory is ``--out``, else ``$HUCAI_OUT``, else the ``out`` key.
The exit status is 0 when every check of the mode passes, 1 when a check
fails or a module raises, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .grid import Grid2D, ScalarField, VectorField2, read_field

log = logging.getLogger("hucai")

MODES = ("simulate", "verify", "mms", "degiorgi", "heatpot")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> value parser; defaults live on RunConfig
SCHEMA: dict[str, object] = {
    "mode": str,
    "n": int,
    "ny": int,
    "lx": float,
    "ly": float,
    "alpha": float,
    "beta": float,
    "gamma": float,
    "eps_reg": float,
    "v_min": float,
    "r": float,
    "delta": float,
    "source": str,
    "source_amplitude": float,
    "source_width": float,
    "m0": str,
    "m0_amplitude": float,
    "T": float,
    "dt": float,
    "tol": float,
    "max_iter": int,
    "snapshot_stride": int,
    "out": str,
    "seed": int,
    # verify
    "verify_nodes": int,
    "verify_ns": _ints,
    "v_floor": float,
    # mms
    "mms_ns": _ints,
    # degiorgi
    "ball_x": float,
    "ball_y": float,
    "ball_r": float,
    "degiorgi_levels": int,
    "degiorgi_c": float,
    # heatpot
    "heat_ns": _ints,
    "heat_substeps": int,
    "heat_levels": int,
    "heat_truncation": float,
    "heat_times": _floats,
    "heat_whole_plane": _bool,
}


@dataclass
class RunConfig:
    mode: str = "simulate"
    n: int = 32
    ny: int | None = None
    lx: float = 1.0
    ly: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    eps_reg: float = 0.0
    v_min: float = 1.0
    r: float = 2.0
    delta: float = 2.5
    source: str = "bump"
    source_amplitude: float = 60.0
    source_width: float = 0.1
    m0: str = "default"
    m0_amplitude: float = 0.5
    T: float = 1.0
    dt: float | None = None
    tol: float = 1e-10
    max_iter: int = 20000
    snapshot_stride: int = 1
    out: str = "out"
    seed: int = 0
    verify_nodes: int = 10000
    verify_ns: tuple = (64, 128, 256)
    v_floor: float = 1e-2
    mms_ns: tuple = (32, 64, 128)
    ball_x: float | None = None
    ball_y: float | None = None
    ball_r: float | None = None
    degiorgi_levels: int = 40
    degiorgi_c: float = 1.0
    heat_ns: tuple = (32, 64, 128)
    heat_substeps: int = 2
    heat_levels: int = 8
    heat_truncation: float = 6.0
    heat_times: tuple = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05)
    heat_whole_plane: bool = False

    def params(self):
        from .model import Params

        return Params(alpha=self.alpha, beta=self.beta, gamma=self.gamma, eps_reg=self.eps_reg,
                      v_min=self.v_min, r_exp=self.r, delta_exp=self.delta)

    def grid(self) -> Grid2D:
        return Grid2D.unit(self.n, self.ny, lx=self.lx, ly=self.ly)

    def validate(self) -> "RunConfig":
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.mode not in MODES:
            bad("mode", f"must be one of {', '.join(MODES)}")
        if self.n < 2 or (self.ny is not None and self.ny < 2):
            bad("n", "grids need at least 2 cells per direction")
        if self.T < 0:
            bad("T", "must be >= 0")
        if self.dt is not None and not self.dt > 0:
            bad("dt", "must be > 0")
        if self.snapshot_stride < 1:
            bad("snapshot_stride", "must be >= 1")
        if not self.tol > 0:
            bad("tol", "must be > 0")
        try:
            self.params()
        except ValueError as exc:
            msg = str(exc)
            name = {"alpha": "alpha", "beta": "beta", "gamma": "gamma", "eps_reg": "eps_reg",
                    "v_min": "v_min", "r_exp": "r", "delta_exp": "delta"}.get(msg.split()[0], "params")
            bad(name, msg)
        if self.mode == "degiorgi":
            for k in ("ball_x", "ball_y", "ball_r"):
                if getattr(self, k) is None:
                    bad(k, "degiorgi mode needs a ball (ball_x, ball_y, ball_r)")
            if not self.ball_r > 0:
                bad("ball_r", "must be > 0")
        return self


def parse_config(path: str | Path) -> RunConfig:
    """Read and validate a ``key = value`` config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    seen: dict[str, object] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        conv = SCHEMA[key]
        try:
            seen[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return RunConfig(**seen).validate()


# ---------------------------------------------------------------------------
# data construction
# ---------------------------------------------------------------------------


def _make_source(cfg: RunConfig, grid: Grid2D) -> ScalarField:
    from .profiles import SOURCES

    if cfg.source.startswith("file:"):
        fgrid, comps = read_field(cfg.source[5:])
        if fgrid != grid or len(comps) != 1:
            raise ConfigError("source: field file must hold one component on the configured grid")
        return ScalarField(grid, next(iter(comps.values())))
    if cfg.source == "bump":
        return SOURCES["bump"](grid, amplitude=cfg.source_amplitude, width=cfg.source_width)
    if cfg.source in SOURCES:
        return SOURCES[cfg.source](grid)
    raise ConfigError(f"source: unknown profile {cfg.source!r}")


def _make_m0(cfg: RunConfig, grid: Grid2D) -> VectorField2:
    from .profiles import INITIAL_CONDUCTANCES

    if cfg.m0.startswith("file:"):
        fgrid, comps = read_field(cfg.m0[5:])
        if fgrid != grid or len(comps) != 2:
            raise ConfigError("m0: field file must hold two components on the configured grid")
        c1, c2 = comps.values()
        return VectorField2(grid, c1, c2)
    if cfg.m0 == "default":
        return INITIAL_CONDUCTANCES["default"](grid, amplitude=cfg.m0_amplitude)
    if cfg.m0 in INITIAL_CONDUCTANCES:
        return INITIAL_CONDUCTANCES[cfg.m0](grid)
    raise ConfigError(f"m0: unknown profile {cfg.m0!r}")


def _simulate(cfg: RunConfig):
    from .dynamics import SimulationConfig, run_simulation

    grid = cfg.grid()
    sim = SimulationConfig(grid, cfg.params(), _make_source(cfg, grid), _make_m0(cfg, grid),
                           cfg.T, cfg.dt, cfg.snapshot_stride, cfg.tol, cfg.max_iter)
    return run_simulation(sim)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _finite(x: float) -> bool:
    return x is not None and math.isfinite(x)


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------


def _run_simulate(cfg: RunConfig, out: Path) -> bool:
    from .dynamics import write_summary

    traj = _simulate(cfg)
    traj.write_monitor_csv(out / "monitor.csv")
    traj.write_snapshots(out / "snapshots")
    summary = write_summary(out / "summary.json", traj)
    return all(_finite(v) for r in traj.records for v in asdict(r).values()) \
        and _finite(summary["bounds"]["c_v"]) and _finite(summary["bounds"]["c_m"])


def _check(status: dict, name: str, ok: bool, **info) -> None:
    status[name] = {"status": "pass" if ok else "fail", **info}


def _run_verify(cfg: RunConfig, out: Path) -> bool:
    from . import verify as V

    case = V.default_case()
    case.v_floor = cfg.v_floor
    X, Y = case.random_nodes(cfg.verify_nodes, seed=cfg.seed)
    rep: dict = {}
    e = V.hessian_identity_check(case, X, Y)
    _check(rep, "hessian_identity", e <= 1e-12, max_error=e)
    cr = V.cramer_check(case, X, Y)
    _check(rep, "det_E", cr.det_rel_error <= 1e-12, max_error=cr.det_rel_error)
    _check(rep, "cramer_reconstruction", max(cr.recon_rel_error, cr.matrix_form_rel_error) <= 1e-10,
           max_error=cr.recon_rel_error, matrix_form_error=cr.matrix_form_rel_error,
           pp2_restored_residual=cr.pp2_restored_residual,
           pp2_as_printed_residual=cr.pp2_as_printed_residual)
    ns = list(cfg.verify_ns)
    lg = [V.log_gradient_check(case, n, v_min=cfg.v_min) for n in ns]
    errs = [r.discrete_identity for r in lg]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    _check(rep, "log_gradient_identity", all(3 <= q <= 5 for q in ratios),
           ns=ns, max_error=errs, ratios=ratios)
    bumps = V.select_bumps(case)
    for form in ("phi", "v"):
        st = V.equation_residual_study(case, ns, form, bumps)
        _check(rep, f"{form}_equation_weak_residual", st.order >= 0.8,
               ns=ns, max_error=st.residuals, observed_order=st.order)
    y = V.ynb_sequence(1.0, 4.0, 1.0, 0.2)
    _check(rep, "recursion_convergence", y.verdict == "converged" and y.meets_threshold,
           threshold=y.threshold, verdict=y.verdict)
    _dump(out / "verify.json", rep)
    return all(v["status"] == "pass" for v in rep.values())


def _run_mms(cfg: RunConfig, out: Path) -> bool:
    from .verify import default_case, mms_convergence, write_order_table

    rows = mms_convergence(default_case(), cfg.mms_ns, cfg.params())
    write_order_table(out / "mms.csv", rows)
    ok = True
    for row in rows:
        if row.operator.endswith("_affine"):
            ok &= max(row.errors) <= 1e-10
        else:
            ok &= all(1.8 <= o <= 2.2 for o in row.orders)
    return bool(ok)


def _run_degiorgi(cfg: RunConfig, out: Path) -> bool:
    from .model import compute_aux, compute_v
    from .verify import de_giorgi_profile

    traj = _simulate(cfg)
    st = traj.final
    params = cfg.params()
    v = compute_v(st.m, st.p)
    aux = compute_aux(st.m, st.p, traj.s, params)
    rep = de_giorgi_profile(v, (cfg.ball_x, cfg.ball_y), cfg.ball_r, params, aux=aux, m=st.m,
                            c=cfg.degiorgi_c, n_levels=cfg.degiorgi_levels)
    rep.write_csv(out / "degiorgi.csv")
    summary = rep.summary()
    summary["t"] = st.t
    _dump(out / "degiorgi.json", summary)
    return bool(rep.y[-1] < 1e-12 and rep.bound_holds)


def duhamel_case(grid: Grid2D, alpha: float, width: float = 0.08):
    """``u*(x, t) = t exp(-|x - c|^2 / (2 width^2))`` and its forcing ``u*_t - alpha^2 Lap u*``."""
    X, Y = grid.mesh()
    cx = grid.x0 + 0.5 * (grid.nx - 1) * grid.hx
    cy = grid.y0 + 0.5 * (grid.ny - 1) * grid.hy
    r2 = (X - cx) ** 2 + (Y - cy) ** 2
    e = np.exp(-r2 / (2 * width**2))
    lap = e * (r2 / width**4 - 2 / width**2)
    return (lambda t: (e - alpha**2 * t * lap)[None]), (lambda t: t * e)


def _run_heatpot(cfg: RunConfig, out: Path) -> bool:
    from . import heatpot as HP
    from .elliptic import solve_p0

    rep: dict = {}
    ns = list(cfg.heat_ns)
    res = []
    for k, n in enumerate(ns):
        g = Grid2D.unit(n)
        f, _ = duhamel_case(g, cfg.alpha)
        hc = HP.HeatPotentialConfig(alpha=cfg.alpha, substeps=cfg.heat_substeps * 2**k,
                                    levels=cfg.heat_levels, truncation=cfg.heat_truncation,
                                    delta=cfg.delta)
        res.append(HP.heat_residual_check(f, hc, [0.02, 0.05], 0.064 / n, g))
    ratios = [a / b for a, b in zip(res, res[1:])]
    _check(rep, "duhamel_residual", all(q >= 2 for q in ratios), ns=ns, max_error=res, ratios=ratios)

    grid = cfg.grid()
    hc = HP.HeatPotentialConfig(alpha=cfg.alpha, substeps=cfg.heat_substeps, levels=cfg.heat_levels,
                                truncation=cfg.heat_truncation, delta=cfg.delta,
                                whole_plane=cfg.heat_whole_plane)
    mass = max(HP.kernel_mass_error(grid, s, hc) for s in (1e-4, 1e-3, 1e-2))
    _check(rep, "kernel_normalization", mass <= 1e-6, max_error=mass,
           tail_bound=HP.gaussian_tail_bound(hc.truncation))

    bad = 0
    for e_hat in np.logspace(-6, 0, 25):
        for c in (0.0, 0.1, 1.0, 10.0):
            for r in (1.5, 2.0, 3.0):
                fp = HP.fixed_point_g(float(e_hat), r, c)
                bad += fp.condition1 and not fp.g_bound_holds
    _check(rep, "fixed_point_g", bad == 0, violations=int(bad))

    # scaling of the potential of the forcing frozen at the initial state
    s = _make_source(cfg, grid)
    m0 = _make_m0(cfg, grid)
    p0, _, _ = solve_p0(m0, s, cfg.tol, cfg.max_iter)
    f0 = HP.forcing_field(m0, p0, cfg.params())
    frozen = np.stack([f0.comp1, f0.comp2])
    sc = HP.potential_gradient_scaling(lambda t: frozen, hc, cfg.heat_times, grid,
                                       out / "heat_scaling.csv")
    _check(rep, "gradient_scaling", _finite(sc.c_fit), c_fit=sc.c_fit, slope=sc.slope,
           bound_exponent=sc.bound_exponent)
    _dump(out / "heatpot.json", rep)
    return all(v["status"] == "pass" for v in rep.values())


_RUNNERS = {"simulate": _run_simulate, "verify": _run_verify, "mms": _run_mms,
            "degiorgi": _run_degiorgi, "heatpot": _run_heatpot}


def run(config: RunConfig, out: str | Path | None = None) -> int:
    """Execute one mode; returns the exit status."""
    out = Path(out if out is not None else config.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        ok = _RUNNERS[config.mode](config, out)
    except ConfigError as exc:
        print(f"hucai: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors become a nonzero exit with a diagnostic
        print(f"hucai: {config.mode} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    status = "pass" if ok else "fail"
    print(f"hucai {config.mode}: {status} (outputs in {out})")
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="hucai", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--mode", choices=MODES, help="override the mode set in the config")
    ap.add_argument("--out", help="output directory (overrides $HUCAI_OUT and the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.mode:
            cfg.mode = args.mode
            cfg.validate()
    except ConfigError as exc:
        print(f"hucai: {exc}", file=sys.stderr)
        return 2
    out = args.out or os.environ.get("HUCAI_OUT") or cfg.out
    return run(cfg, out)


if __name__ == "__main__":
    sys.exit(main())
