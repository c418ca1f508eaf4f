"""Time integration of the conductance equation coupled to the pressure solve.

One IMEX Euler step:

    (I - dt alpha^2 Lap_h) m^{n+1} = m^n + dt (beta^2 (m.grad p) grad p - |m|^{2(gamma-1)} m)^n

with ``m = 0`` on the boundary, followed by the pressure solve for
``m^{n+1}``.  The implicit solve is diagonal in the discrete sine basis.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.fft import dstn, idstn

from . import kernels
from .elliptic import assemble_pressure_system, solve_pressure
from .grid import Grid2D, ScalarField, VectorField2, gradient, jacobian, write_field
from .model import Params, State, conductivity, forcing_term, reaction_term

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """A step produced non-finite values or the implicit solve failed.

    ``trajectory`` holds everything computed before the failure.
    """

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class MonitorRecord:
    t: float
    sup_grad_p: float
    sup_grad_m: float
    sup_v: float
    l2_m: float
    l2_grad_m: float
    l2gamma_m: float
    energy5_lhs: float
    energy5_rhs: float
    energy5_rel_residual: float
    energy6_lhs: float
    energy6_rhs: float
    energy6_rel_residual: float
    cg_iters: int


MONITOR_COLUMNS = [f.name for f in fields(MonitorRecord)]


@dataclass
class EnergyTerms:
    """Per-time integrands of the two energy identities (discrete spatial integrals)."""

    half_m2: float      # (1/2) int |m|^2
    grad_m2: float      # int |grad m|^2
    mgp2: float         # int (m . grad p)^2
    gp2: float          # int |grad p|^2
    m2g: float          # int |m|^{2 gamma}
    sp: float           # int s p
    dtm2: float = 0.0   # int |d_t m|^2 (backward difference, 0 at t = 0)


@dataclass
class Trajectory:
    grid: Grid2D
    params: Params
    dt: float
    s: ScalarField
    times: list[float] = field(default_factory=list)
    records: list[MonitorRecord] = field(default_factory=list)
    energies: list[EnergyTerms] = field(default_factory=list)
    snapshots: list[State] = field(default_factory=list)

    @property
    def initial(self) -> State:
        return self.snapshots[0]

    @property
    def final(self) -> State:
        return self.snapshots[-1]

    def index_of(self, tau: float) -> int:
        times = np.asarray(self.times)
        if len(times) == 0 or tau < -1e-12 or tau > times[-1] + 1e-9 * max(1.0, times[-1]):
            raise ValueError(f"tau={tau} outside trajectory [0, {times[-1] if len(times) else 0}]")
        return int(np.argmin(np.abs(times - tau)))

    def write_monitor_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(MONITOR_COLUMNS)
            for rec in self.records:
                wr.writerow([repr(v) if isinstance(v, float) else v for v in asdict(rec).values()])

    def write_snapshots(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for k, st in enumerate(self.snapshots):
            path = directory / f"state_{k:05d}.csv"
            write_field(path, self.grid, {"m1": st.m.comp1, "m2": st.m.comp2, "p": st.p.values})
            out.append(path)
        return out


def read_monitor_csv(path: str | Path) -> list[MonitorRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != MONITOR_COLUMNS:
        raise ValueError(f"{path}: unexpected monitor columns {rows[0]}")
    out = []
    for row in rows[1:]:
        vals = {k: (int(v) if k == "cg_iters" else float(v)) for k, v in zip(MONITOR_COLUMNS, row)}
        out.append(MonitorRecord(**vals))
    return out


class ImplicitDiffusion:
    """Solver for ``(I - dt alpha^2 Lap_h) u = f`` with zero Dirichlet data."""

    def __init__(self, grid: Grid2D, dt: float, alpha: float):
        kx = np.arange(1, grid.nx - 1)
        ky = np.arange(1, grid.ny - 1)
        lx = 4.0 / grid.hx**2 * np.sin(0.5 * np.pi * kx / (grid.nx - 1)) ** 2
        ly = 4.0 / grid.hy**2 * np.sin(0.5 * np.pi * ky / (grid.ny - 1)) ** 2
        self.grid = grid
        self.symbol = 1.0 + dt * alpha**2 * (lx[:, None] + ly[None, :])

    def solve(self, f: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        out[1:-1, 1:-1] = idstn(dstn(f[1:-1, 1:-1], type=1) / self.symbol, type=1)
        return out


class ConductanceStepper:
    """Reusable IMEX stepper; the sine-transform factorization is built once."""

    def __init__(self, grid: Grid2D, s: ScalarField, params: Params, dt: float,
                 tol: float = 1e-10, max_iter: int = 20000):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.grid, self.s, self.params, self.dt = grid, s, params, dt
        self.tol, self.max_iter = tol, max_iter
        self.heat = ImplicitDiffusion(grid, dt, params.alpha)
        self.last_iters = 0
        self.last_system = None

    def pressure(self, m: VectorField2, guess: np.ndarray | None = None):
        A, _ = conductivity(m)
        sys_ = assemble_pressure_system(A, self.s, self.tol, self.max_iter)
        sol = solve_pressure(sys_, guess)
        self.last_iters = sol.iters
        self.last_system = sys_
        return sol.p

    def rate(self, m: VectorField2, p: ScalarField) -> VectorField2:
        """Explicit part ``forcing - reaction``."""
        f = forcing_term(m, p, self.params)
        r = reaction_term(m, self.params)
        return VectorField2(m.grid, f.comp1 - r.comp1, f.comp2 - r.comp2)

    def step(self, state: State) -> State:
        dt = self.dt
        F = self.rate(state.m, state.p)
        new = []
        for mc, fc in ((state.m.comp1, F.comp1), (state.m.comp2, F.comp2)):
            rhs = mc + dt * fc
            u = self.heat.solve(rhs)
            if not np.all(np.isfinite(u)):
                raise SimulationError(f"non-finite conductance at t={state.t + dt:.6g}; try a smaller dt")
            new.append(u)
        m = VectorField2(self.grid, new[0], new[1])
        p = self.pressure(m, state.p.values)
        return State(m, p, state.t + dt)


def step_conductance(state: State, s: ScalarField, params: Params, dt: float,
                     tol: float = 1e-10) -> State:
    """One coupled step (IMEX update of m, then pressure solve)."""
    return ConductanceStepper(state.grid, s, params, dt, tol).step(state)


# ---------------------------------------------------------------------------
# monitors
# ---------------------------------------------------------------------------


def energy_terms(state: State, s: ScalarField, params: Params, system=None) -> EnergyTerms:
    g = state.grid
    m, p = state.m, state.p
    w = g.weights()
    if system is None:
        A, _ = conductivity(m)
        system = assemble_pressure_system(A, s)
    gp2, mgp2 = system.energy(p.values)
    mm = m.comp1**2 + m.comp2**2
    return EnergyTerms(
        half_m2=0.5 * float(np.sum(w * mm)),
        grad_m2=kernels.face_energy(m.comp1, g.hx, g.hy) + kernels.face_energy(m.comp2, g.hx, g.hy),
        mgp2=mgp2,
        gp2=gp2,
        m2g=float(np.sum(w * mm**params.gamma)),
        sp=float(np.sum(w * s.values * p.values)),
    )


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def _trapz(vals: np.ndarray, times: np.ndarray) -> float:
    if len(vals) < 2:
        return 0.0
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(times)))


def _identity5(energies: list[EnergyTerms], times, params: Params) -> tuple[float, float]:
    a2, b2 = params.alpha**2, params.beta**2
    t = np.asarray(times)
    col = lambda name: np.array([getattr(e, name) for e in energies])  # noqa: E731
    lhs = (energies[-1].half_m2 + a2 * _trapz(col("grad_m2"), t) + b2 * _trapz(col("mgp2"), t)
           + _trapz(col("m2g"), t) + 2 * b2 * _trapz(col("gp2"), t))
    rhs = energies[0].half_m2 + 2 * b2 * _trapz(col("sp"), t)
    return lhs, rhs


def _identity6(energies: list[EnergyTerms], times, params: Params) -> tuple[float, float]:
    a2, b2, gm = params.alpha**2, params.beta**2, params.gamma
    t = np.asarray(times)

    def state_part(e: EnergyTerms) -> float:
        return 0.5 * a2 * e.grad_m2 + 0.5 * b2 * e.mgp2 + 0.5 * b2 * e.gp2 + e.m2g / (2 * gm)

    dtm = float(np.sum([e.dtm2 for e in energies[1:]] * np.diff(t))) if len(t) > 1 else 0.0
    return dtm + state_part(energies[-1]), state_part(energies[0])


def _record(state: State, params: Params, energies, times, cg_iters: int) -> MonitorRecord:
    g = state.grid
    gp = gradient(state.p)
    J = jacobian(state.m)
    mg = state.m.dot(gp)
    gpn2 = gp.comp1**2 + gp.comp2**2
    v = gpn2 + mg * mg
    gm2 = J.a11**2 + J.a12**2 + J.a21**2 + J.a22**2
    w = g.weights()
    mm = state.m.comp1**2 + state.m.comp2**2
    l5, r5 = _identity5(energies, times, params)
    l6, r6 = _identity6(energies, times, params)
    return MonitorRecord(
        t=float(state.t),
        sup_grad_p=float(np.sqrt(gpn2.max())),
        sup_grad_m=float(np.sqrt(gm2.max())),
        sup_v=float(v.max()),
        l2_m=float(np.sqrt(np.sum(w * mm))),
        l2_grad_m=float(np.sqrt(np.sum(w * gm2))),
        l2gamma_m=float(np.sum(w * mm**params.gamma) ** (1.0 / (2 * params.gamma))),
        energy5_lhs=l5, energy5_rhs=r5, energy5_rel_residual=_rel(l5, r5),
        energy6_lhs=l6, energy6_rhs=r6, energy6_rel_residual=_rel(l6, r6),
        cg_iters=int(cg_iters),
    )


@dataclass
class SimulationConfig:
    grid: Grid2D
    params: Params
    s: ScalarField
    m0: VectorField2
    T: float
    dt: float | None = None
    snapshot_stride: int = 1
    tol: float = 1e-10
    max_iter: int = 20000

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.dt is None:
            self.dt = 0.25 * min(self.grid.hx, self.grid.hy)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")


def run_simulation(cfg: SimulationConfig) -> Trajectory:
    """Solve for p0, then step to ``T``, recording monitors every step."""
    from .elliptic import solve_p0

    params = cfg.params
    p0, _, sol0 = solve_p0(cfg.m0, cfg.s, cfg.tol, cfg.max_iter)
    state = State(cfg.m0, p0, 0.0)
    traj = Trajectory(cfg.grid, params, cfg.dt, cfg.s)
    stepper = ConductanceStepper(cfg.grid, cfg.s, params, cfg.dt, cfg.tol, cfg.max_iter)
    A0, _ = conductivity(cfg.m0)
    sys0 = assemble_pressure_system(A0, cfg.s, cfg.tol)
    traj.times.append(0.0)
    traj.energies.append(energy_terms(state, cfg.s, params, sys0))
    traj.records.append(_record(state, params, traj.energies, traj.times, sol0.iters))
    traj.snapshots.append(state)

    n_steps = int(round(cfg.T / cfg.dt))
    if n_steps and abs(n_steps * cfg.dt - cfg.T) > 1e-9 * max(cfg.T, 1.0):
        log.warning("T=%g is not a multiple of dt=%g; stopping at %g", cfg.T, cfg.dt, n_steps * cfg.dt)
    for n in range(1, n_steps + 1):
        try:
            new = stepper.step(state)
        except Exception as exc:
            if not isinstance(exc, SimulationError):
                exc = SimulationError(f"step {n} failed: {exc}")
            exc.trajectory = traj
            raise exc
        new = State(new.m, new.p, n * cfg.dt)
        e = energy_terms(new, cfg.s, params, stepper.last_system)
        dm1 = (new.m.comp1 - state.m.comp1) / cfg.dt
        dm2 = (new.m.comp2 - state.m.comp2) / cfg.dt
        e.dtm2 = float(np.sum(cfg.grid.weights() * (dm1**2 + dm2**2)))
        traj.times.append(new.t)
        traj.energies.append(e)
        traj.records.append(_record(new, params, traj.energies, traj.times, stepper.last_iters))
        if n % cfg.snapshot_stride == 0 or n == n_steps:
            traj.snapshots.append(new)
        state = new
    return traj


@dataclass
class IdentityReport:
    tau: float
    lhs: float
    rhs: float
    rel_residual: float


def energy_identity_5(traj: Trajectory, tau: float | None = None) -> IdentityReport:
    """Balance of the L^2 energy of m against the work of the source over [0, tau]."""
    k = len(traj.times) - 1 if tau is None else traj.index_of(tau)
    lhs, rhs = _identity5(traj.energies[:k + 1], traj.times[:k + 1], traj.params)
    return IdentityReport(traj.times[k], lhs, rhs, _rel(lhs, rhs))


def energy_identity_6(traj: Trajectory, tau: float | None = None) -> IdentityReport:
    """Balance of int |d_t m|^2 against the decrease of the Dirichlet-type energy."""
    k = len(traj.times) - 1 if tau is None else traj.index_of(tau)
    lhs, rhs = _identity6(traj.energies[:k + 1], traj.times[:k + 1], traj.params)
    return IdentityReport(traj.times[k], lhs, rhs, _rel(lhs, rhs))


@dataclass
class BoundReport:
    times: np.ndarray
    sup_v: np.ndarray
    sup_grad_m: np.ndarray
    sup_grad_p: np.ndarray
    c_v: float     # smallest c with sup_v <= c (sup_grad_m^{2r} + 1) at every time
    c_m: float     # smallest c with ||grad m||_{inf,[0,t]} <= c t^{-1+delta/2} (||grad p||^2_{inf,[0,t]} + 1) + c

    def as_dict(self) -> dict:
        return {"c_v": self.c_v, "c_m": self.c_m,
                "final_sup_v": float(self.sup_v[-1]) if len(self.sup_v) else 0.0,
                "final_sup_grad_m": float(self.sup_grad_m[-1]) if len(self.sup_grad_m) else 0.0,
                "final_sup_grad_p": float(self.sup_grad_p[-1]) if len(self.sup_grad_p) else 0.0}


def gradient_bound_monitor(records: list[MonitorRecord] | Trajectory, params: Params) -> BoundReport:
    if isinstance(records, Trajectory):
        records = records.records
    t = np.array([r.t for r in records])
    sv = np.array([r.sup_v for r in records])
    sm = np.array([r.sup_grad_m for r in records])
    sp = np.array([r.sup_grad_p for r in records])
    c_v = float(np.max(sv / (sm ** (2 * params.r_exp) + 1.0))) if len(t) else 0.0
    run_m = np.maximum.accumulate(sm)
    run_p = np.maximum.accumulate(sp)
    expo = -1.0 + params.delta_exp / 2.0
    c_m = float(np.max(run_m / (t**expo * (run_p**2 + 1.0) + 1.0))) if len(t) else 0.0
    return BoundReport(t, sv, sm, sp, c_v, c_m)


def write_summary(path: str | Path, traj: Trajectory) -> dict:
    """Run summary JSON: fitted bound constants and final identity residuals."""
    e5 = energy_identity_5(traj)
    e6 = energy_identity_6(traj)
    bounds = gradient_bound_monitor(traj, traj.params)
    last = traj.records[-1]
    summary = {
        "grid": {"nx": traj.grid.nx, "ny": traj.grid.ny, "hx": traj.grid.hx, "hy": traj.grid.hy},
        "params": asdict(traj.params),
        "dt": traj.dt,
        "T": traj.times[-1],
        "steps": len(traj.times) - 1,
        "energy5": asdict(e5),
        "energy6": asdict(e6),
        "bounds": bounds.as_dict(),
        "final": asdict(last),
        "max_sup_grad_p": max(r.sup_grad_p for r in traj.records),
        "max_sup_grad_m": max(r.sup_grad_m for r in traj.records),
    }
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
