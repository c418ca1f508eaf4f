"""Compare the numba and numpy backends.

Kernel timings run both implementations in this process.  Full pressure
solves run in subprocesses with ``HUCAI_NUMBA=1`` and ``HUCAI_NUMBA=0`` since
the backend is fixed at import time.

    python benchmarks/bench_kernels.py [--sizes 64,128,256] [--repeat 20]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def coefficients(n: int):
    from hucai.verify import default_case

    case = default_case()
    grid = case.grid(n)
    m, p, s = case.fields(grid)
    return grid, m, p, s


def bench_kernels(n: int, repeat: int) -> dict:
    from hucai import kernels
    from hucai.grid import aniso_cells
    from hucai.model import conductivity

    grid, m, p, _ = coefficients(n)
    A, _ = conductivity(m)
    c11, c12, c22 = aniso_cells(A)
    f = p.values
    out_nb, out_np = np.empty(grid.shape), np.empty(grid.shape)
    args = (f, c11, c12, c22, grid.hx, grid.hy)
    kernels._apply_aniso_nb(*args, out_nb)  # compile outside the timed region
    kernels._cell_energy_nb(*args)
    row = {"n": n}
    for name, fn in (("matvec_numba", lambda: kernels._apply_aniso_nb(*args, out_nb)),
                     ("matvec_numpy", lambda: kernels._apply_aniso_np(*args, out_np)),
                     ("energy_numba", lambda: kernels._cell_energy_nb(*args)),
                     ("energy_numpy", lambda: kernels._cell_energy_np(*args))):
        row[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    row["matvec_rel_diff"] = float(np.abs(out_nb - out_np).max() / np.abs(out_np).max())
    return row


def solve_once(n: int) -> dict:
    from hucai.elliptic import assemble_pressure_system, solve_pressure
    from hucai.kernels import BACKEND
    from hucai.model import conductivity

    grid, m, _, s = coefficients(n)
    system = assemble_pressure_system(conductivity(m)[0], s)
    solve_pressure(system)  # warm-up, includes any compilation
    t = min(timeit.repeat(lambda: solve_pressure(system), number=1, repeat=3))
    sol = solve_pressure(system)
    return {"backend": BACKEND, "n": n, "seconds": t, "iters": sol.iters, "residual": sol.residual}


def bench_solve(n: int) -> dict:
    row = {"n": n}
    for flag, label in (("1", "numba"), ("0", "numpy")):
        env = dict(os.environ, HUCAI_NUMBA=flag)
        res = subprocess.run([sys.executable, __file__, "--solve-only", str(n)], env=env,
                             capture_output=True, text=True, check=True)
        out = json.loads(res.stdout)
        row[f"solve_{label}"] = out["seconds"]
        row["iters"] = out["iters"]
    return row


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sizes", default="64,128,256")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--solve-only", type=int, metavar="N", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.solve_only:
        print(json.dumps(solve_once(args.solve_only)))
        return 0
    sizes = [int(t) for t in args.sizes.split(",")]
    print(f"{'n':>5} {'matvec nb':>11} {'matvec np':>11} {'x':>6} {'energy nb':>11} "
          f"{'energy np':>11} {'x':>6} {'solve nb':>10} {'solve np':>10} {'x':>6} {'iters':>6}")
    for n in sizes:
        k = bench_kernels(n, args.repeat)
        s = bench_solve(n)
        print(f"{n:>5} {k['matvec_numba']:>11.2e} {k['matvec_numpy']:>11.2e} "
              f"{k['matvec_numpy'] / k['matvec_numba']:>6.2f} {k['energy_numba']:>11.2e} "
              f"{k['energy_numpy']:>11.2e} {k['energy_numpy'] / k['energy_numba']:>6.2f} "
              f"{s['solve_numba']:>10.3f} {s['solve_numpy']:>10.3f} "
              f"{s['solve_numpy'] / s['solve_numba']:>6.2f} {s['iters']:>6}")
        if k["matvec_rel_diff"] > 1e-12:
            print(f"backends disagree at n={n}: relative difference {k['matvec_rel_diff']:.2e}")
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
