"""Compiled vs numpy kernels on tank-sized inputs, plus one end-to-end solve.

    python benchmarks/bench_kernels.py [--repeat 200] [--skip-solve]

The end-to-end part runs an ELLA solve in two subprocesses, one with
``ELLADA_PURE_PYTHON=1``, so import-time kernel selection is exercised.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ellada import _kernels_py

try:
    from ellada import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _inputs(seed=0):
    from ellada.tank import OcpSpec, SubsystemDecomposition, TankModel, TrajectoryBlock

    rng = np.random.default_rng(seed)
    model, ocp = TankModel(), OcpSpec()
    d = SubsystemDecomposition()
    blk = TrajectoryBlock(model, ocp, d.own[1], d.copies[1], d.inputs[1], np.array([12.6, 4.5]))
    X = 5.0 + 5.0 * rng.random((ocp.N + 1, blk.nx))
    V = 3.0 + 0.2 * rng.random((ocp.N, 1))
    mult = rng.standard_normal(blk.nd * (ocp.N + 1))
    n = 246
    H = np.eye(n) + 0.01 * rng.standard_normal((n, n))
    dw, dh = rng.standard_normal(n), rng.standard_normal(n)
    basis = [q for q in np.linalg.qr(rng.standard_normal((n, 10)))[0].T]
    return dict(X=X, V=V, C=blk.C, G=blk.G, dt=ocp.dt, x0=X[0, : blk.nd], eps=model.eps_h, mult=mult, H=H,
                dw=dw, dh=dh, basis=basis)


def _cases(k, a):
    return {
        "smooth_sqrt": lambda: k.smooth_sqrt(a["X"], a["eps"]),
        "euler_residual": lambda: k.euler_residual(a["X"], a["V"], a["C"], a["G"], a["dt"], a["x0"], a["eps"]),
        "euler_jacobian": lambda: k.euler_jacobian(a["X"], a["V"], a["C"], a["G"], a["dt"], a["eps"]),
        "euler_hessian_diag": lambda: k.euler_hessian_diag(a["X"], a["V"], a["C"], a["mult"], a["dt"], a["eps"]),
        "sherman_morrison": lambda: k.sherman_morrison_update(a["H"].copy(), a["dw"], a["dh"], a["dw"]),
        "gram_schmidt": lambda: k.gram_schmidt(a["basis"], a["dw"]),
    }


def bench_kernels(repeat):
    a = _inputs()
    py = _cases(_kernels_py, a)
    cy = _cases(_kernels_c, a) if _kernels_c is not None else {}
    print(f"{'kernel':20s} {'numpy (us)':>12s} {'compiled (us)':>14s} {'speedup':>8s}")
    for name, fn in py.items():
        t_py = min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat * 1e6
        if name in cy:
            t_cy = min(timeit.repeat(cy[name], number=repeat, repeat=3)) / repeat * 1e6
            print(f"{name:20s} {t_py:12.1f} {t_cy:14.1f} {t_py / t_cy:8.2f}")
        else:
            print(f"{name:20s} {t_py:12.1f} {'n/a':>14s}")


_SOLVE = """
import time
from ellada import kernels
from ellada.tank import TankModel, OcpSpec, build_subsystem_ocp
from ellada.driver import run, SolverConfig
p = build_subsystem_ocp(TankModel(), OcpSpec(), (12.6, 12.4, 5.0, 4.5))
t = time.perf_counter(); r = run(p, SolverConfig(variant="ella")); t = time.perf_counter() - t
print(kernels.IMPLEMENTATION, r.inner_total, r.nlp_total, f"{t:.3f}")
"""


def bench_solve():
    print("\nend-to-end ELLA solve (tank, first sampling instant)")
    for pure in ("0", "1"):
        env = dict(os.environ, ELLADA_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", _SOLVE], env=env, capture_output=True, text=True, check=True)
        impl, inner, nlp, secs = out.stdout.split()
        print(f"  {impl:9s} inner {inner:>5s}  Newton {nlp:>5s}  {secs} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-solve", action="store_true")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if not args.skip_solve:
        bench_solve()


if __name__ == "__main__":
    main()
