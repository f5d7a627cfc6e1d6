"""Compare the numba and numpy back ends of the placement kernels.

Two measurements:

* per-kernel wall time on the term lists of a real placement subproblem,
  for a few array sizes, with both implementations called in-process;
* one full ``pgd_optimize`` call, run in a fresh interpreter per back end
  (the back end is fixed at import time by ``FCLA_DISABLE_NUMBA``).

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 3x2,4x4,8x4] [--repeat 20]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from fcla import _kernels as kern
from fcla import bcd, channel, fp, placement as plc
from fcla.scenario import SamplingParams, initial_placement, sample_scenario

KERNELS = ("quad_eval", "quad_grad", "quad_hess", "quad_bound", "lin_grad")


def build_problem(M, N, K=3, L=4, seed=0):
    s = sample_scenario(seed, SamplingParams(M=M, N=N, K=K, L=L))
    pl = initial_placement(s.config)
    ch = channel.channels(s, pl)
    sol = bcd.initialize_beams(s, ch)
    eta = fp.update_eta(ch.ir, sol, s.sigma2_ir)
    varpi = fp.update_varpi(ch.ir, sol, s.sigma2_ir, eta)
    return s, pl, sol, eta, varpi


def kernel_args(prob, geo, x):
    psi, d1, d2 = geo.derivatives(x)
    q, li = prob.obj_quad, prob.obj_lin
    qf = (q.i, q.l, q.j, q.p, q.mu, q.k0)
    return {
        "quad_eval": qf + (psi,),
        "quad_grad": qf + (psi, d1, geo.var, geo.nvar),
        "quad_hess": qf + (psi, d1, d2, geo.var, geo.nvar),
        "quad_bound": (q.i, q.l, q.j, q.p, q.mu, geo.D1, geo.D2, geo.var, geo.nvar),
        "lin_grad": (li.i, li.l, li.mu, li.k0, psi, d1, geo.var, geo.nvar),
    }


def bench_kernels(sizes, repeat):
    print(f"{'size':>6} {'terms':>8} {'kernel':>11} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>10}")
    for M, N in sizes:
        s, pl, sol, eta, varpi = build_problem(M, N)
        prob = plc.PlacementProblem(s, sol, eta, varpi)
        geo, _ = prob.geometry(pl, plc.ANGLES)
        x = plc.block_coords(pl, s.config, plc.ANGLES)
        args = kernel_args(prob, geo, x)
        for name in KERNELS:
            f_np = kern.implementation(name, "numpy")
            f_nb = kern.implementation(name, "numba")
            r_np, r_nb = f_np(*args[name]), f_nb(*args[name])  # also compiles
            diff = float(np.max(np.abs(np.asarray(r_np) - np.asarray(r_nb))) /
                         max(1.0, float(np.max(np.abs(r_np)))))
            t_np = min(timeit.repeat(lambda: f_np(*args[name]), number=1, repeat=repeat))
            t_nb = min(timeit.repeat(lambda: f_nb(*args[name]), number=1, repeat=repeat))
            print(f"{M}x{N:<4} {prob.obj_quad.size:>8} {name:>11} {1e3 * t_np:>10.3f} "
                  f"{1e3 * t_nb:>10.3f} {t_np / t_nb:>8.1f} {diff:>10.2e}")


_PGD_SNIPPET = """
import json, time, sys
sys.path.insert(0, {bench_dir!r})
from bench_kernels import build_problem
from fcla import placement as plc, _kernels
s, pl, sol, eta, varpi = build_problem({M}, {N})
plc.pgd_optimize(pl, s, sol, eta, varpi)   # warm-up (jit compile / caches)
best = float('inf')
for _ in range({repeat}):
    t = time.perf_counter()
    out, tr = plc.pgd_optimize(pl, s, sol, eta, varpi)
    best = min(best, time.perf_counter() - t)
print(json.dumps({{"backend": _kernels.BACKEND, "seconds": best, "z": list(out.z), "phi0": float(out.phi[0, 0])}}))
"""


def bench_pgd(M, N, repeat):
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, FCLA_DISABLE_NUMBA=flag)
        code = _PGD_SNIPPET.format(bench_dir=os.path.dirname(os.path.abspath(__file__)), M=M, N=N,
                                   repeat=repeat)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        rec = json.loads(out.stdout.strip().splitlines()[-1])
        results[rec["backend"]] = rec
    nb, npy = results["numba"], results["numpy"]
    same = np.allclose(nb["z"], npy["z"], rtol=0, atol=1e-12) and abs(nb["phi0"] - npy["phi0"]) < 1e-12
    print(f"pgd_optimize {M}x{N}: numpy {npy['seconds']:.4f} s, numba {nb['seconds']:.4f} s, "
          f"speedup {npy['seconds'] / nb['seconds']:.1f}, same result: {same}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="3x2,4x4,8x4", help="comma list of MxN array sizes")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--pgd-size", default="3x2")
    args = ap.parse_args(argv)
    sizes = [tuple(int(v) for v in s.split("x")) for s in args.sizes.split(",")]
    bench_kernels(sizes, args.repeat)
    M, N = (int(v) for v in args.pgd_size.split("x"))
    bench_pgd(M, N, max(3, args.repeat // 4))


if __name__ == "__main__":
    main()
