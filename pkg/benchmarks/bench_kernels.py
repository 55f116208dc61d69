"""Compiled versus pure-numpy kernels.

Runs the same workloads in two subprocesses, one with
``LOGMORPH_DISABLE_NUMBA=1``, checks that both paths agree and prints the
timings.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm up (JIT compile on the numba path)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def worker(repeat):
    from logmorph import NUMBA_ENABLED
    from logmorph.assembly import FESystem
    from logmorph.flow import FlowSpec, build_flow
    from logmorph.mesh import Mesh, structured_square
    from logmorph.morphology import KinematicsSample, ModelParams
    from logmorph.solver import PointLogMorph, SolverConfig, integrate
    from logmorph.spectral import eig_sym, kernel_K, l_alpha2
    from logmorph.stabilization import StabConfig
    from logmorph.tensors import SymTensor

    rng = np.random.default_rng(0)
    A = rng.normal(size=(200, 3, 3))
    P = 0.5 * (A + A.transpose(0, 2, 1))
    R = rng.normal(size=(200, 3, 3))
    R = R + R.transpose(0, 2, 1)

    def kernels():
        acc = 0.0
        for k in range(len(P)):
            dec = eig_sym(SymTensor.from_matrix(P[k]))
            r = SymTensor.from_matrix(R[k])
            acc += kernel_K(dec, r).matrix().sum() + l_alpha2(dec, r, r).matrix().sum()
        return acc

    nodes, elems = structured_square(8)
    sys_ = FESystem(Mesh(nodes, elems), build_flow(FlowSpec("simple_shear", shear_rate=5.0)), ModelParams(dim=2),
                    StabConfig(scheme="vms"))
    X = rng.normal(size=sys_.ndof) * 0.3

    def assembly():
        return float(np.linalg.norm(sys_.assemble(X, -X, 1.5, 0.01).residual))

    p = ModelParams(dim=3)
    prob = PointLogMorph(KinematicsSample.simple_shear(100.0, 3), p)

    def point():
        x, _, _ = integrate(prob, np.zeros(6), SolverConfig(dt=0.01, t_end=0.2))
        return float(np.linalg.norm(x))

    res = {"numba": NUMBA_ENABLED}
    for name, fn in (("spectral kernels x200", kernels), ("VMS assembly 8x8", assembly),
                     ("0D BDF2 20 steps", point)):
        t, out = _best(fn, repeat)
        res[name] = {"seconds": t, "value": out}
    print(json.dumps(res))


def run(disable, repeat):
    env = dict(os.environ)
    src = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "src")
    env["PYTHONPATH"] = os.pathsep.join([src, env.get("PYTHONPATH", "")])
    env["LOGMORPH_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat)],
                         env=env, check=True, capture_output=True, text=True).stdout
    return json.loads(out.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat)
        return
    jit, ref = run(False, args.repeat), run(True, args.repeat)
    assert jit["numba"] and not ref["numba"]
    print(f"{'workload':24s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'rel diff':>9s}")
    for name in (k for k in jit if k != "numba"):
        a, b = jit[name], ref[name]
        diff = abs(a["value"] - b["value"]) / max(abs(b["value"]), 1e-300)
        print(f"{name:24s} {a['seconds']:10.4f} {b['seconds']:10.4f} {b['seconds'] / a['seconds']:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
