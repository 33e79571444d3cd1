"""Compare the compiled NUTS kernel with the pure-Python transition.

    python3 benchmarks/bench_kernels.py [--transitions 500] [--dims 10 100]

Both backends run the same seeded transitions from the same state, so the
table also reports the largest position difference between them.
"""

import argparse
import time

import numpy as np

from fisherhmc.hmc import Transition, available_backends
from fisherhmc.mass import DenseMass, DiagonalMass, LowRankMass
from fisherhmc.targets import BananaTarget, GaussianTarget, SpectrumRecipe, generate_spectrum_sigma


def make_mass(kind, sigma, rng):
    d = sigma.shape[0]
    if kind == "diagonal":
        return DiagonalMass(np.diag(sigma).copy())
    if kind == "dense":
        return DenseMass(sigma)
    q, _ = np.linalg.qr(rng.standard_normal((d, min(4, d))))
    return LowRankMass(np.sqrt(np.diag(sigma)), q, np.linspace(0.2, 5.0, q.shape[1]))


def run(target, mass, backend, n, eps, seed):
    rng = np.random.default_rng(seed)
    step = Transition(target, 10, backend)
    x = np.zeros(target.dim)
    logp, score = target.eval(x)
    xs = np.empty((n, target.dim))
    leap = 0
    t0 = time.perf_counter()
    for i in range(n):
        x, logp, score, st = step(mass, x, logp, score, eps, rng)
        xs[i] = x
        leap += st.n_leapfrog
    return time.perf_counter() - t0, leap, xs


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--transitions", type=int, default=500)
    p.add_argument("--dims", type=int, nargs="+", default=[10, 100])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if "compiled" not in available_backends():
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(args.seed)
    print(f"{'target':>10} {'d':>4} {'mass':>9} {'python us/leap':>15} {'compiled us/leap':>17} "
          f"{'speedup':>8} {'max |dx|':>9}")
    for d in args.dims:
        sigma = generate_spectrum_sigma(SpectrumRecipe(d=d, eigval_param=0.5, diag_scale=1.0, seed=d))
        cases = [("gaussian", GaussianTarget(np.zeros(d), sigma), sigma)]
        cases.append(("banana", BananaTarget(d, 0.05, 3.0), np.eye(d)))
        for name, target, cov in cases:
            for kind in ("diagonal", "dense", "low_rank"):
                mass = make_mass(kind, cov, rng)
                tp, lp, xp = run(target, mass, "python", args.transitions, 0.3, args.seed)
                tc, lc, xc = run(target, mass, "compiled", args.transitions, 0.3, args.seed)
                diff = float(np.max(np.abs(xp - xc)))
                print(f"{name:>10} {d:>4} {kind:>9} {1e6 * tp / lp:>15.2f} {1e6 * tc / lc:>17.2f} "
                      f"{tp / tc:>7.1f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
