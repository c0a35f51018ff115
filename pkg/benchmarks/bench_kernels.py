"""Step-throughput comparison of the compiled and pure Python path kernels.

Runs the same replica batch through both backends with identical Philox
streams, checks that they land on the same trajectories, and reports steps
per second. The Python backend gets a shorter horizon so the script stays
under a minute; rates are per step either way.

Usage: python benchmarks/bench_kernels.py [--steps N] [--replicas R] ...
"""

import argparse
import math
import time

import numpy as np

from torot import kernels
from torot.drift import DriftSpec, TrigTerm
from torot.geometry import TorusGeometry, cached_modes


def run_once(x0, spec, ms, dt, steps, seed, force_python):
    x = x0.copy()
    gens = kernels.replica_generators(seed, x0.shape[0])
    const, freq, amp_c, amp_s = spec.kernel_arrays()
    t0 = time.perf_counter()
    psi = kernels.run_batch(
        x,
        spec.geometry.L,
        dt,
        steps,
        gens,
        const_drift=const,
        drift_freq=freq,
        drift_cos=amp_c,
        drift_sin=amp_s,
        kvecs=ms.kvecs,
        force_python=force_python,
    )
    return x, psi, time.perf_counter() - t0


def bench(x0, spec, ms, dt, steps, seed, repeats, force_python):
    best = math.inf
    x = psi = None
    for _ in range(repeats):
        x, psi, elapsed = run_once(x0, spec, ms, dt, steps, seed, force_python)
        best = min(best, elapsed)
    return x, psi, x0.shape[0] * steps / best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicas", type=int, default=8)
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--py-steps", type=int, default=2000,
                    help="horizon for the Python backend and the agreement check")
    ap.add_argument("--dt", type=float, default=0.02)
    ap.add_argument("--lambda-max", type=float, default=4.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    g = TorusGeometry(4, 2.0 * math.pi)
    ms = cached_modes(g, args.lambda_max)
    spec = DriftSpec(
        g,
        v_terms=(
            TrigTerm((1, 0, 0, 0), "cos", 0.3),
            TrigTerm((0, 1, 1, 0), "sin", -0.2),
        ),
    )
    rng = np.random.default_rng(args.seed)
    x0 = rng.uniform(0.0, g.L, size=(args.replicas, 4))
    print(f"{ms.n_rep} mode pairs, {args.replicas} replicas, dt = {args.dt}")

    x_p, psi_p, rate_p = bench(
        x0, spec, ms, args.dt, args.py_steps, args.seed, args.repeats, force_python=True
    )
    print(f"backend=python  {rate_p:.3e} steps/s  (best of {args.repeats}, {args.py_steps} steps)")

    if kernels.backend() != "c":
        print("compiled backend unavailable; nothing to compare")
        return

    x_c, psi_c, rate_c = bench(
        x0, spec, ms, args.dt, args.steps, args.seed, args.repeats, force_python=False
    )
    print(f"backend=c       {rate_c:.3e} steps/s  (best of {args.repeats}, {args.steps} steps)")

    x_chk, psi_chk, _ = run_once(x0, spec, ms, args.dt, args.py_steps, args.seed, False)
    dev_x = float(np.max(np.abs(x_chk - x_p)))
    dev_psi = float(np.max(np.abs(psi_chk - psi_p)))
    print(f"speedup x{rate_c / rate_p:.1f}")
    print(f"agreement over {args.py_steps} steps: max |dx| = {dev_x:.2e}, max |dpsi| = {dev_psi:.2e}")
    if dev_x > 1e-8 or dev_psi > 1e-6:
        raise SystemExit("backends disagree beyond rounding")


if __name__ == "__main__":
    main()
