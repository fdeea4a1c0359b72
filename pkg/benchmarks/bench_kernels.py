"""Numba vs numpy backend benchmark for the hot kernels.

The backend is fixed at import time by EPIWORLD_NUMBA, so this script
re-executes itself once per backend and reports wall times side by side:

    python benchmarks/bench_kernels.py --particles 10000 --steps 50

Measured workloads: batched transition steps (the particle-propagation
inner loop), one full particle-filter pass over synthetic data, and
systematic resampling.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def measure(particles: int, steps: int, repeats: int) -> dict:
    import numpy as np

    from epiworld import kernels
    from epiworld.core import Action, ModelParams, derive_stream, make_state
    from epiworld.dynamics import replicate_state, step, step_matrix
    from epiworld.filtering import PriorConfig, filter_step, init_belief
    from epiworld.observation import MisreportingRegime, observe

    params = ModelParams(regime_jump_prob=0.0, case_noise_sigma=0.1,
                         hosp_noise_sigma=0.1, survey_noise_sigma=0.05)
    action = Action.uniform(2)
    regime = MisreportingRegime.none()
    root = derive_stream(7)

    states = replicate_state(make_state(I=2e-3, hosp_lag=params.hosp_lag),
                             particles, params.hosp_lag)
    # warmup triggers jit compilation so it never lands in the timings
    step_matrix(states, action, params, root.child("warmup"))

    def time_best(fn) -> float:
        best = float("inf")
        for r in range(repeats):
            t0 = time.perf_counter()
            fn(r)
            best = min(best, time.perf_counter() - t0)
        return best

    def bench_transition(r):
        cur = states
        for k in range(steps):
            cur = step_matrix(cur, action, params, root.child("t", r, k))

    # synthetic observation sequence for the filter pass
    truth = make_state(I=2e-3, hosp_lag=params.hosp_lag)
    observations = []
    for k in range(1, steps + 1):
        truth = step(truth, action, params, root.child("truth", k))
        observations.append(observe(truth, action, regime, params,
                                    root.child("obs", k), week_index=k))

    prior = PriorConfig(i_range=(5e-4, 5e-3))

    def bench_filter(r):
        bel = init_belief(prior, particles, root.child("init", r),
                          hosp_lag=params.hosp_lag)
        for k, o in enumerate(observations, start=1):
            bel = filter_step(bel, action, o, params, regime,
                              root.child("f", r, k))

    weights = np.full(particles, 1.0 / particles)

    def bench_resample(r):
        for k in range(200):
            kernels.systematic_resample(weights, 0.5)

    return {
        "backend": kernels.active_backend(),
        "transition_s": time_best(bench_transition),
        "filter_s": time_best(bench_filter),
        "resample_s": time_best(bench_resample),
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=10000)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--single", action="store_true",
                    help="measure only the backend selected by EPIWORLD_NUMBA "
                         "and emit JSON (used by the self-exec)")
    args = ap.parse_args()

    if args.single:
        print(json.dumps(measure(args.particles, args.steps, args.repeats)))
        return 0

    rows = []
    for flag in ("1", "0"):
        env = dict(os.environ, EPIWORLD_NUMBA=flag)
        cmd = [sys.executable, os.path.abspath(__file__), "--single",
               "--particles", str(args.particles), "--steps", str(args.steps),
               "--repeats", str(args.repeats)]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True,
                             check=True)
        rows.append(json.loads(out.stdout.strip().splitlines()[-1]))

    print(f"particles={args.particles} steps={args.steps} "
          f"(best of {args.repeats})")
    header = f"{'workload':<14}" + "".join(f"{r['backend']:>12}" for r in rows)
    print(header)
    print("-" * len(header))
    for key, label in (("transition_s", "transition"),
                       ("filter_s", "filter"),
                       ("resample_s", "resample")):
        line = f"{label:<14}" + "".join(f"{r[key]:>11.4f}s" for r in rows)
        if len(rows) == 2 and rows[1][key] > 0:
            line += f"   x{rows[1][key] / rows[0][key]:.1f}"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
