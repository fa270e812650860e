"""Benchmark the hot kernels on both acceleration lanes.

Runs itself twice in subprocesses (compiled lane and MOGHS_DISABLE_NUMBA=1)
and prints a side-by-side table of the planar-dynamics substep, the MPPI
rollout batch, and the pooled readout kernels.

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def measure(repeats: int) -> dict:
    from moghs import kernels
    from moghs.accel import NUMBA_ENABLED
    from moghs.mppi import MppiConfig, RolloutReward, mppi_plan
    from moghs.physics import SimConfig, chain_body, rest_state

    sim = SimConfig()
    body = chain_body(
        [0.15, 0.12, 0.12, 0.12, 0.12], 0.02,
        attach_angles=[-0.35, -0.35, -0.35, -0.35],
        torque_limits=[4.0] * 4, root_pose=(0.0, 0.4, 0.0),
    )
    state = rest_state(body)
    torques = np.zeros((1, body.n_joints))
    args = (
        sim.dt, sim.gravity, sim.contact_stiffness, sim.contact_damping,
        sim.friction_mu, sim.friction_vband, sim.solver_iters, sim.baumgarte,
    )

    def bench(fn, *, steps: int) -> float:
        fn()  # warm up (JIT compile on the accelerated lane)
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, (time.perf_counter() - t0) / steps)
        return best

    def run_substeps():
        pos = state.pos.copy()
        vel = state.vel.copy()
        for _ in range(2000):
            kernels.substep(pos, vel, *body.kernel_args(), torques[0], *args)

    cfg = MppiConfig(horizon=16, samples=32)

    def run_mppi():
        mppi_plan(body, state, RolloutReward.flat(), cfg, np.random.default_rng(0), sim=sim)

    rng = np.random.default_rng(1)
    h = rng.normal(size=(2000, 64))
    sizes = np.full(250, 8, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    d_mean = rng.normal(size=(250, 64))
    d_max = rng.normal(size=(250, 64))

    def run_pool():
        for _ in range(50):
            mean, mx = kernels.seg_pool_forward(h, starts, sizes)
            kernels.seg_pool_backward(h, mx, d_mean, d_max, starts, sizes)

    rollout_steps = cfg.samples * cfg.horizon * cfg.substeps
    return {
        "lane": "numba" if NUMBA_ENABLED else "numpy",
        "substep_us": bench(run_substeps, steps=2000) * 1e6,
        "mppi_substep_us": bench(run_mppi, steps=rollout_steps) * 1e6,
        "pool_pass_us": bench(run_pool, steps=50) * 1e6,
    }


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--lane-only", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.lane_only:
        print(json.dumps(measure(args.repeats)))
        return 0

    rows = []
    for disable in ("0", "1"):
        env = dict(os.environ, MOGHS_DISABLE_NUMBA=disable)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--lane-only",
             "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True, check=True,
        )
        rows.append(json.loads(out.stdout.strip().splitlines()[-1]))

    print(f"{'kernel':<28}{rows[0]['lane']:>14}{rows[1]['lane']:>14}{'speedup':>10}")
    for key, label in [
        ("substep_us", "dynamics substep (us)"),
        ("mppi_substep_us", "mppi rollout substep (us)"),
        ("pool_pass_us", "pooled readout pass (us)"),
    ]:
        a, b = rows[0][key], rows[1][key]
        print(f"{label:<28}{a:>14.2f}{b:>14.2f}{b / a:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
