"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times each kernel on rollout-sized inputs, then a short end-to-end rollout
collection with each backend (the backend is chosen per subprocess through
PPOHER_PURE_PYTHON).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ppoher import _pure

try:
    from ppoher import _core
except ImportError:
    _core = None

ROLLOUT_SNIPPET = """
import time, numpy as np
from ppoher import kernels
from ppoher.env import EnvConfig, PredatorPreyEnv
from ppoher.nn import GaussianPolicy, ValueNet
from ppoher.ppo import PpoConfig, collect_rollout
cfg = EnvConfig(prey_policy="repel")
rng = np.random.default_rng(0)
pol, vn = GaussianPolicy(cfg.obs_dim, cfg.dims, rng=rng), ValueNet(cfg.obs_dim, rng=rng)
env = PredatorPreyEnv(cfg, np.random.default_rng(1))
collect_rollout(pol, vn, env, PpoConfig(n_steps=256), rng)
t = time.perf_counter()
buf = collect_rollout(pol, vn, env, PpoConfig(n_steps=4096), rng)
dt = time.perf_counter() - t
print(kernels.BACKEND, buf.n_env_steps / dt)
"""


def kernel_cases(rng):
    sizes = [15, 64, 64, 3]
    ws = [np.ascontiguousarray(rng.normal(size=(o, i))) for i, o in zip(sizes[:-1], sizes[1:])]
    bs = [rng.normal(size=o) for o in sizes[1:]]
    x = rng.normal(size=15)
    pos, delta = rng.uniform(0, 10, 3), rng.normal(size=3)
    mean, log_std, act = rng.normal(size=3), np.zeros(3), rng.normal(size=3)
    r, v = rng.normal(size=20), rng.normal(size=20)
    return {
        "mlp_forward 15-64-64-3": lambda m: m.mlp_forward(ws, bs, x),
        "move_clamped D=3": lambda m: m.move_clamped(pos.copy(), delta, 10.0, 1.0),
        "distance D=3": lambda m: m.distance(pos, delta),
        "gaussian_log_prob D=3": lambda m: m.gaussian_log_prob(mean, log_std, act),
        "gae_episode T=20": lambda m: m.gae_episode(r, v, 0.5, True, 0.99, 0.95),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20000)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_pure), number=args.repeat, repeat=3)) / args.repeat * 1e6
        if _core is None:
            print(f"{name:28s} {t_py:10.2f} {'n/a':>10s}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(_core), number=args.repeat, repeat=3)) / args.repeat * 1e6
        print(f"{name:28s} {t_py:10.2f} {t_cy:10.2f} {t_py / t_cy:7.1f}x")

    print("\nend-to-end rollout collection (env steps per second)")
    for pure in ("1", "0"):
        env = dict(os.environ, PPOHER_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", ROLLOUT_SNIPPET], env=env,
                             capture_output=True, text=True, check=True)
        backend, rate = out.stdout.split()
        print(f"  {backend:8s} {float(rate):10.0f}")


if __name__ == "__main__":
    main()
