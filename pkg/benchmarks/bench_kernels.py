"""Compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times each kernel on representative inputs with both backends in-process,
then times one whole MLEMTRL run in a subprocess per backend (the fallback
forced with MODELTRANSFER_PURE_PYTHON=1).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from modeltransfer import _pykernels
from modeltransfer._backend import compiled
from modeltransfer.envs import cartpole_lqr, chain_mdp

RUN_SNIPPET = """
import time
from modeltransfer.experiment import RunConfig, make_task, run_one
cfg = RunConfig(environment={"kind": "chain"}, algorithm="mlemtrl", T=2000, n_tasks=1)
task = make_task(cfg, 0)
t0 = time.perf_counter()
run_one(cfg, task, 0)
print(time.perf_counter() - t0)
"""


def cases():
    rng = np.random.default_rng(0)
    chain = chain_mdp(5, 0.2, 0.95)
    T, R = np.ascontiguousarray(chain.transitions), np.ascontiguousarray(chain.rewards)
    big = rng.dirichlet(np.ones(50), size=(50, 4))
    Rb = rng.random((50, 4))
    # five stacked sources over 1000 (s, a, s') cells
    P = np.ascontiguousarray(np.stack([rng.dirichlet(np.ones(10), size=100).ravel() for _ in range(5)], axis=1))
    counts = rng.integers(0, 5, size=P.shape[0]).astype(float)
    cp = cartpole_lqr()
    F, B, Q, Rc = (np.ascontiguousarray(x) for x in (cp.F, cp.B, cp.cost_state, cp.cost_action))
    v = rng.standard_normal(10)
    cdf = np.cumsum(rng.dirichlet(np.ones(20)))
    return {
        "project_simplex (n=10)": lambda k: k.project_simplex(v),
        "mixture_loglik_grad (1000 cells, m=5)": lambda k: k.mixture_loglik_grad(P, counts, np.full(5, 0.2), 1e-12,
                                                                                 np.empty(5)),
        "mixture_ascent (1000 cells, m=5)": lambda k: k.mixture_ascent(P, counts, np.full(5, 0.2), 1e-12, 1e-8, 500,
                                                                       1e-4, 0.5, 1e-30),
        "value_iteration (chain S=5)": lambda k: k.value_iteration(T, R, 0.95, 1e-8, 100_000, np.zeros(5)),
        "value_iteration (S=50, A=4)": lambda k: k.value_iteration(big, Rb, 0.9, 1e-8, 100_000, np.zeros(50)),
        "riccati_iterate (cart-pole)": lambda k: k.riccati_iterate(F, B, Q, Rc, Q.copy(), 1e-9, 10_000),
        "sample_categorical (20 outcomes)": lambda k: k.sample_categorical(cdf, 0.37),
    }


def time_call(fn, repeat):
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.Timer(fn).repeat(repeat, n)) / n


def whole_run(pure: bool) -> float:
    env = dict(os.environ, MODELTRANSFER_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", RUN_SNIPPET], capture_output=True, text=True, env=env, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':42s} {'cython':>12s} {'numpy':>12s} {'speedup':>8s}")
    for name, fn in cases().items():
        tc = time_call(lambda: fn(compiled), args.repeat)
        tp = time_call(lambda: fn(_pykernels), args.repeat)
        print(f"{name:42s} {tc * 1e6:10.1f}us {tp * 1e6:10.1f}us {tp / tc:7.1f}x")
    tc, tp = whole_run(False), whole_run(True)
    print(f"{'whole MLEMTRL run (chain, T=2000)':42s} {tc:11.2f}s {tp:11.2f}s {tp / tc:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
