"""Compare the numba and numpy SSA backends on a gene-expression ensemble.

    python benchmarks/bench_ssa.py [--n-traj 10000] [--t-end 3000] [--repeat 3]

Both backends must produce identical ensemble states; the script exits 1 if
they differ.
"""

import argparse
import sys
import time

import numpy as np

from momentpi.moments import PlantParams, gene_expression_network
from momentpi.ssa import ensemble_moments


def run(backend, net, grid, n, seed):
    t0 = time.perf_counter()
    _, states = ensemble_moments(net, [0, 0], grid, n, seed, backend=backend, return_states=True)
    return time.perf_counter() - t0, states


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-traj", type=int, default=10_000)
    p.add_argument("--t-end", type=float, default=3000.0)
    p.add_argument("--grid", type=int, default=20)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=2024)
    a = p.parse_args(argv)

    net = gene_expression_network(PlantParams(k_r=0.3, gamma_r=0.03, k_p=0.06, gamma_p=0.0066))
    grid = np.linspace(a.t_end / a.grid, a.t_end, a.grid)

    # warm-up compiles (or loads cached) kernels so timings exclude JIT
    run("numba", net, grid[:1], 4, 0)

    results = {}
    for backend in ("numba", "numpy"):
        times = []
        for _ in range(a.repeat):
            dt, states = run(backend, net, grid, a.n_traj, a.seed)
            times.append(dt)
        results[backend] = (min(times), states)
        print(f"{backend:6s} best of {a.repeat}: {min(times):8.3f} s  "
              f"({a.n_traj} trajectories, t_end={a.t_end:g})")

    same = np.array_equal(results["numba"][1], results["numpy"][1])
    print(f"speedup numba/numpy: {results['numpy'][0] / results['numba'][0]:.1f}x")
    print(f"identical states: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
