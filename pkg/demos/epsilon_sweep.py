"""Test RMSE of private Frank-Wolfe and its baselines as the privacy budget grows.

Builds a synthetic rank-1 rating matrix, holds out a test sample, and prints
the median test RMSE over a few seeds for each algorithm and epsilon.

    python demos/epsilon_sweep.py
"""

import statistics
from collections import defaultdict

from dpmc.eval import ExperimentSpec, run_sweep

spec = ExperimentSpec(
    synthetic_m=1000,
    synthetic_n=40,
    xi=10,
    test_frac=0.05,
    algorithms=["zero_baseline", "fw_private", "pgd_private", "fw_nonprivate"],
    epsilons=[0.1, 1.0, 5.0],
    seeds=[1, 2, 3, 4, 5],
    L=1.0,
    T=1,
    k_scale=2.0,
    wallclock=False,
)

# one shared T and k, tuned for fw_private; the non-private FW step overshoots at T=1
rmse = defaultdict(list)
for row in run_sweep(spec):
    if row.error:
        print(f"{row.algo} eps={row.epsilon} seed={row.seed}: {row.error}")
        continue
    rmse[row.algo, row.epsilon].append(row.test_rmse)

print(f"{'algorithm':<16}" + "".join(f"eps={e:<8g}" for e in spec.epsilons))
for algo in spec.algorithms:
    cells = [statistics.median(rmse[algo, e]) for e in spec.epsilons]
    print(f"{algo:<16}" + "".join(f"{c:<12.4f}" for c in cells))
