"""Monte-Carlo coverage at a test point, the way the CLI `simulate` runs it.

Usage: python demos/coverage_study.py [reps]
"""

import sys

from ppci.simulate import SimConfig, run_replications

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 100
for x0 in ([0.75, 0.75, 0.75], [0.25, 0.5, 0.5]):
    cfg = SimConfig(n=200, N=2000, test_points=[x0], reps=reps, seed=1)
    print(f"x0 = {x0}, {reps} replications, LOOCV bandwidth")
    for row in run_replications(cfg):
        print(f"  {row.method.value:>13}: coverage {row.coverage:.3f}  mean width {row.mean_width:.3f}  rmse {row.rmse:.3f}")
