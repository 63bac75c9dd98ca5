"""Conditional mean at one test point: PPCI next to its two baselines.

Run: python demos/localized_mean.py
"""

import numpy as np

from ppci import KernelSpec, infer_global_ppi, infer_labeled_only, infer_ppci
from ppci.simulate import eta, gen_simulation_data, loocv_bandwidth

x0 = np.array([0.25, 0.5, 0.5])
lab, unl, _ = gen_simulation_data(n=200, N=2000, seed=11)

# bandwidth from a separate pilot sample, as a practitioner would
pilot, _, _ = gen_simulation_data(n=200, N=1, seed=12)
h = loocv_bandwidth(pilot)
kernel = KernelSpec("matern52", h)
print(f"LOOCV bandwidth: {h:.3f}")
print(f"true conditional mean eta(x0) = {eta([x0])[0]:.3f}\n")

results = [
    infer_ppci(kernel, lab, unl, x0, seed=0),
    infer_labeled_only(kernel, lab, unl.covariates, x0, seed=0),
    infer_global_ppi(lab, unl),
]
for r in results:
    print(f"{r.method.value:>13}: theta_hat {r.theta_hat:+.3f}  95% CI [{r.ci_lo:+.3f}, {r.ci_hi:+.3f}]  width {r.width:.3f}")

pp = results[0]
print(f"\nselected lambdas per fold: {pp.lambda_fold1:.3g}, {pp.lambda_fold2:.3g}")
print(f"sigma2_yf = {pp.sigma2_yf:.4g} vs labeled-only sigma2 = {results[1].sigma2_yf:.4g}")
# global PPI estimates the marginal mean, not the value at x0
