"""Splitting a fixed budget between labels and predictions.

A small pilot run estimates both variance components; the remaining budget
is then spent where it lowers the interval width most.
"""

import numpy as np

from ppci import BudgetProblem, KernelSpec, infer_ppci, optimal_allocation, two_stage_plan
from ppci.design import allocation_variance
from ppci.simulate import gen_simulation_data

# worked example: labels cost 4, predictions 1, budget 8
a = optimal_allocation(BudgetProblem(sigma2_yf=1, sigma2_f=4, c_l=4, c_u=1, C=8))
print(f"worked example: n*={a.n_star:g}, N*={a.N_star:g}, v_min={a.v_min:g}")

C, c_l, c_u = 5000.0, 10.0, 0.1
pilot_lab, pilot_unl, _ = gen_simulation_data(n=50, N=500, seed=3)
x0 = np.array([0.5, 0.5, 0.5])
pilot = infer_ppci(KernelSpec("matern52", 0.3), pilot_lab, pilot_unl, x0)
spent = c_l * 50 + c_u * 500
plan = two_stage_plan(pilot, c_l, c_u, C - spent)
print(f"pilot variances: sigma2_yf={pilot.sigma2_yf:.4g}, sigma2_f={pilot.sigma2_f:.4g}")
print(f"remaining budget {C - spent:g} -> n={plan.n_int}, N={plan.N_int}")

# compare against spending everything on labels
only_labels = int((C - spent) // c_l)
v_plan = allocation_variance(pilot.sigma2_yf, pilot.sigma2_f, plan.n_int, plan.N_int)
v_lab = pilot.sigma2_yf / only_labels + pilot.sigma2_f / 500
print(f"planned variance {v_plan:.3g} vs labels-only spend {v_lab:.3g}")
