"""The L-curve behind the regularization choice, on a standard-normal toy.

Writes lcurve_toy.csv (one row per grid value) to the working directory.
"""

import numpy as np

from ppci import KernelSpec, LambdaGrid, gram_matrix, kernel_vector
from ppci.weights import lcurve_points, select_lambda_lcurve, spectral_precompute

rng = np.random.default_rng(0)
m, dim = 2000, 10
x = rng.standard_normal((m, dim))
x0 = rng.standard_normal(dim)
kernel = KernelSpec("gaussian", 0.3)

# one eigendecomposition serves every grid value
cache = spectral_precompute(gram_matrix(kernel, x), kernel_vector(kernel, x, x0))
lam, trace = select_lambda_lcurve(lcurve_points(cache, LambdaGrid().values(m), m))

dist = trace.chord_distances()
for k in range(0, len(trace.lambdas), 7):
    mark = "  <- corner" if k == trace.selected_index else ""
    print(f"lambda {trace.lambdas[k]:.2e}  log residual {trace.log_residual[k]:8.3f}  log var {trace.log_varproxy[k]:8.3f}  dist {dist[k]:.3f}{mark}")
print(f"\nselected lambda {lam:.3e} at index {trace.selected_index} of {len(trace.lambdas)}")
trace.to_csv("lcurve_toy.csv")
