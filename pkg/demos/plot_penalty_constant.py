"""
How the penalty constant moves the selected dimension
======================================================

One response-envelope data set, three penalty constants. Small constants
tend to overshoot the true dimension, large ones undershoot.
"""

from envdim import criterion_1d, gen_regression, make_rng, regression_spec, response_envelope_moments, run_1d_algorithm

rng = make_rng(3)
spec = regression_spec("linear", rng, q=3)
data = gen_regression(spec, 150, rng)
mp = response_envelope_moments(data)
print("true dimension:", spec.u)

# the path is computed once; re-penalizing is free
result = criterion_1d(run_1d_algorithm(mp, mp.dim - 1), mp)
for c in (0.5, 1.0, 3.0, 10.0, 30.0):
    print(f"C = {c:>4}: selected u = {result.with_constant(c).selected_u}")
