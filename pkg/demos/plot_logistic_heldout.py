"""
Held-out error along the envelope dimension
===========================================

Fit a logistic envelope model for every dimension and score each fit on a
held-out split. The error curve drops sharply until the true dimension.
"""

import numpy as np

from envdim import gen_regression, glm_envelope_moments, make_rng, scenario_spec, select_dimension
from envdim.cli import heldout_error

spec = scenario_spec("T3", "logistic", 0)
curves = []
for seed in range(20):
    data = gen_regression(spec, 300, make_rng(seed, 88))
    err = heldout_error("glm", data, range(1, 11), 0.3, seed)
    curves.append([err[k] for k in range(1, 11)])

mean = np.mean(curves, axis=0)
for k, e in enumerate(mean, start=1):
    print(f"k={k:2d}  held-out misclassification {e:.3f}  " + "#" * int(60 * e))

##############################################################################
# The criterion itself, on the last data set.

res, fit = select_dimension(glm_envelope_moments(data))
print("selected u =", res.selected_u, "(true", spec.u, ")")
