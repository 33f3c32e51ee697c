"""
Envelope dimension from exact moments
=====================================

Build an exact envelope model with a 5-dimensional envelope in 20
dimensions, then watch both selection criteria recover it.
"""

import numpy as np

from envdim import SelectionConfig, criterion_1d, criterion_fg, gen_generic, make_rng, run_1d_algorithm

spec = gen_generic("I", p=20, u=5, rng=make_rng(0))
mp = spec.population(n=10_000)
print("floor of the objective:", round(mp.floor, 4))

##############################################################################
# The one-direction path: each step adds the direction with the best
# one-dimensional objective in the deflated coordinates.

path = run_1d_algorithm(mp, 19)
print("step values:", np.round(path.step_values[:8], 4))

one_d = criterion_1d(path, mp)
print("1D criterion picks u =", one_d.selected_u)

##############################################################################
# Full Grassmannian fits reuse the path as a warm start.

fg = criterion_fg(mp, SelectionConfig(method="fg"), path=path)
print("FG criterion picks u =", fg.selected_u)
for k in range(8):
    print(f"  k={k}  J={fg.objective_values[k]: .4f}  criterion={fg.criterion_values[k]: .4f}")
