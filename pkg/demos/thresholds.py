"""Growing networks, stochastic dominance and the diffusion threshold.

Under preferential attachment with vertex-step probability p, a smaller p
produces heavier tails.  We evolve one starting distribution for several p,
confirm the first-order dominance ordering with exact rational arithmetic,
and watch the closed-form diffusion threshold rise with p.  The mean-field
bisection threshold is shown alongside for one k.

Run: python demos/thresholds.py
"""

# %%
from fractions import Fraction

import numpy as np

from sisfilter.evolution import (
    ExactDistribution,
    diffusion_threshold_closed_form,
    diffusion_threshold_empirical,
    dominance_along_path_exact,
    evolve_distribution,
)
from sisfilter.sis import TransitionKernel

rho0 = ExactDistribution.from_weights([40, 20, 10, 10, 5, 5, 4, 3, 2, 1])
grid = ["0", "1/4", "1/2", "3/4", "1"]

# %% exact dominance between neighbouring grid values over k = 20..400
for lo, hi in zip(grid, grid[1:]):
    holds, k = dominance_along_path_exact(rho0, Fraction(lo), Fraction(hi), 20, 400)
    print(f"rho_k({lo}) dominates rho_k({hi}) for every k: {holds}")

# %% thresholds at k = 400 with recovery 1 and P21(l, a) = 0.3 for a >= 1
L = len(rho0.numerators)
p21 = np.zeros((L + 1, L + 1))
for l in range(1, L + 1):
    p21[l, 1 : l + 1] = 0.3
kernel = TransitionKernel(np.ones((L + 1, L + 1)), p21, scale_recovery=False)

print(f"{'p':>5}{'mean degree':>14}{'closed form':>14}{'bisection':>12}")
for p in grid:
    rho = evolve_distribution(rho0.probs, float(Fraction(p)), 20, 400)[-1]
    cf = diffusion_threshold_closed_form(rho, kernel)
    emp = diffusion_threshold_empirical(rho, kernel)
    mean = float(np.arange(1, L + 1) @ rho)
    print(f"{p:>5}{mean:>14.3f}{cf:>14.4f}{emp.value:>12.4f}")
