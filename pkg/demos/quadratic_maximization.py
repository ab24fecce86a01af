"""
Bounding a quadratic form over an ellitope
==========================================

The maximum of x'Cx over a box is hard to compute, but one semidefinite
program gives an upper bound within a factor 3 ln(sqrt(3) K) of it.  Here the
bound is compared with a multistart local search, which only ever finds
points inside the set and therefore gives a lower bound.
"""

import numpy as np

from robinv.geometry import BaseSet, EllitopeSpec
from robinv.quadmax import opt_bruteforce, opt_upper

rng = np.random.default_rng(0)

# %%
# A 6-dimensional box is an ellitope with K = 6 rank-one matrices e_k e_k'.
# The unit ball is the K = 1 case, where the bound is exact.
box = EllitopeSpec.box(6)
ball = EllitopeSpec.ball(6)

F = rng.standard_normal((6, 6))
C = F @ F.T

for name, X in [("box", box), ("ball", ball)]:
    up = opt_upper(C, X)
    lo = opt_bruteforce(C, X, budget=500)
    print(f"{name:5s} lower {lo:9.4f}  upper {up.value:9.4f}  ratio {up.value / lo:.4f}  "
          f"guaranteed ratio <= {up.tightness:.3f}")

print("largest eigenvalue", np.linalg.eigvalsh(C).max())

# %%
# An l4-ball of squared norms: x belongs to X when (x'T_k x)_k lies in the
# unit l2-ball.  Same program, different base set.
T = np.stack([np.diag(r) for r in np.eye(6)])
l4 = EllitopeSpec(T, BaseSet.pball(6, 2.0))
up = opt_upper(C, l4)
print(f"l4   lower {opt_bruteforce(C, l4, budget=500):9.4f}  upper {up.value:9.4f}")
