"""How the rate quantities behave for a few potentials.

Run with ``python3 demos/rate_quantities.py``.  Nothing here touches a PDE;
every number is a cell average, a norm of a cell deviation, or a closed form.
"""
import math

import numpy as np

from perfhom import DomainSpec, RateParams, compute_b, compute_D, compute_e, fit_rate
from perfhom.potential import Constant, HalfSpaceStep, Smooth

cube = DomainSpec.cube(3)
box = DomainSpec.cube(3, -1.0, 1.0)
sweep = [2.0**-k for k in range(2, 7)]

# A constant potential is its own cell average, so D vanishes identically.
print("constant:", [compute_D(Constant(c=5.0), RateParams(3, e), cube) for e in sweep])

# A jump across a plane is only seen by one slab of cells: D^3 = eps (2 - eps)^2 here.
D_step = [compute_D(HalfSpaceStep(height=2.0), RateParams(3, e), box) for e in sweep]
print("half-space step:", np.round(D_step, 5), "slope", round(fit_rate(D_step, sweep).slope, 3))

# A smooth potential deviates from its cell mean by O(eps) in every cell.  At
# eps = 1/4 only (3/4)^3 of the cube is covered by interior cells, which drags
# the fitted slope below 1; start the fit at eps = 1/8.
V = Smooth(func=lambda x: 1.0 + x[..., 0] ** 2 + np.sin(2 * x[..., 1]))
fine = [2.0**-k for k in range(3, 7)]
D_smooth = [compute_D(V, RateParams(3, e), cube) for e in fine]
print("smooth:", np.round(D_smooth, 5), "slope", round(fit_rate(D_smooth, fine).slope, 3))

# e depends only on n, p and eps; b brackets a supremum over small sets.
for e in (0.25, 0.125):
    params = RateParams(3, e)
    br = compute_b(V, params, math.inf, domain=cube)
    print(f"eps={e}: e={compute_e(params, math.inf):.4g}  b in [{br.b_lower:.4g}, {br.b_upper:.4g}]")
