"""Numerical capacity against closed forms.

The finite-difference condenser is solved on two outer radii and extrapolated
in 1/R.  A unit ball should come out close to 4 pi; two far-apart unit balls
close to twice that.
"""
import time

import numpy as np

from perfhom.capacity import Ball, UnionOfBalls, cap_ball, cap_numeric

t0 = time.perf_counter()
est = cap_numeric(Ball((0.0, 0.0, 0.0), 1.0))
print(f"unit ball: {est.value:.4f} (closed form {cap_ball(1.0, 3):.4f}, +-{est.error:.2g}) "
      f"in {time.perf_counter() - t0:.1f} s")

pair = UnionOfBalls((Ball((-1.5, 0.0, 0.0), 1.0), Ball((1.5, 0.0, 0.0), 1.0)))
est = cap_numeric(pair, R_out=10.0, h=0.2)
print(f"two balls 3 apart: {est.value:.3f}, between 4 pi = {4 * np.pi:.3f} and 8 pi = {8 * np.pi:.3f}")
