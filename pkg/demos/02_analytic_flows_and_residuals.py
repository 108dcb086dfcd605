"""The analytic reference flows and the three structural checks built on
them: the average/instantaneous identity, interval additivity, and the
shrinking-gap limit.

Run:  python demos/02_analytic_flows_and_residuals.py
"""

import numpy as np

from mmflow import (
    ConstantFlow,
    HarmonicFlow,
    average_velocity_field,
    average_velocity_oracle,
    consistency_residual,
    identity_residual,
    limit_slope,
    rk4_solve,
)

rng = np.random.default_rng(1)

flow = HarmonicFlow(2)
oracle = average_velocity_field(flow)

# the decay path and its RK4 reproduction
path = rk4_solve(flow.velocity, np.array([1.0, -0.5]), 0.0, 1.0, steps=1000)
print("x(1) by RK4             :", path.states[-1])
print("x(1) closed form        :", np.array([1.0, -0.5]) * np.exp(-1.0))

# true average velocity over [0, 1] at the decayed state
u = average_velocity_oracle(flow, np.array([1.0, 0.0]), 0.0, 1.0)
print("\nu(x=1, 0, 1)            :", u[0], " (closed form:", 1.0 - np.e, ")")

# identity: v = u + (t - r) du/dt, checked with one forward-mode call
x = rng.normal(size=(512, 2))
r = rng.uniform(0, 0.9, 512)
t = r + 1e-3 + rng.uniform(0, 1, 512) * (1 - r - 1e-3)
res = identity_residual(oracle, flow, x, r, t)
print("\nidentity residual (max) :", np.abs(res).max())

# interval additivity across r < s < t with the inverse-update midpoint
r3 = rng.uniform(0, 0.9, 512)
s3 = r3 + 0.01 + rng.uniform(0, 1, 512) * (1 - r3 - 0.02)
t3 = s3 + 0.01 + rng.uniform(0, 1, 512) * (1 - s3 - 0.01)
res = consistency_residual(oracle, x, r3, s3, t3)
print("additivity residual(max):", np.abs(res).max())

# shrinking intervals recover the instantaneous velocity at first order
errors, slope = limit_slope(oracle, flow, x[:64], r[:64])
print("\ngap errors              :", errors)
print("log-log slope           :", slope)

# a constant drift satisfies everything exactly
const = ConstantFlow([0.7, -0.2])
res = identity_residual(average_velocity_field(const), const, x, r, t)
print("\nconstant-flow residual  :", np.abs(res).max(), "(exact zero)")
