"""Constrained optimization with the differential method of multipliers on a
problem small enough to solve by hand:

    minimize (x - 1)^2   subject to   x = 0.

The Lagrangian stationary point is x* = 0 with multiplier lambda* = 2, so we
can watch both quantities converge to known values.  A second pass adds an
inequality x >= 0.5 handled through a squared slack variable."""
from types import SimpleNamespace

import numpy as np

from benn import autodiff as ad
from benn import mdmm
from benn.autodiff import Tape, Tensor
from benn.optim import Sgd

# --- equality-constrained quadratic ---------------------------------------
state = mdmm.MultiplierState(damping_eq=10.0, lr_multiplier=0.05)
spec = SimpleNamespace(relation="equality", weight_id=None)
wid = mdmm.register(spec, state)

x = Tensor(1.0, name="x")
opt = Sgd([x], lr=0.05)
print("step      x      lambda")
for step in range(1, 2001):
    with Tape() as tape:
        data = ad.square(x - 1.0)
        items = [(SimpleNamespace(value=x * 1.0), wid)]  # residual h(x) = x
        total = mdmm.total_loss(data, items, state)
        grads = tape.backward(total)
    mdmm.step(opt, state, grads, items)
    if step % 400 == 0:
        print(f"{step:5d} {float(x.data):+.5f} {state.multipliers[wid]:+.5f}")
print(f"KKT target:  x* = 0, lambda* = 2  ->  errors "
      f"{abs(float(x.data)):.1e}, {abs(state.multipliers[wid] - 2):.1e}")

# --- inequality via slack: minimize x^2 subject to x >= 0.5 ----------------
state2 = mdmm.MultiplierState(damping_ineq=10.0, lr_multiplier=0.05)
spec2 = SimpleNamespace(relation="inequality", weight_id=None)
wid2 = mdmm.register(spec2, state2)

z = Tensor(2.0, name="z")
opt2 = Sgd([z] + state2.slack_parameters(), lr=0.05)
for step in range(1, 3001):
    with Tape() as tape:
        data = ad.square(z)
        items = [(SimpleNamespace(value=0.5 - z), wid2)]  # g(z) = 0.5 - z <= 0
        total = mdmm.total_loss(data, items, state2)
        grads = tape.backward(total)
    mdmm.step(opt2, state2, grads, items)
print(f"inequality solution: z = {float(z.data):.5f} (expected 0.5, "
      f"the active-constraint optimum)")
print(f"multiplier mu = {state2.multipliers[wid2]:.5f} (expected 1.0 = 2 z*)")
