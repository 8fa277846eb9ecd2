"""Modified differential method of multipliers.

Constrained training runs simultaneous gradient descent on the model
parameters and gradient ascent on one multiplier per constraint:

    total = data_loss
          + sum_eq   [ lambda_k h_k + (c1/2) h_k^2 ]
          + sum_ineq [ mu_k (g_k - xi_k^2) + (c2/2) g_k^2 ]

    theta  <- theta - eta_theta * d total / d theta
    xi_k   <- xi_k  - eta_theta * d total / d xi_k
    lambda_k <- lambda_k + eta_lambda * h_k
    mu_k     <- mu_k     + eta_lambda * (g_k - xi_k^2)

The quadratic damping terms keep the saddle-point dynamics from
oscillating; multipliers start at zero so training begins unconstrained.
Slack variables xi are parameterized directly and squared in the loss.

``damping_variant`` selects what the inequality damping acts on: ``"g2"``
damps the raw residual ((c2/2) g^2), ``"slack"`` damps the slack-adjusted
residual ((c2/2)(g - xi^2)^2).  The choice is echoed into run metadata so
the two variants can be compared.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["MdmmError", "MultiplierState", "register", "total_loss", "step"]

_RELATIONS = ("equality", "inequality")
_DAMPING_VARIANTS = ("g2", "slack")


class MdmmError(Exception):
    pass


class MultiplierState:
    """Multipliers, slacks, and damping settings for a set of constraints."""

    def __init__(
        self,
        damping_eq=1.0,
        damping_ineq=1.0,
        lr_multiplier=0.1,
        damping_variant="g2",
    ):
        if damping_eq < 0 or damping_ineq < 0:
            raise MdmmError("damping coefficients must be non-negative")
        if damping_variant not in _DAMPING_VARIANTS:
            raise MdmmError(f"unknown damping_variant {damping_variant!r}")
        self.damping_eq = float(damping_eq)
        self.damping_ineq = float(damping_ineq)
        self.lr_multiplier = float(lr_multiplier)
        self.damping_variant = damping_variant
        self.relations = []       # relation per registered constraint
        self.multipliers = []     # lambda_k or mu_k, all start at 0
        self.slacks = []          # scalar leaf Tensor per inequality, else None

    def slack_parameters(self):
        return [s for s in self.slacks if s is not None]


def register(spec, state):
    """Attach a constraint to the state; returns and stores its weight id."""
    if getattr(spec, "weight_id", None) is not None:
        raise MdmmError(f"constraint already registered with id {spec.weight_id}")
    relation = getattr(spec, "relation", "equality")
    if relation not in _RELATIONS:
        raise MdmmError(f"unknown relation {relation!r}")
    wid = len(state.relations)
    state.relations.append(relation)
    state.multipliers.append(0.0)
    if relation == "inequality":
        state.slacks.append(Tensor(0.0, name=f"slack[{wid}]"))
    else:
        state.slacks.append(None)
    spec.weight_id = wid
    return wid


def total_loss(data_loss, items, state):
    """Assemble the constrained loss on the active tape.

    items: list of (residual, weight_id) pairs where ``residual`` exposes a
    scalar ``.value`` tensor.  Every pair must match a registered
    constraint; duplicates are rejected.
    """
    total = data_loss
    seen = set()
    for residual, wid in items:
        if not 0 <= wid < len(state.relations):
            raise MdmmError(f"weight id {wid} was never registered")
        if wid in seen:
            raise MdmmError(f"weight id {wid} appears twice in one step")
        seen.add(wid)
        value = residual.value if hasattr(residual, "value") else residual
        m = state.multipliers[wid]
        if state.relations[wid] == "equality":
            total = total + value * m + ad.square(value) * (0.5 * state.damping_eq)
        else:
            slack = state.slacks[wid]
            adjusted = value - ad.square(slack)
            total = total + adjusted * m
            damped = adjusted if state.damping_variant == "slack" else value
            total = total + ad.square(damped) * (0.5 * state.damping_ineq)
    return total


def step(optimizer, state, grads, items):
    """One coupled update: parameter descent, then multiplier ascent.

    ``grads`` is the map from Tape.backward; ``items`` pairs each residual
    with its weight id, exactly as passed to total_loss.  Residual values
    and slack magnitudes are read before the optimizer moves anything so
    the two half-updates see the same iterate.
    """
    ascent = []
    for residual, wid in items:
        value = residual.value if hasattr(residual, "value") else residual
        h = float(value.data)
        if not np.isfinite(h):
            raise MdmmError(f"non-finite residual for constraint {wid}")
        if state.relations[wid] == "equality":
            ascent.append((wid, h))
        else:
            xi = float(state.slacks[wid].data)
            ascent.append((wid, h - xi * xi))
    for p in optimizer.params:
        g = grads.get(p)
        if g is not None and not np.isfinite(g).all():
            raise MdmmError(f"non-finite gradient for parameter {p.name or 'unnamed'}")
    optimizer.step(grads)
    for wid, h in ascent:
        state.multipliers[wid] += state.lr_multiplier * h
