"""First-order optimizers operating on leaf tensors.

Both optimizers consume the gradient map returned by ``Tape.backward`` and
update parameter data in place.  Parameters missing from the map are left
untouched (they did not participate in the step's loss).
"""
from __future__ import annotations

import numpy as np


class Sgd:
    def __init__(self, params, lr=0.05):
        self.params = list(params)
        self.lr = lr

    def step(self, grads):
        for p in self.params:
            g = grads.get(p)
            if g is not None:
                p.data -= self.lr * g


class Adam:
    """Adam with bias correction; lr 1e-3 default."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {p: np.zeros_like(p.data) for p in self.params}
        self._v = {p: np.zeros_like(p.data) for p in self.params}

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            m = self._m[p]
            v = self._v[p]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
