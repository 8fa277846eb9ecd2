"""Reverse-mode autodiff in a few lines: build a scalar expression on the
tape, pull gradients back, and confirm one of them against a central finite
difference."""
import numpy as np

from benn.autodiff import Tape, Tensor, square

# f(w, b) = mean((w * x + b - y)^2) -- a one-feature least squares loss
x = np.linspace(-1.0, 1.0, 20)
y = 3.0 * x - 0.5

w = Tensor(0.0, name="w")
b = Tensor(0.0, name="b")

with Tape() as tape:
    pred = w * Tensor(x) + b
    loss = square(pred - Tensor(y)).mean()
    grads = tape.backward(loss)

print(f"loss at (0, 0):      {loss.item():.6f}")
print(f"analytic  dL/dw:     {-2.0 * np.mean(x * y):.6f}")
print(f"autodiff  dL/dw:     {float(grads[w]):.6f}")
print(f"autodiff  dL/db:     {float(grads[b]):.6f}")

# cross-check dL/dw with a central finite difference
h = 1e-6


def loss_at(wv):
    return float(np.mean((wv * x - y) ** 2))


fd = (loss_at(h) - loss_at(-h)) / (2 * h)
print(f"finite-difference dL/dw: {fd:.6f}")
print(f"agreement: {abs(fd - float(grads[w])):.2e}")

# outside a tape the same expressions evaluate eagerly with no graph kept
eager = (Tensor(2.0) * Tensor(3.0)).item()
print(f"eager product (no tape): {eager}")
