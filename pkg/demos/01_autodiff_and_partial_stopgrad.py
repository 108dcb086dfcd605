"""Tour of the autodiff engine: the tape, partial stop-gradient, and
forward-mode directional derivatives.

Run:  python demos/01_autodiff_and_partial_stopgrad.py
"""

import time

import numpy as np

from mmflow import Tape, Tensor, as_tensor, backward, jvp, sg_lambda, stopgrad
import mmflow.autodiff as ad

rng = np.random.default_rng(0)

# --- reverse mode over a small expression ----------------------------------
x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
with Tape():
    loss = ad.sum_all(ad.square(ad.tanh(x)))
grads = backward(loss)
print("d/dx sum(tanh(x)^2)     :", grads.wrt(x))
print("analytic                :", 2 * np.tanh(x.data) * (1 - np.tanh(x.data) ** 2))

# --- stopgrad blocks a branch completely ------------------------------------
y = Tensor(2.0, requires_grad=True)
with Tape():
    loss = ad.mul(y, stopgrad(y))  # product rule with one branch cut
print("\nvalue of y*sg(y) at y=2 :", loss.data)
print("gradient (live branch)  :", backward(loss).wrt(y))

# --- the partial stop-gradient scales gradients, never values ---------------
z = Tensor([0.1, -2.7], requires_grad=True)
for lam in (0.0, 0.3, 1.0):
    with Tape():
        loss = ad.sum_all(sg_lambda(ad.square(ad.add(z, 0.0)), lam))
    g = backward(loss).wrt(z)
    print(f"lam={lam:3.1f}  loss={float(loss.data):.6f}  grad={g}")

# --- forward mode: one call gives value and directional derivative ----------
w = as_tensor(rng.normal(size=(3, 3)))


def f(v):
    return ad.sum_all(ad.tanh(ad.matmul(v, w)))


point = rng.normal(size=(1, 3))
direction = rng.normal(size=(1, 3))
value, dd = jvp(f, [point], [direction])
eps = 1e-6
fd = (f(as_tensor(point + eps * direction)).data - f(as_tensor(point - eps * direction)).data) / (2 * eps)
print("\njvp directional deriv   :", float(dd.data))
print("central difference      :", float(fd))

# --- cost of the extra forward-mode pass ------------------------------------
big = rng.normal(size=(256, 64))
wide = as_tensor(rng.normal(size=(64, 64)))


def net(v):
    return ad.tanh(ad.matmul(ad.tanh(ad.matmul(v, wide)), wide))


t0 = time.perf_counter()
for _ in range(200):
    net(as_tensor(big))
plain = time.perf_counter() - t0

t0 = time.perf_counter()
for _ in range(200):
    jvp(net, [big], [np.ones_like(big)])
dual = time.perf_counter() - t0
print(f"\nforward pass            : {plain * 5:.2f} ms")
print(f"forward + tangent       : {dual * 5:.2f} ms  ({dual / plain:.1f}x)")
print("(at toy sizes the tangent pass is dispatch-bound, not flop-bound)")
