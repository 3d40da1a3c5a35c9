"""
Working on the Poincaré ball
============================

The HTGN encoder keeps node states inside the ball of radius 1/sqrt(c).
These are the few operations it needs.
"""

import torch

from mint.hyperbolic import exp_map, hyp_activation, in_ball, log_map, mobius_add, mobius_matvec

torch.set_printoptions(precision=4)

# %%
# The exponential map at the origin squashes any tangent vector into the ball,
# and the logarithmic map undoes it.
v = torch.tensor([3.0, -4.0], dtype=torch.float64)
for c in (0.5, 1.0, 2.0):
    x = exp_map(v, c)
    print(f"c={c}: |x| = {x.norm():.6f}  (radius {c ** -0.5:.6f})  back: {log_map(x, c)}")

# %%
# Möbius addition replaces vector addition. It is not commutative, but the
# origin is still the identity and -x cancels x from the left.
x = exp_map(torch.tensor([0.3, 0.8], dtype=torch.float64))
y = exp_map(torch.tensor([-0.5, 0.2], dtype=torch.float64))
print("x + y:", mobius_add(x, y))
print("y + x:", mobius_add(y, x))
print("-x + (x + y) - y:", mobius_add(-x, mobius_add(x, y)) - y)

# %%
# As the curvature goes to zero everything flattens to ordinary arithmetic.
for c in (1.0, 1e-2, 1e-4, 1e-6):
    print(f"c={c:g}: |x (+) y - (x + y)| = {(mobius_add(x, y, c) - (x + y)).norm():.2e}")

# %%
# Linear maps and nonlinearities go through the tangent space at the origin.
W = torch.tensor([[2.0, 0.0], [1.0, -1.0], [0.0, 3.0]], dtype=torch.float64)
z = mobius_matvec(W, x)
print("W x:", z, "in ball:", in_ball(z))
print("leaky relu:", hyp_activation(z, torch.nn.LeakyReLU(0.2)))
