"""Classical solutions on the lattice: Delta as an operator, support moving, scattering.

Run with ``python demos/lattice_solutions.py``.
"""

import numpy as np

from qftcausal.classical import (
    InteractionSpec,
    Lattice,
    WindowSpec,
    effective_delta,
    generate_solution,
    lattice_delta,
    move_support,
    scatter_first_order,
)
from qftcausal.geometry import Point, Rect
from qftcausal.smearing import BumpSpec, DeltaKernel, QuadratureConfig, delta_bilinear


def cosine(t, x, amp=10.0):
    return BumpSpec(Point(t, x), 0.4, amp, "cosine_bump")


f, h = cosine(1.5, 1.8), cosine(0.0, 0.0)

# %% Lattice pairing against the quadrature value, second-order convergence
exact = delta_bilinear(f, h, QuadratureConfig(), DeltaKernel(1.0))
print(f"quadrature Delta(f, h) = {exact:.10f}")
prev = None
for dx in (0.08, 0.04, 0.02):
    v = lattice_delta(f, h, 1.0, Lattice.covering([f, h], dx))
    err = abs(v - exact)
    order = "" if prev is None else f"  order {np.log2(prev / err):.2f}"
    print(f"dx = {dx:.2f}  lattice = {v:.10f}  rel err = {err / abs(exact):.2e}{order}")
    prev = err

# %% Moving the support of h into the slab 1 <= t <= 2
w = WindowSpec(1.0, 2.0)
lat = Lattice.covering([h], 0.02, extra=[Rect(1.0, 2.0, -0.4, 0.4)])
g = move_support(h, 1.0, lat, w)
phi_h = generate_solution(h, 1.0, lat).values
phi_g = generate_solution(g, 1.0, lat).values
outside = (lat.t < w.t1) | (lat.t > w.t2)
print("moved support:", g.support())
print("relative sup error outside the slab:", np.abs(phi_h - phi_g)[outside].max() / np.abs(phi_h).max())

# %% Scattering off a kappa chi phi^2 coupling localised near (1.2, 0.3)
chi = cosine(1.2, 0.3, 1.0)
bob = cosine(3.0, 0.5)
w2 = WindowSpec(2.0, 2.6)
lat2 = Lattice.covering([h, chi], 0.02, extra=[Rect(2.0, 2.6, -0.4, 0.4)])
print(f"Delta(h, bob) = {delta_bilinear(h, bob, None, DeltaKernel(1.0)):.6f}")
for kappa in (0.0, 0.05, 0.1):
    out = scatter_first_order(h, 1.0, lat2, InteractionSpec(kappa, chi), w2)
    print(f"kappa = {kappa:.2f}  Delta(h_out, bob) = {effective_delta(out, bob, None, 1.0):.6f}")
