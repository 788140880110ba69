"""A conditional (LOCC) second measurement and the bin-overlap probe.

Run with ``python demos/conditional_measurements.py``.  Charlie measures
phi(f1); if the outcome lands in [a, b], a second party measures phi(f2) in
the total future of f1.  Bob reads out phi(g)^2 after both.
"""

import numpy as np

from qftcausal.algebra import GaussianState, WeylJet, jet_extract, wick_expectation
from qftcausal.maps import GaussianMeasureField, LoccConditional, apply, bin_overlap_profile
from qftcausal.protocol import build_table, check_protocol, load_fixture

spec = load_fixture("s4_locc")
table = build_table(spec)
state = GaussianState(table)
sigma, a, b = 0.5, -0.5, 1.0
print(f"Delta(f1, g) = {table.d('f1', 'g'):+.6f}   Delta(f2, g) = {table.d('f2', 'g'):+.6f}")

# %% Heisenberg image of phi(g)^2: the coefficients carry the window probability P(phi(f1))
jet = apply(LoccConditional("f1", "f2", sigma, a, b), WeylJet.trivial("g", 2), table)
second = jet_extract(jet, 2, table)
print("E(phi(g)^2) =", second)
print("<E(phi(g)^2)> =", wick_expectation(second, state).real)

# %% Without the conditional step only the Gaussian part remains
plain = jet_extract(apply(GaussianMeasureField("f1", sigma), WeylJet.trivial("g", 2), table), 2, table)
print("<E_gauss(phi(g)^2)> =", wick_expectation(plain, state).real)

# %% Alice cannot signal through the conditional protocol
print(check_protocol(spec, table=table).to_text())

# %% Bin overlap: whether lambda and lambda + s fall into the same outcome bin
grid = np.arange(-1.0, 1.0 + 1e-9, 0.05)
row = "".join(str(bin_overlap_profile(1.0, 0.3, lam)) for lam in grid)
print(f"w = 1, s = 0.3 over lambda in [-1, 1]: {row}")
