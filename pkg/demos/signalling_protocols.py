"""Which local operations let Alice signal to Bob?

Run with ``python demos/signalling_protocols.py``.  Each shipped protocol has
Alice kick phi(h) with strength lambda, a third party act in between, and Bob
read out an observable at g, spacelike to h.
"""

import numpy as np

from qftcausal.algebra import GaussianState
from qftcausal.causality import signal_gradient
from qftcausal.maps import Composition, GaussianMeasureField, KickField, KickFieldSquared
from qftcausal.protocol import build_table, check_protocol, load_fixture, run_protocol

# %% The smeared commutator table for the S1 geometry
spec = load_fixture("s1_kick_squared")
table = build_table(spec)
for a in table.labels:
    print("  ".join(f"{table.d(a, b):+.6e}" for b in table.labels))

# h and g are spacelike, so Delta(h, g) is exactly zero.  f meets both
# light cones; the (f, g) entry is tiny because only a corner of each
# support is causally connected.

# %% Charlie kicks with phi(f)^2: Bob's mean becomes linear in lambda
result = run_protocol(spec, table=table)
slope = 2 * table.d("h", "f") * table.d("f", "g")
for lam, v in zip(result.lambdas, result.values):
    print(f"lambda = {lam:+.2f}   <phi(g)> = {v.real:+.6e}   predicted = {lam * slope:+.6e}")

# %% The same sweep through the causality API
state = GaussianState(table)
for name, charlie in [
    ("kick_squared", KickFieldSquared("f")),
    ("kick", KickField("f", 0.7)),
    ("gaussian", GaussianMeasureField("f", 0.5)),
]:
    rep = signal_gradient(Composition((KickField("h"), charlie), alice=0), ("g", 1), state)
    print(f"{name:13s} verdict = {rep.verdict:9s}  |d<phi(g)>/d lambda| = {rep.max_gradient():.3e}")

# %% Full audits of every shipped protocol
for name in ["s1_kick_squared", "s1_kick", "s1_generators", "s2_commuting_poly", "s3_jordan_pair", "s4_locc"]:
    check = check_protocol(load_fixture(name))
    ops = ", ".join(f"{o.map}:{o.verdict.value}" for o in check.operations)
    print(f"{name:18s} {'acausal' if check.acausal else 'causal':8s} [{ops}]")

# %% S2: a Gaussian measurement of the product phi(f1) phi(f2)
spec2 = load_fixture("s2_commuting_poly")
t2 = build_table(spec2)
values = run_protocol(spec2, table=t2).values.real
lams = np.asarray(spec2.readout.lambdas)
quad = np.polyfit(lams, values, 2)[0]
print(f"<phi(g)^2> lambda^2 coefficient = {quad:.6e}")
sigma = 0.5
print(f"(Delta(f2,g) Delta(f1,h) / 2 sigma)^2 = {(t2.d('f2', 'g') * t2.d('f1', 'h') / (2 * sigma)) ** 2:.6e}")
