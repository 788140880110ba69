"""Recovering vacuum correlators from simulated Gaussian measurements.

Run with ``python demos/measurement_statistics.py``.
"""

import numpy as np

from qftcausal.algebra import GaussianState
from qftcausal.maps import SampledKrausProfile, eta_function, h_function, selective_probability
from qftcausal.protocol import build_table, load_fixture
from qftcausal.sampler import (
    JORDAN,
    MeasurementPlan,
    estimate_moments,
    outcome_second_moment,
    recover_correlator,
    sample_measurements,
)

table = build_table(load_fixture("s3_jordan_pair"))
state = GaussianState(table)
sigma = 1.0

# %% One field: mean zero, second moment W_s(g, g) + sigma^2
est = estimate_moments(sample_measurements(MeasurementPlan((("g", sigma),)), state, 10 ** 6, seed=0))
print(est.to_text())
print("W_s(g, g) + sigma^2 =", table.w("g", "g") + sigma ** 2)

# %% Two non-commuting fields, measured in random order
pair = MeasurementPlan((("f1", sigma), ("f2", sigma)), JORDAN)
value, se = recover_correlator(pair, state, 10 ** 6, seed=1, return_se=True)
print(f"recovered  <phi(f1) phi(f2)> = {value.real:+.5f} {value.imag:+.5f}i  (se {se:.1e})")
exact = table.two_point("f1", "f2")
print(f"exact      <phi(f1) phi(f2)> = {exact.real:+.5f} {exact.imag:+.5f}i")
print("model second moments:\n", outcome_second_moment(pair, table))

# %% Probability that the outcome lands in a bin
p = selective_probability("g", sigma, (-0.5, 1.0), state)
alpha = sample_measurements(MeasurementPlan((("g", sigma),)), state, 10 ** 6, seed=2).alphas[:, 0]
print(f"P[-0.5 <= alpha <= 1] = {p:.5f}, frequency = {np.mean((alpha >= -0.5) & (alpha <= 1.0)):.5f}")

# %% The overlap function H of a Kraus profile and the eta function
G = SampledKrausProfile.gaussian(0.5)
for s in (0.0, 0.5, 1.0, 2.0):
    print(f"H({s}) = {h_function(G, s).real:.8f}   exp(-s^2/8 sigma^2) = {np.exp(-s * s / 2.0):.8f}")
for t in (0.0, 0.5, 2.0):
    print(f"eta({t}; r = 0.5) = {eta_function(t, 0.5):.6f}")
