"""Acceptance suite: one test per criterion, tolerances as stated."""

import math
import time

import numpy as np
import pytest
from scipy import integrate

from qftcausal.algebra import GaussianState, OperatorPoly, WeylJet, jet_extract, multiply
from qftcausal.causality import Verdict, psni_check, signal_gradient
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
from qftcausal.maps import (
    Composition,
    GaussianMeasureField,
    KickField,
    LoccConditional,
    SampledKrausProfile,
    apply,
    bin_overlap_profile,
    eta_derivative_at_zero,
    eta_function,
    h_function,
)
from qftcausal.protocol import (
    build_table,
    jet_form,
    load_fixture,
    parse_protocol,
    print_protocol,
    run_protocol,
)
from qftcausal.sampler import JORDAN, MeasurementPlan, estimate_moments, sample_measurements
from qftcausal.smearing import BumpSpec, DeltaKernel, QuadratureConfig, build_pairing_table, delta_bilinear

phi = OperatorPoly.field
AUDIT_FIXTURES = ["s1_kick_squared", "s1_kick", "s1_generators", "s2_commuting_poly", "s3_jordan_pair", "s4_locc"]


def cosine(t, x, amp=10.0):
    return BumpSpec(Point(t, x), 0.4, amp, "cosine_bump")


def test_01_signalling_value_reproduction():
    start = time.perf_counter()
    spec = load_fixture("s1_kick_squared")
    table = build_table(spec)
    result = run_protocol(spec, table=table)
    elapsed = time.perf_counter() - start
    expect = 2 * result.lambdas * table.d("h", "f") * table.d("f", "g")
    for lam, v, e in zip(result.lambdas, result.values, expect):
        if lam == 0:
            assert v == 0
        else:
            assert abs(v - e) < 1e-9 * abs(e)
    assert elapsed < 5.0


def test_02_acausal_product_measurement(fixture_tables):
    spec, t = fixture_tables("s2_commuting_poly")
    sigma = 0.5
    values = run_protocol(spec, table=t).values
    for lam, v in zip(spec.readout.lambdas, values):
        expect = t.w("g", "g") + (t.d("f2", "g") / (2 * sigma)) ** 2 * (t.w("f1", "f1") + lam ** 2 * t.d("f1", "h") ** 2)
        assert abs(v - expect) < 1e-9 * abs(expect)

    def lam2_coefficient(s):
        lo, mid, hi = run_protocol(s, table=t, lambdas=(-1.0, 0.0, 1.0)).values
        return ((hi + lo) / 2 - mid).real

    wide = parse_protocol(print_protocol(spec).replace("sigma = 0.5", "sigma = 1.0"), spec.base_dir)
    ratio = lam2_coefficient(spec) / lam2_coefficient(wide)
    assert abs(ratio - 4.0) < 1e-9


def test_03_causal_generator_operations(fixture_tables):
    for name in AUDIT_FIXTURES:
        spec, t = fixture_tables(name)
        bob, k = jet_form(spec.readout.observable)
        state = GaussianState(t)
        alice = spec.ops[spec.alice_index]
        alice_field = dict(alice.params)["field"]
        for label in t.labels:
            for m in (GaussianMeasureField(label, 0.5), KickField(label, 0.8)):
                out = apply(m, WeylJet.trivial(bob, max(k, 1)), t)
                assert psni_check(out, t.supports[bob], t).verdict is Verdict.CAUSAL, (name, m)
                c = Composition((KickField(alice_field), m), alice=0)
                rep = signal_gradient(c, (bob, k), state, spec.readout.lambdas)
                assert rep.max_gradient() < 1e-12, (name, m, rep.coefficients)


def test_04_gaussian_map_moment_shift(fixture_tables):
    for name, f, g in (("s1_kick_squared", "f", "g"), ("s4_locc", "f1", "g"), ("s3_jordan_pair", "f2", "f1")):
        t = fixture_tables(name)[1]
        for sigma in (0.25, 0.5, 2.0):
            w = apply(GaussianMeasureField(f, sigma), WeylJet.trivial(g, 2), t)
            assert jet_extract(w, 1, t).allclose(phi(g), atol=1e-15)
            shift = t.d(f, g) ** 2 / (4 * sigma ** 2)
            expect = multiply(phi(g), phi(g), t) + OperatorPoly.scalar(shift)
            assert jet_extract(w, 2, t).allclose(expect, atol=4 * np.finfo(float).eps * max(1.0, shift))


def test_05_eta_function(fixture_tables):
    assert abs(eta_function(0.0, 0.5) - 1.0) < 1e-10
    h = 1e-4
    for r in (0.1, 0.5, 1.0):
        fd = (eta_function(h, r) - eta_function(-h, r)) / (2 * h)
        assert abs(fd - 1j * (math.exp(r * r / 2) - 1.0)) < 1e-6

    spec, t = fixture_tables("s3_jordan_pair")
    sigma = 0.5
    r = t.d("f1", "f2") / (2 * sigma)
    coef = (-1j * eta_derivative_at_zero(1, r)).real * t.d("f1", "g") / t.d("f1", "f2")
    values = run_protocol(spec, table=t).values
    for lam, v in zip(spec.readout.lambdas, values):
        expect = lam * (t.d("g", "h") + coef * t.d("f2", "h"))
        assert abs(v - expect) <= 4 * np.finfo(float).eps * max(abs(expect), 1e-300)


def test_06_h_function():
    for sigma in (0.3, 1.0):
        G = SampledKrausProfile.gaussian(sigma)
        for s in np.linspace(-5 * sigma, 5 * sigma, 201):
            assert abs(h_function(G, s) - math.exp(-s * s / (8 * sigma ** 2))) < 1e-6
    rng = np.random.default_rng(0)
    vals = rng.normal(size=300) + 1j * rng.normal(size=300)
    vals /= math.sqrt(integrate.trapezoid(np.abs(vals) ** 2, dx=0.02))
    profiles = [SampledKrausProfile.gaussian(0.5), SampledKrausProfile(-3.0, 0.02, tuple(vals))]
    for G in profiles:
        for s in np.linspace(-5.9, 5.9, 237):
            assert abs(h_function(G, s)) <= 1.0 + 1e-9


def test_07_monte_carlo_recovery(fixture_tables):
    t = fixture_tables("s3_jordan_pair")[1]
    state = GaussianState(t)
    sigma, n = 1.0, 10 ** 6
    single = MeasurementPlan((("g", sigma),))
    pair = MeasurementPlan((("f1", sigma), ("f2", sigma)), JORDAN)
    passed = 0
    slowest = 0.0
    for seed in range(100):
        start = time.perf_counter()
        a = estimate_moments(sample_measurements(single, state, n, seed))
        b = estimate_moments(sample_measurements(pair, state, n, 1000 + seed))
        slowest = max(slowest, time.perf_counter() - start)
        ok = abs(a.means[0]) < 4 * a.mean_se[0]
        ok &= abs(a.second_moments[0, 0] - sigma ** 2 - t.w("g", "g")) < 4 * a.second_moment_se[0, 0]
        ok &= abs(b.second_moments[0, 1] - t.w("f1", "f2")) < 4 * b.second_moment_se[0, 1]
        passed += bool(ok)
    assert passed >= 95
    assert slowest < 60.0


@pytest.mark.parametrize("mass", [0.0, 1.0])
def test_08_lattice_oracle_agreement(mass):
    f, h = cosine(1.5, 1.8), cosine(0.0, 0.0)
    exact = delta_bilinear(f, h, QuadratureConfig(), DeltaKernel(mass))
    errs = []
    for dx in (0.08, 0.04, 0.02):
        lat = Lattice.covering([f, h], dx)
        value = lattice_delta(f, h, mass, lat)
        errs.append(abs(value - exact))
    assert errs[-1] < 0.02 * abs(exact)
    for coarse, fine in zip(errs[:-1], errs[1:]):
        assert abs(math.log2(coarse / fine) - 2.0) < 0.3


def test_09_support_mover(fixture_tables):
    spec = fixture_tables("s5_scatter")[0]
    f = cosine(0.0, 0.0)
    w = WindowSpec(1.0, 2.0)
    lat = Lattice.covering([f], spec.field.lattice_dx, extra=[Rect(w.t1, w.t2, -0.4, 0.4)])
    g = move_support(f, spec.field.mass, lat, w)
    pf = generate_solution(f, spec.field.mass, lat).values
    pg = generate_solution(g, spec.field.mass, lat).values
    outside = (lat.t < w.t1) | (lat.t > w.t2)
    assert np.abs(pf - pg)[outside].max() < 0.01 * np.abs(pf).max()
    rows = np.nonzero(np.any(g.values != 0, axis=1))[0]
    node_t = g.origin.t + rows * g.spacing
    assert node_t.min() >= w.t1 and node_t.max() <= w.t2


def test_10_scattering(fixture_tables):
    spec, t = fixture_tables("s5_scatter")
    m = spec.field.mass
    f, chi, g = cosine(0.0, 0.0), cosine(1.2, 0.3, 1.0), cosine(3.0, 0.5)
    w = WindowSpec(2.0, 2.6)
    lat = Lattice.covering([f, chi], spec.field.lattice_dx, extra=[Rect(w.t1, w.t2, -0.4, 0.4)])
    moved = move_support(f, m, lat, w)
    h_k0 = scatter_first_order(f, m, lat, InteractionSpec(0.0, chi), w)
    h_c0 = scatter_first_order(f, m, lat, InteractionSpec(0.5, cosine(1.2, 0.3, 0.0)), w)
    assert np.array_equal(h_k0.values, moved.values)
    assert np.array_equal(h_c0.values, moved.values)

    inter = InteractionSpec(0.1, chi)
    h1 = scatter_first_order(f, m, lat, inter, w, return_parts=True).h1.values
    for lam in (0.5, 3.0):
        scaled = scatter_first_order(cosine(0.0, 0.0, 10.0 * lam), m, lat, inter, w, return_parts=True).h1.values
        assert np.abs(scaled - lam ** 2 * h1).max() < 0.01 * lam ** 2 * np.abs(h1).max()

    # the lattice-oracle tolerance bounds the mover's discretisation error
    exact = t.d("f", "g")
    assert abs(effective_delta(h_k0, g, spec.field.quadrature, m) - exact) < 0.02 * abs(exact)


def test_11_bin_overlap_probe():
    grid = np.round(np.arange(-3.0, 3.0 + 1e-9, 0.05), 10)
    values = {bin_overlap_profile(1.0, 0.3, lam) for lam in grid}
    assert values == {0, 1}


def _evaluate(poly, z):
    # coefficient polynomial at phi(f1) = z; spectral atoms act as functions of phi(f1)
    total = 0j
    for word, c in poly.items():
        v = c
        for e in word:
            v *= z if isinstance(e, str) else e.family.derivative(e.order, z + e.shift)
        total += v
    return total


def _locc_oracle(t, z, d1, d2, sigma, a, b):
    """Multiplier of exp(i t phi(g)) at phi(f1) = z by direct alpha-quadrature."""
    x, y = t * d1, t * d2
    damp = 1.0 - np.exp(-y * y / (8 * sigma ** 2))

    def G(u):
        return (2 * math.pi * sigma ** 2) ** -0.25 * np.exp(-u * u / (4 * sigma ** 2))

    def part(lo, hi):
        opts = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
        re = integrate.quad(lambda al: (G(z - al) * G(z + x - al)).real, lo, hi, **opts)[0]
        im = integrate.quad(lambda al: (G(z - al) * G(z + x - al)).imag, lo, hi, **opts)[0]
        return re + 1j * im

    return part(-np.inf, a) + (1.0 - damp) * part(a, b) + part(b, np.inf)


def test_12_locc_formula(fixture_tables):
    sigma, a, b = 0.5, -0.5, 1.0
    # g0 lies in the future of K1 and spacelike to K2
    fns = {"f1": cosine(0.0, 0.0), "f2": cosine(2.0, 0.0), "g0": cosine(2.0, 2.5)}
    t0 = build_pairing_table(fns, 1.0, QuadratureConfig())
    assert t0.d("f2", "g0") == 0.0 and t0.d("f1", "g0") != 0.0
    jet = WeylJet.trivial("g0", 2)
    locc = apply(LoccConditional("f1", "f2", sigma, a, b), jet, t0)
    gauss = apply(GaussianMeasureField("f1", sigma), jet, t0)
    assert len(locc.coeffs) == len(gauss.coeffs)
    assert all(p == q for p, q in zip(locc.coeffs, gauss.coeffs))

    t = fixture_tables("s4_locc")[1]
    d1, d2 = t.d("f1", "g"), t.d("f2", "g")
    assert d2 != 0.0
    out = apply(LoccConditional("f1", "f2", sigma, a, b), WeylJet.trivial("g", 2), t)
    # Taylor coefficients in t of the oracle multiplier by a Cauchy contour
    N, radius = 16, 0.5
    theta = 2 * np.pi * np.arange(N) / N
    for z in (-1.0, -0.3, 0.0, 0.4, 1.2):
        vals = np.array([_locc_oracle(radius * np.exp(1j * th), z, d1, d2, sigma, a, b) for th in theta])
        for k in range(3):
            ref = (vals * np.exp(-1j * k * theta)).mean() / radius ** k
            assert abs(_evaluate(out.coeffs[k], z) - ref) < 1e-6
