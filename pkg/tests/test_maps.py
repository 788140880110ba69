import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from qftcausal.algebra import GaussianState, OperatorPoly, WeylJet, jet_extract, multiply, wick_expectation
from qftcausal.maps import (
    Composition,
    GaussianMeasureCommutingPoly,
    GaussianMeasureField,
    GaussianMeasureJordanPair,
    GaussianWindow,
    GeneralMeasureField,
    KickField,
    KickFieldSquared,
    LoccConditional,
    MapError,
    SampledKrausProfile,
    SelectiveGaussian,
    apply,
    apply_composition,
    bin_overlap_profile,
    eta_derivative_at_zero,
    eta_function,
    h_function,
    selective_probability,
)
from qftcausal.sampler import MeasurementPlan, sample_measurements
from qftcausal.smearing import table_from_matrices

phi = OperatorPoly.field


def sq(label, table):
    return multiply(phi(label), phi(label), table)


@pytest.fixture(scope="module")
def s1(fixture_tables):
    return fixture_tables("s1_kick_squared")[1]


@pytest.fixture(scope="module")
def s2(fixture_tables):
    return fixture_tables("s2_commuting_poly")[1]


@pytest.fixture(scope="module")
def s3(fixture_tables):
    return fixture_tables("s3_jordan_pair")[1]


@pytest.fixture(scope="module")
def s4(fixture_tables):
    return fixture_tables("s4_locc")[1]


def toy_table():
    labels = ("f", "g", "k")
    d = np.array([[0.0, 0.6, 0.0], [-0.6, 0.0, 0.25], [0.0, -0.25, 0.0]])
    return table_from_matrices(labels, d, 2.0 * np.eye(3))


class TestGaussianMeasure:
    def test_first_moment_unchanged(self):
        t = toy_table()
        w = apply(GaussianMeasureField("f", 0.5), WeylJet.trivial("g", 2), t)
        assert jet_extract(w, 1, t).allclose(phi("g"), atol=1e-15)

    def test_second_moment_shift(self):
        t = toy_table()
        sigma = 0.5
        w = apply(GaussianMeasureField("f", sigma), WeylJet.trivial("g", 2), t)
        expect = sq("g", t) + OperatorPoly.scalar(t.d("f", "g") ** 2 / (4 * sigma ** 2))
        assert jet_extract(w, 2, t).allclose(expect, atol=1e-15)

    def test_polynomial_route_agrees(self):
        t = toy_table()
        m = GaussianMeasureField("f", 0.7)
        via_jet = jet_extract(apply(m, WeylJet.trivial("g", 2), t), 2, t)
        assert apply(m, sq("g", t), t).allclose(via_jet, atol=1e-14)

    def test_bad_sigma(self):
        with pytest.raises(MapError):
            GaussianMeasureField("f", 0.0)


class TestKicks:
    def test_kick_shifts_field(self):
        t = toy_table()
        out = apply(KickField("f", 1.5), phi("g"), t)
        assert out.allclose(phi("g") + OperatorPoly.scalar(1.5 * t.d("g", "f")), atol=1e-15)

    def test_squared_kick(self, s1):
        w = apply(KickFieldSquared("f"), WeylJet.trivial("g", 1), s1)
        expect = phi("g") - phi("f") * (2 * s1.d("f", "g"))
        assert jet_extract(w, 1, s1).allclose(expect, atol=1e-15)


class TestCommutingPoly:
    def test_s2_second_moment(self, s2):
        sigma = 0.5
        C = multiply(phi("f1"), phi("f2"), s2)
        w = apply(GaussianMeasureCommutingPoly(C, sigma), WeylJet.trivial("g", 2), s2)
        inner = phi("f1") * s2.d("f2", "g") + phi("f2") * s2.d("f1", "g")
        expect = sq("g", s2) + multiply(inner, inner, s2) * (1 / (4 * sigma ** 2))
        assert jet_extract(w, 2, s2).allclose(expect, atol=1e-14)
        # the support grows to include f1
        assert "f1" in jet_extract(w, 2, s2).labels(1e-14)

    def test_rejects_non_commuting(self, s3):
        C = multiply(phi("f1"), phi("f2"), s3)
        with pytest.raises(MapError, match="commutation"):
            apply(GaussianMeasureCommutingPoly(C, 0.5), phi("g"), s3)


class TestJordanPair:
    def test_s3_first_moment(self, s3):
        sigma = 0.5
        w = apply(GaussianMeasureJordanPair("f1", "f2", sigma), WeylJet.trivial("g", 1), s3)
        d12 = s3.d("f1", "f2")
        coef = (math.exp(d12 ** 2 / (8 * sigma ** 2)) - 1.0) * s3.d("f1", "g") / d12
        expect = phi("g") + phi("f2") * coef
        assert jet_extract(w, 1, s3).allclose(expect, atol=1e-15)

    def test_requires_non_commuting(self, s2):
        with pytest.raises(MapError):
            apply(GaussianMeasureJordanPair("f1", "f2", 0.5), phi("g"), s2)


class TestLocc:
    def test_reduces_to_gaussian_when_g_commutes_with_f2(self):
        t2 = table_from_matrices(
            ("f1", "f2", "g"),
            np.array([[0.0, 0.3, 0.4], [-0.3, 0.0, 0.0], [-0.4, 0.0, 0.0]]),
            2.0 * np.eye(3),
        )
        jet = WeylJet.trivial("g", 2)
        a = apply(LoccConditional("f1", "f2", 0.5, -0.5, 1.0), jet, t2)
        b = apply(GaussianMeasureField("f1", 0.5), jet, t2)
        assert all(x == y for x, y in zip(a.coeffs, b.coeffs))

    def test_validates_ordering(self, s2):
        with pytest.raises(MapError, match="totally before"):
            apply(LoccConditional("f1", "f2", 0.5, -0.5, 1.0), WeylJet.trivial("g", 2), s2)

    def test_s4_expectation_is_real(self, s4):
        state = GaussianState(s4)
        w = apply(LoccConditional("f1", "f2", 0.5, -0.5, 1.0), WeylJet.trivial("g", 2), s4)
        v = wick_expectation(jet_extract(w, 2, s4), state)
        assert abs(v.imag) < 1e-12 and v.real > 0


class TestGeneralMeasure:
    def test_h_at_zero(self):
        G = SampledKrausProfile.gaussian(0.5)
        assert h_function(G, 0.0) == pytest.approx(1.0, abs=1e-9)

    def test_gaussian_profile(self):
        sigma = 0.5
        G = SampledKrausProfile.gaussian(sigma)
        for s in np.linspace(-5 * sigma, 5 * sigma, 21):
            assert abs(h_function(G, s) - math.exp(-s * s / (8 * sigma ** 2))) < 1e-6

    def test_h_bounded(self):
        rng = np.random.default_rng(4)
        vals = rng.normal(size=200) + 1j * rng.normal(size=200)
        vals /= math.sqrt(trapezoid(np.abs(vals) ** 2, dx=0.05))
        G = SampledKrausProfile(-5.0, 0.05, tuple(vals))
        for s in np.linspace(-9, 9, 37):
            assert abs(h_function(G, s)) <= 1 + 1e-9

    def test_rejects_unnormalised(self):
        with pytest.raises(MapError):
            SampledKrausProfile(0.0, 0.1, (1.0, 1.0, 1.0))

    def test_gaussian_profile_matches_gaussian_map(self):
        t = toy_table()
        sigma = 0.5
        a = apply(GeneralMeasureField("f", SampledKrausProfile.gaussian(sigma)), WeylJet.trivial("g", 2), t)
        b = apply(GaussianMeasureField("f", sigma), WeylJet.trivial("g", 2), t)
        assert a.allclose(b, atol=1e-7)


class TestEta:
    def test_eta_at_zero(self):
        assert abs(eta_function(0.0, 0.7) - 1.0) < 1e-10

    @pytest.mark.parametrize("r", [0.1, 0.5, 1.0])
    def test_derivative(self, r):
        h = 1e-4
        fd = (eta_function(h, r) - eta_function(-h, r)) / (2 * h)
        assert abs(fd - 1j * (math.exp(r * r / 2) - 1.0)) < 1e-6
        assert eta_derivative_at_zero(1, r) == pytest.approx(1j * (math.exp(r * r / 2) - 1.0))

    # 25-digit references of the lognormal Fourier form
    @pytest.mark.parametrize(
        "t, r, ref",
        [
            (2.0, 1.0, 0.328737747203891 - 0.20255279234208864j),
            (20.0, 2.0, 0.07432912408173581 + 0.018219526792404475j),
        ],
    )
    def test_oscillatory_branch(self, t, r, ref):
        assert abs(eta_function(t, r) - ref) < 1e-9

    def test_symmetric_in_r(self):
        assert eta_function(1.5, -0.7) == eta_function(1.5, 0.7)

    def test_small_r(self):
        for t in (0.5, 3.0, -7.0):
            assert abs(eta_function(t, 1e-9) - 1.0) < 1e-7


class TestSelective:
    def test_full_line_is_one(self):
        st = GaussianState(toy_table())
        assert selective_probability("f", 0.5, (-math.inf, math.inf), st) == 1.0

    def test_empty_interval(self):
        st = GaussianState(toy_table())
        assert selective_probability("f", 0.5, (0.3, 0.3), st) == 0.0

    def test_window_family(self):
        P = GaussianWindow(-1.0, 2.0, 0.5)
        z = np.linspace(-3, 3, 13)
        h = 1e-5
        fd = (P.derivative(0, z + h) - P.derivative(0, z - h)) / (2 * h)
        np.testing.assert_allclose(P.derivative(1, z), fd, atol=1e-8)

    def test_against_sampler_frequency(self, s4):
        state = GaussianState(s4)
        sigma, a, b = 0.5, -0.5, 1.0
        p = selective_probability("f1", sigma, (a, b), state)
        n = 10 ** 6
        alpha = sample_measurements(MeasurementPlan((("f1", sigma),)), state, n, seed=11).alphas[:, 0]
        hits = (alpha >= a) & (alpha <= b)
        freq = hits.mean()
        se = hits.std(ddof=1) / math.sqrt(n)
        assert abs(freq - p) < 4 * se

    def test_normalised_selective_first_moment(self):
        t = toy_table()
        st = GaussianState(t)
        m = SelectiveGaussian("f", 0.5, -0.5, 1.0, probability=selective_probability("f", 0.5, (-0.5, 1.0), st))
        w = apply(m, WeylJet.trivial("g", 2), t)
        # the normalised selective map preserves the identity's expectation
        assert wick_expectation(w.coeffs[0], st) == pytest.approx(1.0, abs=1e-12)


class TestBinOverlap:
    grid = np.arange(-2.0, 2.0, 0.05)

    def test_zero_shift(self):
        assert all(bin_overlap_profile(1.0, 0.0, lam) == 1 for lam in self.grid)

    def test_full_shift(self):
        assert all(bin_overlap_profile(1.0, 1.0, lam) == 0 for lam in self.grid)

    def test_partial_shift_depends_on_lambda(self):
        vals = {bin_overlap_profile(1.0, 0.3, lam) for lam in self.grid}
        assert vals == {0, 1}


class TestComposition:
    def test_singleton_is_apply(self):
        t = toy_table()
        m = GaussianMeasureField("f", 0.5)
        jet = WeylJet.trivial("g", 2)
        assert apply_composition(Composition((m,)), jet, t).allclose(apply(m, jet, t))

    def test_spacelike_maps_commute(self, s2):
        jet = WeylJet.trivial("g", 2)
        a, b = GaussianMeasureField("f1", 0.5), KickField("h", 0.8)
        ab = apply_composition(Composition((a, b)), jet, s2)
        ba = apply_composition(Composition((b, a)), jet, s2)
        assert ab.allclose(ba, atol=1e-14)

    def test_s1_composition(self, s1):
        lam = 0.7
        c = Composition((KickField("h", 1.0), KickFieldSquared("f")), alice=0).with_strength(lam)
        out = jet_extract(apply_composition(c, WeylJet.trivial("g", 1), s1), 1, s1)
        expect = phi("g") - (phi("f") + OperatorPoly.scalar(lam * s1.d("f", "h"))) * (2 * s1.d("f", "g"))
        assert out.allclose(expect, atol=1e-15)

    def test_alice_must_be_kick(self):
        with pytest.raises(MapError):
            Composition((GaussianMeasureField("f", 0.5),), alice=0)
