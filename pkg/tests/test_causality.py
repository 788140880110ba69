import json

import pytest

from qftcausal.algebra import GaussianState, OperatorPoly, WeylJet, multiply
from qftcausal.causality import (
    CausalityError,
    Verdict,
    evolve_observable,
    psni_check,
    relocalization_search,
    signal_gradient,
)
from qftcausal.geometry import CausalRelation, Point, Rect, RegionSet, causal_relation
from qftcausal.maps import (
    Composition,
    GaussianMeasureCommutingPoly,
    GaussianMeasureField,
    KickField,
    KickFieldSquared,
    apply,
)

phi = OperatorPoly.field


def square(t, x, a=0.4):
    return RegionSet([Rect.square(Point(t, x), a)])


@pytest.fixture(scope="module")
def s1(fixture_tables):
    return fixture_tables("s1_kick_squared")[1]


@pytest.fixture(scope="module")
def s2(fixture_tables):
    return fixture_tables("s2_commuting_poly")[1]


@pytest.fixture(scope="module")
def s4(fixture_tables):
    return fixture_tables("s4_locc")[1]


class TestPsni:
    def test_gaussian_adds_no_labels(self, s1):
        out = apply(GaussianMeasureField("f", 0.5), WeylJet.trivial("g", 2), s1)
        rep = psni_check(out, s1.supports["g"], s1)
        assert rep.verdict is Verdict.CAUSAL and rep.new_support is None

    def test_kick_squared_is_acausal_with_witness(self, s1):
        out = apply(KickFieldSquared("f"), WeylJet.trivial("g", 1), s1)
        rep = psni_check(out, s1.supports["g"], s1)
        assert rep.verdict is Verdict.ACAUSAL
        assert set(rep.new_labels) == {"f"}
        lab, p, q = rep.witnesses[0]
        assert lab == "f" and s1.supports["f"].contains(p)
        assert causal_relation(p, q) is not CausalRelation.Q_IN_FUTURE_OF_P

    def test_commuting_poly_pulls_in_f1(self, s2):
        C = multiply(phi("f1"), phi("f2"), s2)
        out = apply(GaussianMeasureCommutingPoly(C, 0.5), WeylJet.trivial("g", 2), s2)
        rep = psni_check(out, s2.supports["g"], s2)
        assert rep.verdict is Verdict.ACAUSAL and "f1" in rep.new_labels

    def test_new_label_in_past_is_inconclusive(self, s4):
        # f1 lies in the causal past of g, so its appearance proves nothing
        out = phi("g") + phi("f1") * 0.3
        rep = psni_check(out, s4.supports["g"], s4, original_labels=["g"])
        assert rep.verdict is Verdict.INCONCLUSIVE

    def test_repair_reports_exhaustion(self, s1):
        out = apply(KickFieldSquared("f"), WeylJet.trivial("g", 1), s1)
        rep = psni_check(out, s1.supports["g"], s1, repair=True)
        assert [r.status for r in rep.repair] == ["search exhausted"]

    def test_unregistered_label(self, s1):
        with pytest.raises(CausalityError):
            psni_check(phi("g") + phi("zz"), s1.supports["g"], s1, original_labels=["g"])

    def test_json_report(self, s1):
        out = apply(KickFieldSquared("f"), WeylJet.trivial("g", 1), s1)
        d = json.loads(psni_check(out, s1.supports["g"], s1).to_json())
        assert d["verdict"] == "acausal" and list(d["new_labels"]) == ["f"]


class TestRelocalization:
    def test_finds_slab_for_past_support(self):
        r = relocalization_search("f", square(3.0, 0.0), square(0.0, 0.0))
        assert r.status == "relocalised"

    def test_exhausts_for_spacelike_support(self):
        r = relocalization_search("f", square(0.0, 0.0), square(0.0, 5.0), slabs=8)
        assert r.found is None and r.candidates == 8


class TestSignalGradient:
    def test_s1_linear_signal(self, s1):
        c = Composition((KickField("h"), KickFieldSquared("f")), alice=0)
        rep = signal_gradient(c, ("g", 1), GaussianState(s1))
        expect = 2 * s1.d("h", "f") * s1.d("f", "g")
        assert rep.signal
        assert abs(rep.coefficients[1] - expect) < 1e-9 * abs(expect)

    def test_gaussian_is_silent(self, s1):
        c = Composition((KickField("h"), GaussianMeasureField("f", 0.5)), alice=0)
        rep = signal_gradient(c, ("g", 2), GaussianState(s1))
        assert not rep.signal and rep.max_gradient() < 1e-12

    def test_polynomial_observable(self, s1):
        c = Composition((KickField("h"), KickFieldSquared("f")), alice=0)
        a = signal_gradient(c, ("g", 1), GaussianState(s1))
        b = signal_gradient(c, phi("g"), GaussianState(s1))
        assert abs(a.coefficients[1] - b.coefficients[1]) < 1e-15

    def test_needs_alice(self, s1):
        with pytest.raises(CausalityError):
            signal_gradient(Composition((KickField("h"),)), ("g", 1), GaussianState(s1))

    def test_needs_enough_lambdas(self, s1):
        c = Composition((KickField("h"),), alice=0)
        with pytest.raises(CausalityError):
            signal_gradient(c, ("g", 1), GaussianState(s1), lambdas=(0.0, 1.0))

    def test_alice_must_be_spacelike_to_bob(self, s1):
        c = Composition((KickField("h"),), alice=0)
        with pytest.raises(CausalityError, match="spacelike"):
            signal_gradient(c, ("f", 1), GaussianState(s1))


def test_evolve_without_composition(s1):
    assert evolve_observable(None, ("g", 1), s1).allclose(phi("g"))
