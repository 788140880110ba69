import math

import numpy as np
import pytest

from qftcausal.algebra import OperatorPoly, multiply
from qftcausal.protocol import (
    Jordan,
    Power,
    ProtocolError,
    build_composition,
    build_table,
    check_protocol,
    load_fixture,
    lower_observable,
    parse_observable,
    parse_protocol,
    parse_sweep,
    print_observable,
    print_protocol,
    rename,
    run_protocol,
)

FIXTURES = [
    "s1_kick_squared",
    "s1_kick",
    "s1_generators",
    "s2_commuting_poly",
    "s3_jordan_pair",
    "s4_locc",
    "s5_scatter",
]

MINIMAL = """
[field]
mass = 1.0

[function f]
center = 0.0, 0.0
half_width = 0.4
amplitude = 10

[function g]
center = 1.5, 1.8
half_width = 0.4
amplitude = 10

[readout]
observable = phi(g)
"""


def with_lines(*extra):
    return MINIMAL + "\n".join(extra) + "\n"


class TestObservableGrammar:
    @pytest.mark.parametrize(
        "text",
        ["phi(g)", "phi(g)^2", "2.5 * phi(f) - phi(g)", "jordan(phi(f), phi(g))", "(phi(f) + 1)^2", "0 - phi(f)"],
    )
    def test_round_trip(self, text):
        node = parse_observable(text)
        assert parse_observable(print_observable(node)) == node

    def test_structure(self):
        assert isinstance(parse_observable("phi(a)^2"), Power)
        assert isinstance(parse_observable("jordan(phi(a), phi(b))"), Jordan)

    def test_error_column(self):
        with pytest.raises(ProtocolError) as err:
            parse_observable("phi(g) + ", line=3, column=14)
        assert err.value.line == 3 and err.value.column == 23

    def test_jordan_lowering(self, fixture_tables):
        t = fixture_tables("s3_jordan_pair")[1]
        a, b = OperatorPoly.field("f1"), OperatorPoly.field("f2")
        expect = (multiply(a, b, t) + multiply(b, a, t)) * 0.5
        assert lower_observable(parse_observable("jordan(phi(f1), phi(f2))"), t).allclose(expect)


class TestParser:
    def test_minimal(self):
        spec = parse_protocol(MINIMAL)
        assert [f.name for f in spec.functions] == ["f", "g"]
        assert spec.readout.lambdas == (0.0,)

    @pytest.mark.parametrize("name", FIXTURES)
    def test_fixtures_round_trip(self, name):
        spec = load_fixture(name)
        assert parse_protocol(print_protocol(spec), spec.base_dir) == spec

    def test_sweep(self):
        assert parse_sweep("-1:1:0.5") == (-1.0, -0.5, 0.0, 0.5, 1.0)
        with pytest.raises(ProtocolError):
            parse_sweep("1:0:0.5")

    def test_unknown_key_has_line(self):
        text = MINIMAL.replace("mass = 1.0", "mass = 1.0\ncolour = red")
        with pytest.raises(ProtocolError) as err:
            parse_protocol(text)
        assert err.value.line == 4

    def test_unresolved_name(self):
        with pytest.raises(ProtocolError, match="unresolved"):
            parse_protocol(with_lines("[op 1]", "map = kick", "field = nope", "strength = 1"))

    def test_duplicate_function(self):
        with pytest.raises(ProtocolError, match="duplicate function"):
            parse_protocol(MINIMAL + "[function f]\ncenter = 0, 0\nhalf_width = 0.4\n")

    def test_conditional_is_reserved(self):
        with pytest.raises(ProtocolError, match="reserved"):
            parse_protocol(with_lines("[op 1]", "map = kick", "field = f", "if = outcome > 0"))

    def test_unknown_map(self):
        with pytest.raises(ProtocolError, match="unknown map"):
            parse_protocol(with_lines("[op 1]", "map = teleport", "field = f"))

    def test_op_indices_increase(self):
        op = ("map = kick", "field = f", "strength = 1")
        text = with_lines("[op 2]", *op, "[op 1]", *op)
        with pytest.raises(ProtocolError, match="increase"):
            parse_protocol(text)

    def test_missing_readout(self):
        with pytest.raises(ProtocolError, match="readout"):
            parse_protocol("[field]\nmass = 1\n")

    def test_lambda_and_sweep_exclusive(self):
        text = MINIMAL + "lambda = 0, 1\nsweep = 0:1:0.5\n"
        with pytest.raises(ProtocolError, match="either"):
            parse_protocol(text)


class TestRun:
    def test_s1_signal_column(self, fixture_tables):
        spec, t = fixture_tables("s1_kick_squared")
        r = run_protocol(spec, table=t)
        expect = 2 * r.lambdas * t.d("h", "f") * t.d("f", "g")
        np.testing.assert_allclose(r.values.real, expect, rtol=1e-9)

    def test_csv_columns(self, fixture_tables):
        spec, t = fixture_tables("s1_kick")
        lines = run_protocol(spec, table=t).to_csv().splitlines()
        assert lines[0] == "lambda,analytic_re,analytic_im,mc_estimate,mc_se"
        assert len(lines) == 1 + len(spec.readout.lambdas)

    def test_monte_carlo_column(self, fixture_tables):
        spec, t = fixture_tables("s3_jordan_pair")
        r = run_protocol(spec, table=t, samples=200_000)
        for row in r.rows:
            assert abs(row.mc_estimate - row.analytic.real) < 5 * row.mc_se

    def test_mc_disabled_gives_nan(self, fixture_tables):
        spec, t = fixture_tables("s1_kick")
        assert all(math.isnan(row.mc_estimate) for row in run_protocol(spec, table=t).rows)

    def test_composition_marks_alice(self, fixture_tables):
        spec, t = fixture_tables("s1_generators")
        c = build_composition(spec, t, 0.3)
        assert c.alice == spec.alice_index == 0

    def test_ordering_violation(self):
        text = with_lines(
            "[op 1]", "map = gaussian", "field = g", "sigma = 0.5", "region = 2, 3, -0.5, 0.5",
            "[op 2]", "map = gaussian", "field = f", "sigma = 0.5", "region = -0.5, 0.5, -0.5, 0.5",
        )
        with pytest.raises(ProtocolError, match="totally before"):
            run_protocol(parse_protocol(text))

    def test_lattice_backend_matches_quadrature(self):
        quad = build_table(parse_protocol(MINIMAL))
        lat = build_table(parse_protocol(MINIMAL.replace("mass = 1.0", "mass = 1.0\nbackend = lattice")))
        assert abs(lat.d("f", "g") - quad.d("f", "g")) < 0.02 * abs(quad.d("f", "g"))


class TestCheck:
    @pytest.mark.parametrize(
        "name, acausal",
        [
            ("s1_kick_squared", True),
            ("s1_kick", False),
            ("s1_generators", False),
            ("s2_commuting_poly", True),
            ("s3_jordan_pair", True),
            ("s4_locc", False),
        ],
    )
    def test_fixture_verdicts(self, fixture_tables, name, acausal):
        spec, t = fixture_tables(name)
        assert check_protocol(spec, table=t).acausal is acausal

    def test_s1_witness(self, fixture_tables):
        spec, t = fixture_tables("s1_kick_squared")
        op = check_protocol(spec, table=t).operations[1]
        assert op.support.witnesses[0][0] == "f"

    def test_renaming_invariance(self, fixture_tables):
        spec, t = fixture_tables("s2_commuting_poly")
        other = rename(spec, functions={"f1": "p", "f2": "q", "g": "bob"}, agents={"Charlie": "Eve"})
        a = check_protocol(spec, table=t)
        b = check_protocol(other)
        assert [o.verdict for o in a.operations] == [o.verdict for o in b.operations]
        np.testing.assert_allclose(
            np.array(a.signal.coefficients), np.array(b.signal.coefficients), rtol=1e-12, atol=1e-15
        )
        assert b.operations[1].agent == "Eve"
