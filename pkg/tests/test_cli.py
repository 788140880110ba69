import json

import numpy as np
import pytest

from qftcausal.cli import main
from qftcausal.protocol import fixture_path
from qftcausal.sampler import OutcomeBatch
from qftcausal.smearing import SampledFunction


def fx(name):
    return str(fixture_path(name))


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestDelta:
    def test_cosine_pair(self, capsys):
        code, out, _ = run(capsys, "delta", "cosine_bump:0,0,0.4,10", "cosine_bump:1.5,1.8,0.4,10")
        assert code == 0
        assert float(out) == pytest.approx(-0.17315531689496547, rel=1e-9)

    def test_names_from_spec(self, capsys):
        code, out, _ = run(capsys, "delta", "f1", "f2", "--spec", fx("s2_commuting_poly"))
        assert code == 0 and float(out) == 0.0

    def test_bad_argument(self, capsys):
        code, _, err = run(capsys, "delta", "cosine_bump:0,0", "cosine_bump:1,1,0.4")
        assert code == 1 and "error" in err


class TestRun:
    def test_csv(self, capsys):
        code, out, _ = run(capsys, "run", fx("s1_kick"), "--sweep", "-1:1:1")
        rows = out.strip().splitlines()
        assert code == 0 and rows[0].startswith("lambda,") and len(rows) == 4

    def test_out_relative_to_workdir(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("QFTCAUSAL_WORKDIR", str(tmp_path))
        assert run(capsys, "run", fx("s1_kick"), "--out", "r.csv")[0] == 0
        assert (tmp_path / "r.csv").read_text().startswith("lambda,")


class TestCheck:
    def test_acausal_exit_code(self, capsys):
        code, out, _ = run(capsys, "check", fx("s1_kick_squared"))
        assert code == 2 and "overall = acausal" in out

    def test_causal_json(self, capsys):
        code, out, _ = run(capsys, "check", fx("s1_generators"), "--json")
        assert code == 0 and json.loads(out)["overall"] == "causal"

    def test_missing_file(self, capsys):
        assert run(capsys, "check", "/nonexistent/x.qfc")[0] == 1


class TestSample:
    def test_pair_uses_jordan(self, capsys, tmp_path):
        out = tmp_path / "a.csv"
        code, _, _ = run(
            capsys, "sample", fx("s3_jordan_pair"), "--n", "500", "--fields", "f1", "f2", "--out", str(out)
        )
        alphas = OutcomeBatch.read_csv(out.read_text())
        assert code == 0 and alphas.shape == (500, 2)

    def test_thread_env(self, capsys, monkeypatch):
        a = run(capsys, "sample", fx("s2_commuting_poly"), "--n", "70000", "--seed", "3")[1]
        monkeypatch.setenv("QFTCAUSAL_THREADS", "3")
        b = run(capsys, "sample", fx("s2_commuting_poly"), "--n", "70000", "--seed", "3")[1]
        assert a == b


class TestLatticeCommands:
    def test_move_support(self, capsys, tmp_path):
        out = tmp_path / "g.txt"
        code, text, _ = run(
            capsys, "move-support", fx("s5_scatter"), "--function", "f", "--slab", "1.0:2.0", "--out", str(out)
        )
        assert code == 0
        err = float(text.split("relative_sup_error_outside_slab = ")[1])
        assert err < 0.01
        g = SampledFunction.load(out)
        rows = np.nonzero(np.any(g.values != 0, axis=1))[0]
        t = g.origin.t + rows * g.spacing
        assert t.min() >= 1.0 - 1e-12 and t.max() <= 2.0 + 1e-12

    def test_scatter_against(self, capsys):
        code, text, _ = run(
            capsys, "scatter", fx("s5_scatter"), "--function", "f", "--chi", "chi",
            "--kappa", "0", "--slab", "2.0:2.6", "--against", "g",
        )
        assert code == 0 and "effective_delta" in text

    def test_scatter_slab_before_interaction(self, capsys):
        code, _, err = run(
            capsys, "scatter", fx("s5_scatter"), "--function", "f", "--chi", "chi",
            "--kappa", "0.1", "--slab", "0.5:1.0",
        )
        assert code == 1 and "interaction" in err


def test_unknown_command_exits_1():
    with pytest.raises(SystemExit) as err:
        main(["teleport"])
    assert err.value.code == 1
