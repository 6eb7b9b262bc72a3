"""End-to-end tests for the command-line entry points."""

import csv
import json
import os

import pytest

from nilrigid import cli, heisenberg

CAT_MAP = {"torus_dim": 2, "generators": [[["2", "1"], ["1", "1"]]]}


@pytest.fixture
def catmap_file(tmp_path):
    path = tmp_path / "catmap.json"
    path.write_text(json.dumps(CAT_MAP))
    return str(path)


def _read_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.reader(lines))


class TestParsing:
    def test_defaults(self):
        args = cli.build_parser().parse_args(["analyze", "x.json"])
        assert args.seed == 0
        assert args.precision_bits == 128
        assert args.out_dir == "nilrigid-out"

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("NILRIGID_THREADS", "4")
        assert cli._threads_from_env() == 4
        monkeypatch.setenv("NILRIGID_THREADS", "junk")
        assert cli._threads_from_env() == 1

    def test_missing_subcommand_rejected(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(["heisenberg"])


class TestAnalyze:
    def test_cat_map(self, catmap_file, tmp_path, capsys):
        out = str(tmp_path / "out")
        code = cli.main(["analyze", catmap_file, "--n-box", "2",
                         "--out-dir", out])
        assert code == cli.EXIT_OK
        text = capsys.readouterr().out
        assert "virtually cyclic algebraic factor: FOUND" in text

        doc = json.loads((tmp_path / "out" / "analyze.json").read_text())
        assert doc["header"]["seed"] == 0
        assert doc["header"]["precision_bits"] == 128
        assert doc["action"]["dim"] == 2
        # entropy at n = +-1 is log((3+sqrt(5))/2)
        lo, hi = doc["obstruction"]["entropy_table"]["1"]
        assert lo <= 0.9624236501192069 <= hi
        assert hi - lo < 1e-9

        rows = _read_csv(os.path.join(out, "entropy.csv"))
        assert rows[0] == ["n1", "entropy_lo", "entropy_hi"]
        assert len(rows) == 1 + 5
        assert os.path.exists(os.path.join(out, "entropy.png"))
        assert os.path.exists(os.path.join(out, "lyapunov.csv"))

    def test_malformed_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"torus_dim": 2,\n  "generators": [[[}')
        code = cli.main(["analyze", str(bad), "--out-dir",
                         str(tmp_path / "o")])
        assert code == cli.EXIT_INPUT
        err = capsys.readouterr().err
        assert "line 2" in err and "column" in err

    def test_missing_file(self, tmp_path, capsys):
        code = cli.main(["analyze", str(tmp_path / "nope.json"),
                         "--out-dir", str(tmp_path / "o")])
        assert code == cli.EXIT_INPUT

    def test_rank_mismatch_is_input_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({**CAT_MAP, "rank": 3}))
        code = cli.main(["analyze", str(bad), "--out-dir",
                         str(tmp_path / "o")])
        assert code == cli.EXIT_INPUT


class TestHeisenbergVerify:
    def test_packaged_fixtures_pass(self, tmp_path, capsys):
        out = str(tmp_path / "out")
        code = cli.main(["heisenberg", "verify", "--out-dir", out])
        assert code == cli.EXIT_OK
        doc = json.loads((tmp_path / "out" / "verify.json").read_text())
        assert doc["verified"] is True
        assert doc["failures"] == []

    def test_tampered_pair_fails(self, tmp_path, capsys):
        pair = heisenberg.load_katok_fixture()
        pair.A[0, 0] += 1
        fx = tmp_path / "tampered.json"
        heisenberg.save_katok_fixture(pair, str(fx))
        code = cli.main(["heisenberg", "verify", "--fixtures", str(fx),
                         "--out-dir", str(tmp_path / "out")])
        assert code == cli.EXIT_FAIL
        assert "FAILED" in capsys.readouterr().out

    def test_missing_fixtures_exhausted(self, tmp_path, capsys):
        code = cli.main(["heisenberg", "verify", "--fixtures",
                         str(tmp_path / "absent.json"),
                         "--out-dir", str(tmp_path / "out")])
        assert code == cli.EXIT_EXHAUSTED
        assert "run search first" in capsys.readouterr().err


class TestHeisenbergSearch:
    def test_tiny_bounds_exhaust(self, tmp_path, capsys):
        code = cli.main(["heisenberg", "search", "--poly-height-bound", "1",
                         "--centralizer-bound", "1",
                         "--out-dir", str(tmp_path / "out")])
        assert code == cli.EXIT_EXHAUSTED
        assert "search exhausted" in capsys.readouterr().err


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("demo"))
    code = cli.main(["heisenberg", "demo", "--samples", "200",
                     "--n-box", "1", "--seed", "7", "--out-dir", out])
    return code, out


class TestHeisenbergDemo:
    def test_exit_code(self, demo):
        code, _ = demo
        assert code == cli.EXIT_OK

    def test_artifacts(self, demo):
        _, out = demo
        for name in ("demo.json", "equivariance.csv", "character_sums.csv",
                     "orbit_trace.csv", "equivariance.png",
                     "character_sums.png"):
            assert os.path.exists(os.path.join(out, name)), name

    def test_report_contents(self, demo):
        _, out = demo
        doc = json.loads(open(os.path.join(out, "demo.json")).read())
        assert doc["header"]["seed"] == 7
        assert all(doc["checks"].values())
        assert doc["circle_radius"] == "5/64"
        assert doc["section_membership"] == 1.0
        assert doc["section_membership_after_center_translation"] == 0.0

    def test_equivariance_csv_shape(self, demo):
        _, out = demo
        rows = _read_csv(os.path.join(out, "equivariance.csv"))
        assert rows[0] == ["n1", "n2", "max_error"]
        assert len(rows) == 1 + 9  # n-box radius 1

    def test_orbit_trace_columns(self, demo):
        _, out = demo
        rows = _read_csv(os.path.join(out, "orbit_trace.csv"))
        assert rows[0] == ["n1", "n2"] + [f"c{j+1}" for j in range(13)]
        # every traced point is reduced to the fundamental domain
        for row in rows[1:]:
            assert all(-0.5 <= float(c) < 0.5 for c in row[2:14])

    def test_reproducible_bytes(self, demo, tmp_path):
        _, out = demo
        out2 = str(tmp_path / "rerun")
        code = cli.main(["heisenberg", "demo", "--samples", "200",
                         "--n-box", "1", "--seed", "7", "--out-dir", out2])
        assert code == cli.EXIT_OK
        for name in ("demo.json", "equivariance.csv", "character_sums.csv",
                     "orbit_trace.csv"):
            a = open(os.path.join(out, name), "rb").read()
            b = open(os.path.join(out2, name), "rb").read()
            assert a == b, name


class TestHPrinciple:
    def test_dim2_good_fractions(self, tmp_path, capsys):
        out = str(tmp_path / "out")
        code = cli.main(["hprinciple", "--dim", "2", "--out-dir", out])
        assert code == cli.EXIT_OK
        rows = _read_csv(os.path.join(out, "hprinciple.csv"))
        assert rows[0] == ["scale", "T", "max_w_perp", "eps",
                           "good_fraction", "verdict"]
        for row in rows[1:]:
            assert row[5] == "pass"
            assert float(row[4]) >= 1 - float(row[3])
        doc = json.loads((tmp_path / "out" / "hprinciple.json").read_text())
        assert doc["slope_ok"] is True
        assert abs(doc["slope"] - 0.5) / 0.5 < 0.15
        assert os.path.exists(os.path.join(out, "hprinciple.png"))

    def test_flow_fixed_direction_marked_infinite(self, tmp_path):
        out = str(tmp_path / "out")
        code = cli.main(["hprinciple", "--blocks", "3",
                         "--direction", "1,0,0", "--out-dir", out])
        assert code == cli.EXIT_OK
        rows = _read_csv(os.path.join(out, "hprinciple.csv"))
        assert all(row[1] == "INFINITE" for row in rows[1:])

    def test_explicit_blocks_random_direction(self, tmp_path):
        out = str(tmp_path / "out")
        code = cli.main(["hprinciple", "--blocks", "2,2", "--seed", "3",
                         "--out-dir", out])
        rows = _read_csv(os.path.join(out, "hprinciple.csv"))
        assert len(rows) == 1 + 9
        assert code in (cli.EXIT_OK, cli.EXIT_FAIL)  # slope target is 1/dim

    def test_csv_header_records_seed(self, tmp_path):
        out = str(tmp_path / "out")
        cli.main(["hprinciple", "--dim", "2", "--seed", "99",
                  "--out-dir", out])
        head = open(os.path.join(out, "hprinciple.csv")).readline()
        second = open(os.path.join(out, "hprinciple.csv")).readlines()[1]
        assert head.startswith("# nilrigid")
        assert "seed=99" in second
