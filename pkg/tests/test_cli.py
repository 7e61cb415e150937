import json

import pytest

from qbnwalk.cli import main, merge_config, build_parser
from qbnwalk.errors import SpecParseError
from qbnwalk.stats import Distribution, binomial_reference, total_variation


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main([*argv, "--out-dir", str(out)])
    return code, out


def files(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())} if out.exists() else {}


class TestSimulateOpen:
    def test_weights_binomial(self, tmp_path):
        code, out = run(tmp_path, "simulate-open", "--d", "1", "--steps", "4",
                        "--initial", "dirac:sigma=;x=0", "--engine", "weights")
        assert code == 0
        dist = Distribution.from_csv((out / "distribution.csv").read_text())
        assert total_variation(dist, binomial_reference(4)) <= 1e-12

    def test_zero_steps_is_delta(self, tmp_path):
        code, out = run(tmp_path, "simulate-open", "--steps", "0", "--initial", "dirac:sigma=1;x=3")
        assert code == 0
        assert (out / "distribution.csv").read_text() == "x1,p\n3,1\n"

    @pytest.mark.parametrize("engine", ["dense", "retire", "weights"])
    def test_snapshot_json(self, tmp_path, engine):
        code, out = run(tmp_path, "simulate-open", "--steps", "3", "--initial", "dirac:sigma=0;x=0",
                        "--engine", engine, "--snapshot", "--format", "json")
        assert code == 0
        doc = json.loads((out / "distribution.json").read_text())
        assert doc["engine"] == engine and doc["pass"] is True
        assert (out / "nucleus.snapshot").read_text().startswith("# qbnwalk nucleus snapshot")

    def test_permuted_iso(self, tmp_path):
        base = ["simulate-open", "--d", "2", "--steps", "3", "--initial", "dirac:sigma=0;x=0,0"]
        _, a = run(tmp_path, *base, "--engine", "dense", name="a")
        _, b = run(tmp_path, *base, "--iso", "perm:7", name="b")
        da = Distribution.from_csv((a / "distribution.csv").read_text())
        db = Distribution.from_csv((b / "distribution.csv").read_text())
        assert da.max_abs_gap(db) <= 1e-12


class TestOtherCommands:
    def test_compare_example(self, tmp_path):
        code, out = run(tmp_path, "compare", "--d", "1", "--steps", "6", "--initial", "dirac:sigma=0,2;x=0")
        assert code == 0
        rows = (out / "witness.csv").read_text().splitlines()
        assert rows[0] == "n,x,gap,expected,threshold"
        assert float(rows[1].split(",")[2]) >= 0.4
        gaps = [float(r.split(",")[1]) for r in (out / "compare.csv").read_text().splitlines()[1:]]
        assert len(gaps) == 6 and max(gaps) <= 1e-12

    def test_simulate_unitary(self, tmp_path):
        code, out = run(tmp_path, "simulate-unitary", "--steps", "5", "--initial", "dirac:sigma=;x=0")
        assert code == 0
        assert set(files(out)) == {"distribution.csv", "state.snapshot"}
        dist = Distribution.from_csv((out / "distribution.csv").read_text())
        assert total_variation(dist, binomial_reference(5)) <= 1e-12

    def test_unitary_rejects_mixture(self, tmp_path):
        code, out = run(tmp_path, "simulate-unitary", "--initial",
                        "mix:0.5*(dirac:sigma=;x=0)+0.5*(dirac:sigma=1;x=0)")
        assert code == 2 and not out.exists()

    def test_clt(self, tmp_path):
        code, out = run(tmp_path, "clt", "--ns", "4,16")
        assert code == 0
        assert {"charfn_n4.csv", "charfn_n16.csv", "moments_n16.csv", "sup_error.csv"} <= set(files(out))

    def test_clt_json_d2(self, tmp_path):
        code, out = run(tmp_path, "clt", "--d", "2", "--ns", "4,16", "--t-max", "1", "--t-step", "0.5",
                        "--format", "json")
        assert code == 0
        doc = json.loads((out / "clt.json").read_text())
        assert doc["strictly_decreasing"] is True and doc["engine"] == "weights"

    def test_verify_algebra(self, tmp_path):
        code, out = run(tmp_path, "verify-algebra", "--d", "2", "--modes", "3", "--seed", "3")
        assert code == 0
        assert (out / "verify_algebra.csv").read_text().startswith("name,residual,tol,pass\n")

    def test_verify_channel(self, tmp_path):
        code, out = run(tmp_path, "verify-channel", "--modes", "2", "--format", "json")
        assert code == 0
        assert json.loads((out / "verify_channel.json").read_text())["pass"] is True


class TestConfig:
    def test_deterministic_bytes(self, tmp_path):
        argv = ["compare", "--d", "2", "--steps", "3", "--initial", "dirac:sigma=0;x=0,0"]
        run(tmp_path, *argv, name="a")
        run(tmp_path, *argv, name="b")
        assert files(tmp_path / "a") == files(tmp_path / "b")

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# scenario\nsteps = 2\ninitial = dirac:sigma=;x=0\nengine = weights\nformat = json\n")
        code, out = run(tmp_path, "simulate-open", "--config", str(cfg), "--steps", "5")
        assert code == 0
        doc = json.loads((out / "distribution.json").read_text())
        assert doc["steps"] == 5 and doc["engine"] == "weights"

    @pytest.mark.parametrize("argv,key", [
        (["simulate-open", "--initial", "dirac:sigma=;x=0", "--steps", "3", "--modes", "2"], "modes"),
        (["simulate-open", "--initial", "dirac:sigma=;x=0,0"], "initial"),
        (["simulate-open", "--initial", "dirac:sigma=;x=0", "--engine", "separable"], "engine"),
        (["simulate-open", "--initial", "dirac:sigma=;x=0", "--iso", "shuffle"], "iso"),
        (["simulate-open", "--initial", "dirac:sigma=;x=0", "--steps", "-1"], "steps"),
        (["clt", "--ns", "4,x"], "ns"),
        (["compare", "--initial", "pure:x=0;amps=0:1:0"], "initial"),
    ])
    def test_errors_exit_2_without_artifacts(self, tmp_path, capsys, argv, key):
        code, out = run(tmp_path, *argv)
        assert code == 2 and not out.exists()
        assert key in capsys.readouterr().err

    def test_unknown_key_in_file(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("initial = dirac:sigma=;x=0\nwalkers = 3\n")
        code, out = run(tmp_path, "simulate-open", "--config", str(cfg))
        assert code == 2 and not out.exists()
        assert "walkers" in capsys.readouterr().err

    def test_inapplicable_key_named(self):
        args = build_parser().parse_args(["compare", "--initial", "dirac:sigma=;x=0"])
        args.seed = 4
        with pytest.raises(SpecParseError) as exc:
            merge_config("compare", args)
        assert exc.value.key == "seed"

    def test_seed_flag_only_on_verify(self):
        with pytest.raises(SystemExit) as exc:
            main(["simulate-open", "--seed", "1", "--initial", "dirac:sigma=;x=0"])
        assert exc.value.code == 2
