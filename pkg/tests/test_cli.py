"""Command-line frontend tests: envelopes, exit codes, files, determinism."""

import json
import math

import pytest

from oamqkd.cli import main


def run_cli(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def run_json(capsys, argv):
    code, out, err = run_cli(capsys, argv)
    assert code == 0, err
    return json.loads(out)


class TestModesCommand:
    def test_order_three_overlap_constant(self, capsys):
        env = run_json(capsys, ["modes", "--order", "3"])
        assert env["results"]["pmub"]["c"] == pytest.approx(0.375, abs=1e-12)
        assert env["command"] == "modes"
        assert env["tool_version"]

    def test_order_one_uncertainty(self, capsys):
        env = run_json(capsys, ["modes", "--order", "1"])
        assert env["results"]["pmub"]["q_mu"] == pytest.approx(1.0, abs=1e-12)

    def test_even_order_usage_error(self, capsys):
        code, _, err = run_cli(capsys, ["modes", "--order", "4"])
        assert code == 2
        assert "order must be odd" in err

    def test_render_writes_graymaps(self, capsys, tmp_path):
        env = run_json(
            capsys,
            ["modes", "--order", "1", "--render", "--grid-size", "33",
             "--out-dir", str(tmp_path), "--no-plot"],
        )
        files = env["results"]["files"]
        assert len(files) == 4
        first = tmp_path / "modes_order1_l0.pgm"
        assert first.read_text().startswith("P2\n33 33\n255\n")

    def test_render_gallery_png(self, capsys, tmp_path):
        env = run_json(
            capsys,
            ["modes", "--order", "1", "--render", "--grid-size", "33",
             "--out-dir", str(tmp_path)],
        )
        assert any(f.endswith(".png") for f in env["results"]["files"])


class TestKeyrateCommand:
    def test_analytic_anchor(self, capsys):
        env = run_json(capsys, ["keyrate", "analytic", "--qber", "0", "--order", "3"])
        assert env["results"]["keyRate"] == pytest.approx(1.41504, abs=1e-5)

    def test_numerical_bb84_threshold(self, capsys):
        env = run_json(
            capsys,
            ["keyrate", "numerical", "--preset", "bb84", "--qber", "0.11",
             "--starts", "6", "--max-evals", "9000"],
        )
        res = env["results"]
        assert res["keyRate"] == pytest.approx(0.0, abs=0.02)
        assert res["converged"]
        assert len(res["lambdas"]) == 3
        assert env["tolerances"]["xatol"] == 1e-7
        assert "seed" in env

    def test_numerical_nonconvergence_exit_code(self, capsys):
        code, out, _ = run_cli(
            capsys,
            ["keyrate", "numerical", "--preset", "paper-eq10", "--qber", "0.08",
             "--starts", "2", "--max-evals", "1500"],
        )
        assert code == 1
        env = json.loads(out)  # best certificate still emitted
        assert env["results"]["converged"] is False

    def test_sweep_csv(self, capsys, tmp_path):
        env = run_json(
            capsys,
            ["keyrate", "numerical", "--preset", "bb84", "--qber", "0.05",
             "--sweep", "--q-max", "0.02", "--q-step", "0.02",
             "--starts", "3", "--max-evals", "2000", "--out-dir", str(tmp_path)],
        )
        path = tmp_path / "keyrate_bb84_sweep.csv"
        lines = path.read_text().splitlines()
        assert lines[0] == "q,key_rate"
        assert len(lines) == 3


class TestSimulateCommand:
    def test_zero_rounds_usage_error(self, capsys):
        code, _, err = run_cli(capsys, ["simulate", "--rounds", "0"])
        assert code == 2
        assert "rounds" in err

    def test_byte_identical_under_seed(self, capsys):
        argv = ["simulate", "--rounds", "2e4", "--qber", "0.12", "--seed", "99"]
        _, out1, _ = run_cli(capsys, argv)
        _, out2, _ = run_cli(capsys, argv)
        assert out1 == out2
        env = json.loads(out1)
        assert env["seed"] == 99
        assert env["results"]["stats"]["raw_key_length"] > 0

    def test_raw_key_files(self, capsys, tmp_path):
        env = run_json(
            capsys,
            ["simulate", "--rounds", "1000", "--qber", "0.0", "--raw-keys", "run1",
             "--out-dir", str(tmp_path)],
        )
        alice = (tmp_path / "run1_alice.txt").read_text().split()
        bob = (tmp_path / "run1_bob.txt").read_text().split()
        assert alice == bob
        assert set(alice) <= {"0", "1", "2", "3"}
        assert len(alice) == env["results"]["stats"]["raw_key_length"]

    def test_envelope_roundtrip(self, capsys):
        env = run_json(capsys, ["simulate", "--rounds", "100", "--qber", "0.1"])
        assert json.loads(json.dumps(env)) == env


class TestApparatusCommand:
    def test_default_mapping(self, capsys):
        env = run_json(capsys, ["apparatus"])
        assert env["results"]["channel_modes"] == [
            {"p": 0, "l": 3}, {"p": 0, "l": -3}, {"p": 1, "l": 1}, {"p": 1, "l": -1}
        ]

    def test_bad_stage_table(self, capsys, tmp_path):
        stages = tmp_path / "stages.json"
        stages.write_text(json.dumps([{"alpha": "pi/4"}]))
        sources = tmp_path / "sources.json"
        sources.write_text(json.dumps([{"p": 0, "l": 2}]))
        code, _, err = run_cli(
            capsys, ["apparatus", "--stages", str(stages), "--sources", str(sources)]
        )
        assert code == 2
        assert "superposed" in err

    def test_custom_stage_file_round_trip(self, capsys, tmp_path):
        stages = [
            {"alpha": "pi/4", "port_a": {"shift": -2, "dest": 1}, "port_b": {"shift": 0, "dest": 1}},
            {"alpha": "pi/2", "port_a": {"shift": 0}, "port_b": {"shift": -1}},
        ]
        path = tmp_path / "stages.json"
        path.write_text(json.dumps(stages))
        env = run_json(capsys, ["apparatus", "--stages", str(path)])
        assert env["results"]["channel_modes"][0] == {"p": 0, "l": 3}


class TestTurbulenceCommand:
    def test_profile_and_qber(self, capsys):
        env = run_json(
            capsys,
            ["turbulence", "--r0", "0.2", "--beam-b", "0.01", "--max-dl", "10"],
        )
        res = env["results"]
        assert len(res["profiles"]) == 4
        probs = res["profiles"][0]["probs"]
        assert probs["1"] == pytest.approx(probs["-1"], abs=1e-6)
        assert 0.0 < res["qber"] < 0.5
        assert env["tolerances"]["quad_abs_tol"] == 1e-9

    def test_requires_strength(self, capsys):
        code, _, err = run_cli(capsys, ["turbulence", "--beam-b", "0.01"])
        assert code == 2
        assert "turbulence strength" in err


class TestFigureCommand:
    def test_unknown_name_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["figure", "fig9"])
        assert exc.value.code == 2

    def test_fig4_files_and_anchors(self, capsys, tmp_path):
        env = run_json(
            capsys,
            ["figure", "fig4", "--points", "4", "--ratio-max", "0.12",
             "--max-dl", "20", "--out-dir", str(tmp_path)],
        )
        lines = (tmp_path / "fig4.csv").read_text().splitlines()
        header = lines[0].split(",")
        assert header[0] == "ratio"
        assert "mean_p0" in header
        first = dict(zip(header, lines[1].split(",")))
        assert float(first["mean_p0"]) == pytest.approx(1.0, abs=1e-3)
        assert (tmp_path / "fig4.png").exists()

    def test_fig5_determinism(self, capsys, tmp_path):
        argv = ["figure", "fig5", "--samples", "5", "--ratio", "0.1", "--seed", "4",
                "--no-plot", "--out-dir", str(tmp_path)]
        code, out1, _ = run_cli(capsys, argv)
        assert code == 0
        csv1 = (tmp_path / "fig5.csv").read_bytes()
        _, out2, _ = run_cli(capsys, argv)
        csv2 = (tmp_path / "fig5.csv").read_bytes()
        assert out1 == out2
        assert csv1 == csv2

    def test_fig3_columns(self, capsys, tmp_path):
        env = run_json(
            capsys,
            ["figure", "fig3", "--q-max", "0.0", "--q-step", "0.01",
             "--max-evals", "2000", "--no-plot", "--out-dir", str(tmp_path)],
        )
        lines = (tmp_path / "fig3.csv").read_text().splitlines()
        assert lines[0] == "q,key_rate_4d,key_rate_bb84,key_rate_eq10,eq10_converged"
        row = lines[1].split(",")
        assert float(row[2]) == pytest.approx(1.0, abs=0.02)  # bb84 at q = 0


class TestConfigFile:
    def test_config_sets_defaults_and_flags_override(self, capsys, tmp_path):
        config = tmp_path / "conf.json"
        config.write_text(json.dumps({"qber": 0.25, "rounds": "500"}))
        env = run_json(
            capsys,
            ["--config", str(config), "simulate", "--qber", "0.0"],
        )
        assert env["params"]["rounds"] == 500
        assert env["params"]["qber"] == 0.0  # explicit flag wins

    def test_unknown_config_key_rejected(self, capsys, tmp_path):
        config = tmp_path / "conf.json"
        config.write_text(json.dumps({"bogus": 1}))
        code, _, err = run_cli(capsys, ["--config", str(config), "simulate", "--rounds", "10"])
        assert code == 2
        assert "bogus" in err

    def test_outdir_env_var(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("OAMQKD_OUTDIR", str(tmp_path))
        run_json(capsys, ["simulate", "--rounds", "100", "--raw-keys", "envrun"])
        assert (tmp_path / "envrun_alice.txt").exists()
