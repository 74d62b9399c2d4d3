"""Config-driven runner: stages, exit codes, artifacts and determinism."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from dissipasynth import Controller, DataRecord
from dissipasynth.cli import main

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
SCALAR = CONFIG_DIR / "scalar_hinf.json"


def load_scalar_config():
    with open(SCALAR) as f:
        return json.load(f)


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_tree(out_dir):
    return {p.name: p.read_bytes() for p in sorted(Path(out_dir).iterdir())}


class TestConfigValidation:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.json")]) == 1
        err = capsys.readouterr().err
        assert "not found" in err

    def test_nonpositive_eps_exit_1(self, tmp_path, capsys):
        cfg = load_scalar_config()
        cfg["recording"]["noise"]["energy_eps"] = 0.0
        path = write_config(tmp_path, cfg)
        assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 1
        events = [json.loads(line)
                  for line in capsys.readouterr().err.splitlines()]
        assert any(e["level"] == "error"
                   and "energy_eps must be positive" in e["message"]
                   for e in events)

    def test_both_supply_modes_rejected(self, tmp_path):
        cfg = load_scalar_config()
        cfg["supply"]["general"] = {"Q": [[-1.0]], "S": [[0.0]],
                                    "R": [[1.0]]}
        path = write_config(tmp_path, cfg)
        assert main(["run", str(path)]) == 1

    def test_missing_section_rejected(self, tmp_path):
        cfg = load_scalar_config()
        del cfg["verification"]
        path = write_config(tmp_path, cfg)
        assert main(["run", str(path)]) == 1

    def test_missing_input_file_rejected(self, tmp_path):
        cfg = load_scalar_config()
        cfg["recording"]["input"] = {"policy": "file", "path": "nope.json"}
        path = write_config(tmp_path, cfg)
        assert main(["run", str(path)]) == 1

    def test_bad_alpha_grid_rejected(self, tmp_path):
        path = write_config(tmp_path, load_scalar_config())
        assert main(["synth", str(path), "--alpha-grid", "oops"]) == 1


class TestRun:
    def test_scalar_run_artifacts_and_golden_gamma(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", str(SCALAR), "--out", str(out)]) == 0
        for name in ("record.json", "consistency.json", "result.json",
                     "alpha_trace.csv", "gain_curve.csv", "report.json"):
            assert (out / name).exists(), name
        with open(out / "result.json") as f:
            doc = json.load(f)
        with open(CONFIG_DIR / "expected_outputs.json") as f:
            expected = json.load(f)["scalar_hinf"]
        assert doc["gamma"] == pytest.approx(expected["gamma_2sf"],
                                             rel=expected["rel_tol"])
        with open(out / "report.json") as f:
            report = json.load(f)
        assert report["all_certified"]

    def test_infeasible_gamma_exit_2_with_trace(self, tmp_path, capsys):
        cfg = load_scalar_config()
        cfg["supply"]["hinf"] = {"gamma": 0.01}
        path = write_config(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["run", str(path), "--out", str(out)]) == 2
        trace = (out / "alpha_trace.csv").read_text().splitlines()
        assert trace[0] == "alpha,gamma_or_slack,status"
        assert len(trace) > 1
        assert all(line.endswith("infeasible") for line in trace[1:])

    def test_determinism_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", str(SCALAR), "--out", str(out1)]) == 0
        assert main(["run", str(SCALAR), "--out", str(out2)]) == 0
        assert read_tree(out1) == read_tree(out2)

    def test_seed_override_changes_outputs(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", str(SCALAR), "--out", str(out1),
                     "--seed", "7"]) == 0
        assert main(["run", str(SCALAR), "--out", str(out2),
                     "--seed", "8"]) == 0
        assert (out1 / "record.json").read_bytes() != \
            (out2 / "record.json").read_bytes()


class TestStages:
    def test_staged_equals_run(self, tmp_path):
        full, staged = tmp_path / "full", tmp_path / "staged"
        assert main(["run", str(SCALAR), "--out", str(full)]) == 0
        assert main(["record", str(SCALAR), "--out", str(staged)]) == 0
        assert main(["synth", str(SCALAR), "--out", str(staged)]) == 0
        assert main(["verify", str(SCALAR), "--out", str(staged)]) == 0
        assert read_tree(full) == read_tree(staged)

    def test_synth_without_record_exit_1(self, tmp_path):
        assert main(["synth", str(SCALAR),
                     "--out", str(tmp_path / "empty")]) == 1

    def test_verify_without_result_exit_1(self, tmp_path):
        out = tmp_path / "o"
        assert main(["record", str(SCALAR), "--out", str(out)]) == 0
        assert main(["verify", str(SCALAR), "--out", str(out)]) == 1

    def test_verify_bad_controller_reports_failure_exit_0(self, tmp_path):
        out = tmp_path / "o"
        assert main(["record", str(SCALAR), "--out", str(out)]) == 0
        assert main(["synth", str(SCALAR), "--out", str(out)]) == 0
        with open(out / "result.json") as f:
            doc = json.load(f)
        # destabilizing hand edit: verification must run and report failure
        doc["controller"] = {"Ac": [[0.0]], "Bc": [[0.0]], "Cc": [[0.0]],
                             "Dc": [[5.0]]}
        with open(out / "result.json", "w") as f:
            json.dump(doc, f)
        assert main(["verify", str(SCALAR), "--out", str(out)]) == 0
        with open(out / "report.json") as f:
            report = json.load(f)
        assert not report["all_certified"]

    def test_sweep_emits_sorted_alpha_trace(self, tmp_path):
        out = tmp_path / "o"
        assert main(["sweep", str(SCALAR), "--out", str(out),
                     "--alpha-grid", "0.5:50:7"]) == 0
        lines = (out / "alpha_trace.csv").read_text().splitlines()[1:]
        alphas = [float(line.split(",")[0]) for line in lines]
        assert len(alphas) == 7
        assert alphas == sorted(alphas)


class TestArtifacts:
    def test_record_json_schema(self, tmp_path):
        out = tmp_path / "o"
        assert main(["record", str(SCALAR), "--out", str(out)]) == 0
        rec = DataRecord.from_json(str(out / "record.json"))
        cfg = load_scalar_config()
        assert rec.N == cfg["recording"]["N"]
        assert rec.n == 1 and rec.m == 1

    def test_gain_curves_below_gamma(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", str(SCALAR), "--out", str(out)]) == 0
        with open(out / "result.json") as f:
            gamma = json.load(f)["gamma"]
        sample_curves = sorted(out.glob("gain_curve_sample_*.csv"))
        assert sample_curves
        for path in [out / "gain_curve.csv", *sample_curves]:
            rows = path.read_text().splitlines()
            assert rows[0] == "theta,gain"
            gains = [float(r.split(",")[1]) for r in rows[1:]]
            assert max(gains) <= gamma * (1 + 1e-3)

    def test_result_reload_reverifies(self, tmp_path):
        import dissipasynth as ds
        from dissipasynth.data import complete, energy_phi
        from dissipasynth.synthesis import SynthesisIngredients, hinf_supply
        from dissipasynth.cli import load_plant

        out = tmp_path / "o"
        assert main(["run", str(SCALAR), "--out", str(out)]) == 0
        cfg = load_scalar_config()
        plant = load_plant(cfg, CONFIG_DIR)
        rec = DataRecord.from_json(str(out / "record.json"))
        with open(out / "result.json") as f:
            doc = json.load(f)
        ctrl = Controller(**doc["controller"])
        eps = cfg["recording"]["noise"]["energy_eps"]
        cs = complete(rec, energy_phi(eps, rec.N, 1), plant.B1)
        ing = SynthesisIngredients(
            cs=cs, supply=hinf_supply(doc["gamma"], 1, 1), B1=plant.B1,
            C1=plant.C1, D1=plant.D1, E=plant.E, C=plant.C, F=plant.F)
        report = ds.worst_case_check(
            ing, ctrl, cfg["verification"]["samples"],
            cfg["verification"]["seed"])
        assert report["all_certified"]

    def test_solver_tol_env_read(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DISSIPASYNTH_SOLVER_TOL", "1e-7")
        out = tmp_path / "o"
        assert main(["run", str(SCALAR), "--out", str(out)]) == 0
