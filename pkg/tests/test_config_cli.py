from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest
import yaml

from tnmpf import cli, harness
from tnmpf.config import ConfigError, ExperimentConfig, from_dict, load_config
from tnmpf.mpf import MPFError

SMALL = {
    "hamiltonian": {"kind": "disordered_xxz", "n_sites": 6, "seed": 1},
    "t_grid": {"start": 0.5, "stop": 1.5, "step": 0.5},
    "k_list": [2, 3],
    "deep_k": 4,
    "reference": {"order": 4, "k0_multiplier": 2},
    "truncation": {"mpo": {"lambda0": 1e-12, "chi_max": 64}},
}


def small(**overrides) -> ExperimentConfig:
    raw = {**SMALL, **overrides}
    return from_dict(raw)


def write_cfg(tmp_path: Path, raw: dict) -> Path:
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def read_csv(path: Path) -> list[dict]:
    with path.open() as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults(self):
        cfg = from_dict({})
        assert cfg.k_list == (2, 3, 4)
        assert cfg.truncation["mpo"].chi_max == 64
        assert cfg.use_dense

    def test_resolved_is_complete(self):
        doc = small().resolved()
        assert doc["reference_k0_resolved"] == 8
        assert doc["initial_state_bits"] == "101010"
        assert set(doc["truncation"]) == {"state", "mpo", "reference"}
        json.dumps(doc)

    def test_every_error_listed(self):
        raw = {
            "hamiltonian": {"kind": "ising", "n_sites": 1},
            "t_grid": {"step": 0},
            "k_list": [3, 2],
            "truncation": {"bogus": {}},
            "color": "red",
        }
        with pytest.raises(ConfigError) as info:
            from_dict(raw)
        joined = " ".join(info.value.errors)
        for field in ("hamiltonian.kind", "hamiltonian.n_sites", "t_grid.step", "k_list", "truncation.bogus", "color"):
            assert field in joined

    @pytest.mark.parametrize(
        "raw, field",
        [
            ({"shots": 0}, "shots"),
            ({"observables": ["z9"]}, "observables"),
            ({"observables": ["q1"]}, "observables"),
            ({"reference": {"order": 3}}, "reference.order"),
            ({"truncation": {"state": {"lambda0": 2.0}}}, "truncation.state.lambda0"),
            ({"initial_state": "10"}, "initial_state"),
            ({"aqc": {"fidelity_floor": 1.5}}, "aqc.fidelity_floor"),
            ({"mpf_test_against": "both"}, "mpf_test_against"),
            ({"test_atol": -1.0}, "test_atol"),
            ({"dense_check": True, "hamiltonian": {"n_sites": 20}}, "dense_check"),
        ],
    )
    def test_single_violation_names_field(self, raw, field):
        with pytest.raises(ConfigError) as info:
            from_dict({**SMALL, **raw})
        assert any(e.startswith(field) for e in info.value.errors)

    def test_observables_are_one_based(self):
        assert small(observables=["z6", "z5 z6"]).observables == ("z6", "z5 z6")

    def test_shots_exact(self):
        assert small(shots="exact").shots is None

    def test_grid(self):
        assert small().t_grid.times().tolist() == [0.5, 1.0, 1.5]

    def test_load_yaml(self, tmp_path):
        assert load_config(write_cfg(tmp_path, SMALL)).n_sites == 6

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("a: [1, 2")
        with pytest.raises(ConfigError):
            load_config(path)


class TestCLI:
    def test_config_error_exit_code(self, tmp_path, capsys):
        path = write_cfg(tmp_path, {"k_list": [3, 2], "t_grid": {"step": -1}})
        assert cli.main(["tests", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
        report = json.loads(capsys.readouterr().err)
        assert report["error"] == "config" and len(report["errors"]) == 2

    def test_missing_config_file(self, tmp_path, capsys):
        assert cli.main(["tests", "--config", str(tmp_path / "nope.yaml")]) == cli.EXIT_CONFIG
        assert json.loads(capsys.readouterr().err)["error"] == "config"

    def test_bad_workers(self, tmp_path, capsys):
        path = write_cfg(tmp_path, SMALL)
        assert cli.main(["tests", "--config", str(path), "--workers", "0"]) == cli.EXIT_CONFIG

    def test_numerical_exit_code(self, tmp_path, capsys, monkeypatch):
        def boom(cfg, out, workers):
            raise MPFError("KKT system is singular")

        monkeypatch.setitem(harness.COMMANDS, "tests", boom)
        path = write_cfg(tmp_path, SMALL)
        assert cli.main(["tests", "--config", str(path)]) == cli.EXIT_NUMERICAL
        assert json.loads(capsys.readouterr().err)["error"] == "numerical"

    def test_internal_exit_code(self, tmp_path, capsys, monkeypatch):
        def boom(cfg, out, workers):
            raise KeyError("unexpected")

        monkeypatch.setitem(harness.COMMANDS, "tests", boom)
        path = write_cfg(tmp_path, SMALL)
        assert cli.main(["tests", "--config", str(path)]) == cli.EXIT_INTERNAL
        assert "traceback" in json.loads(capsys.readouterr().err)

    def test_fidelity_exit_code(self, tmp_path, capsys):
        raw = {**SMALL, "aqc": {"enabled": True, "t1": 1.0, "k_layers": 1, "max_iters": 1, "fidelity_floor": 1.0}}
        out = tmp_path / "o"
        assert cli.main(["aqc", "--config", str(write_cfg(tmp_path, raw)), "--out", str(out)]) == cli.EXIT_FIDELITY
        report = json.loads(capsys.readouterr().err)
        assert report["fidelity"] < 1.0 and report["floor"] == 1.0
        assert (out / "theta.json").exists()

    def test_aqc_requires_enabled(self, tmp_path, capsys):
        assert cli.main(["aqc", "--config", str(write_cfg(tmp_path, SMALL))]) == cli.EXIT_CONFIG

    def test_tests_command_outputs(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["tests", "--config", str(write_cfg(tmp_path, SMALL)), "--out", str(out)]) == 0
        rows = read_csv(out / "tests.csv")
        assert [r["path"] for r in rows] == ["mpo", "dense"] * 3
        sidecar = json.loads((out / "tests.json").read_text())
        assert sidecar["config"]["hamiltonian"]["n_sites"] == 6 and sidecar["schema_version"] == 1
        summary = json.loads((out / "tests_summary.json").read_text())
        assert set(summary["paths"]) == {"mpo", "dense"}


class TestHarness:
    def test_deterministic_csv(self, tmp_path):
        cfg = small(observables=["z3"], shots=500, seed=4)
        harness.run_observables(cfg, tmp_path / "a")
        harness.run_observables(cfg, tmp_path / "b")
        assert (tmp_path / "a/observables.csv").read_bytes() == (tmp_path / "b/observables.csv").read_bytes()

    def test_dual_paths_agree(self, tmp_path):
        cfg = small(t_grid={"start": 0.5, "stop": 3.0, "step": 0.5})
        summary = harness.run_tests(cfg, tmp_path)["summary"]
        for key in ("trotter_last_pass", "mpf_last_pass"):
            a, b = summary["mpo"][key], summary["dense"][key]
            assert (a is None and b is None) or abs(a - b) <= 0.5 + 1e-12

    def test_short_grid_passes(self, tmp_path):
        cfg = small(t_grid={"start": 0.05, "stop": 0.2, "step": 0.05})
        rows = harness.run_tests(cfg, tmp_path)["rows"]
        assert all(r["mpf_test_pass"] and r["trotter_test_pass"] for r in rows)

    def test_compare_zero_time(self, tmp_path):
        rows = harness.run_compare(small(t_grid={"start": 0.0, "stop": 0.0, "step": 0.1}), tmp_path)["rows"]
        assert len(rows) == 1
        assert rows[0]["E_F_kmax"] < 1e-12 and rows[0]["E_F_mps"] < 1e-12 and rows[0]["E_F_mpo_mpf"] < 1e-9

    def test_compare_ordering(self, tmp_path):
        rows = harness.run_compare(small(), tmp_path)["rows"]
        assert all(r["E_F_mpo_mpf"] <= r["E_F_kmax"] for r in rows)
        assert rows[0]["mem_mps"] == 2 * 6 * rows[0]["chi_mps"] ** 2

    def test_memory_formula(self):
        assert harness.memory_entries(50, 100, 2) == 10**6

    def test_observables_zero_time(self, tmp_path):
        cfg = small(t_grid={"start": 0.0, "stop": 0.0, "step": 0.1}, observables=["z1", "z2", "z1 z2"])
        rows = harness.run_observables(cfg, tmp_path)["rows"]
        expected = {"z1": -1.0, "z2": 1.0, "z1 z2": -1.0}
        assert all(r["value"] == pytest.approx(expected[r["observable"]], abs=1e-12) for r in rows)

    def test_single_k_mpf_is_passthrough(self, tmp_path):
        cfg = small(k_list=[3], observables=["z3"])
        rows = harness.run_observables(cfg, tmp_path)["rows"]
        by = {(r["t"], r["series"]): r["value"] for r in rows}
        for t in (0.5, 1.0, 1.5):
            assert by[(t, "MPF")] == pytest.approx(by[(t, "k3")], abs=1e-12)

    def test_aqc_zero_window_matches_tests(self, tmp_path):
        cfg = small(aqc={"enabled": True, "t1": 0.0, "k_layers": 1, "max_iters": 2, "fidelity_floor": 0.0})
        plain = harness.run_tests(cfg, tmp_path / "plain")["rows"]
        aqc = harness.run_aqc(cfg, tmp_path / "aqc")["rows"]
        assert len(plain) == len(aqc)
        for a, b in zip(plain, aqc):
            assert a["E_F_D"] == pytest.approx(b["E_F_D"], abs=1e-9)

    def test_aqc_reference_only_before_window(self, tmp_path):
        cfg = small(observables=["z3"], aqc={"enabled": True, "t1": 1.0, "k_layers": 1, "max_iters": 3, "fidelity_floor": 0.0})
        res = harness.run_aqc(cfg, tmp_path)
        early = [r for r in res["observables"] if r["t"] <= 1.0]
        assert early and all(r["series"] == "reference" for r in early)
        assert {r["t"] for r in res["rows"]} == {1.5}

    def test_scaling_outputs(self, tmp_path):
        cfg = small(
            scaling={
                "state_lambdas": [1e-4, 1e-8],
                "state_times": [0.5, 1.0, 1.5],
                "f_time": 2.0,
                "f_ks": [4, 6, 8],
                "f_dt": 0.5,
                "f_times": [1.0, 1.5, 2.0],
            }
        )
        res = harness.run_scaling(cfg, tmp_path)
        assert {r["sweep"] for r in res["rows"]} == {"state", "f_vs_k", "f_fixed_dt"}
        assert len(res["fits"]["state"]) == 2
        assert (tmp_path / "scaling_fits.json").exists()
