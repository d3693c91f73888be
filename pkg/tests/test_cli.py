import json
from pathlib import Path

import jsonschema

from heleshaw.cli import EXIT_CONFIG, EXIT_OK, cmd_bench, cmd_run, cmd_verify, main

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "heleshaw" / "schemas"


def schema(name):
    return json.loads((SCHEMA_DIR / f"{name}.schema.json").read_text())


def write_config(tmp_path, text, name="config.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


TINY_RUN = """
sigma = 0.5
dt = 1e-4
t_end = 6e-4
scheme = "newton"
output_stride = 2
m_max = 4
out_dir = "unused"

[shape]
base_radius = 1.0
modes = [[2, 0.04, 0.0]]

[mesh]
boundary_vertex_count = 64
interior_target_edge = 0.2
"""


class TestRun:
    def test_artifacts_and_schema(self, tmp_path):
        cfg = write_config(tmp_path, TINY_RUN)
        out = tmp_path / "out"
        assert cmd_run(cfg, out=str(out), quiet=True) == EXIT_OK
        payload = json.loads((out / "diagnostics.json").read_text())
        jsonschema.validate(payload, schema("diagnostics"))
        assert (out / "series.csv").exists()
        assert (out / "area.svg").exists()
        assert (out / "ucm.svg").exists()
        assert (out / "modes.svg").exists()
        snaps = sorted((out / "snapshots").iterdir())
        assert any(p.name.endswith("_mesh.txt") for p in snaps)
        assert any(p.name.endswith("_boundary.csv") for p in snaps)
        assert any(p.name.endswith("_velocity.csv") for p in snaps)
        assert any(p.name.endswith("_pressure.csv") for p in snaps)

    def test_zero_horizon_initial_snapshot_only(self, tmp_path):
        cfg = write_config(tmp_path, TINY_RUN.replace("t_end = 6e-4", "t_end = 0.0"))
        out = tmp_path / "out0"
        assert cmd_run(cfg, out=str(out), quiet=True) == EXIT_OK
        payload = json.loads((out / "diagnostics.json").read_text())
        assert len(payload["records"]) == 1
        assert payload["step_reports"] == []

    def test_bit_identical_diagnostics(self, tmp_path):
        cfg = write_config(tmp_path, TINY_RUN)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cmd_run(cfg, out=str(out1), quiet=True)
        cmd_run(cfg, out=str(out2), quiet=True)
        assert (out1 / "diagnostics.json").read_bytes() == \
            (out2 / "diagnostics.json").read_bytes()

    def test_unknown_key_rejected_with_name(self, tmp_path, capsys):
        cfg = write_config(tmp_path, TINY_RUN + "\nsurface_tension = 0.5\n")
        assert main(["run", cfg, "--quiet"]) == EXIT_CONFIG
        assert "surface_tension" in capsys.readouterr().err

    def test_curl_with_zero_alpha_is_config_error(self, tmp_path, capsys):
        text = TINY_RUN.replace('scheme = "newton"', 'scheme = "curl"\nalpha = 0.0')
        cfg = write_config(tmp_path, text)
        assert main(["run", cfg, "--quiet"]) == EXIT_CONFIG
        assert "ill-posed" in capsys.readouterr().err

    def test_numerical_failure_exit_code(self, tmp_path):
        text = TINY_RUN.replace("dt = 1e-4", "dt = 50.0").replace(
            "t_end = 6e-4", "t_end = 100.0").replace('"newton"', '"explicit"')
        cfg = write_config(tmp_path, text)
        assert main(["run", cfg, "--quiet"]) == 3

    def test_missing_config_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.toml"), "--quiet"]) == EXIT_CONFIG


class TestVerify:
    def test_short_circle_experiment_passes(self, tmp_path):
        cfg = write_config(tmp_path, """
experiment = "circle"
scheme = "newton"
t_end = 0.02
[mesh]
boundary_vertex_count = 64
interior_target_edge = 0.2
""")
        out = tmp_path / "v"
        assert cmd_verify(cfg, out=str(out), quiet=True) == EXIT_OK
        payload = json.loads((out / "verify.json").read_text())
        jsonschema.validate(payload, schema("verify"))
        assert payload["pass"] is True
        assert payload["area_drift"] <= 1e-6
        assert payload["ucm_max"] <= 1e-6

    def test_unknown_experiment_rejected(self, tmp_path):
        cfg = write_config(tmp_path, 'experiment = "m9"\nscheme = "newton"\n')
        assert main(["verify", cfg, "--quiet"]) == EXIT_CONFIG

    def test_m2_short_horizon_rate_within_tolerance(self, tmp_path):
        # a shortened m2 run still fits the rate well; keeps the test quick
        cfg = write_config(tmp_path, """
experiment = "m2"
scheme = "newton"
t_end = 0.02
[mesh]
boundary_vertex_count = 128
interior_target_edge = 0.15
""")
        out = tmp_path / "m2s"
        code = cmd_verify(cfg, out=str(out), quiet=True)
        payload = json.loads((out / "verify.json").read_text())
        jsonschema.validate(payload, schema("verify"))
        assert abs(payload["fitted"]["c2"] - (-3.0)) / 3.0 < 0.01
        assert code in (EXIT_OK, 4)  # conservation may flag at this short horizon


class TestBench:
    def test_structure_and_instability_flag(self, tmp_path):
        cfg = write_config(tmp_path, """
experiment = "m2"
schemes = ["explicit", "newton"]
n_steps = 40
[mesh]
boundary_vertex_count = 96
interior_target_edge = 0.15
""")
        out = tmp_path / "bench"
        assert cmd_bench(cfg, out=str(out), quiet=True) == EXIT_OK
        payload = json.loads((out / "bench.json").read_text())
        jsonschema.validate(payload, schema("bench"))
        rows = {r["scheme"]: r for r in payload["rows"]}
        assert rows["explicit"]["unstable"] is True
        assert rows["newton"]["unstable"] is False
        assert rows["newton"]["steps_completed"] == 40
        assert rows["newton"]["wall_per_step"] > 0
        csv_lines = (out / "bench.csv").read_text().strip().splitlines()
        assert len(csv_lines) == 3  # header + two schemes
        assert (out / "bench.svg").exists()

    def test_single_scheme_single_row(self, tmp_path):
        cfg = write_config(tmp_path, """
experiment = "circle"
schemes = ["newton"]
n_steps = 3
[mesh]
boundary_vertex_count = 64
interior_target_edge = 0.25
""")
        out = tmp_path / "bench1"
        assert cmd_bench(cfg, out=str(out), quiet=True) == EXIT_OK
        payload = json.loads((out / "bench.json").read_text())
        assert len(payload["rows"]) == 1
