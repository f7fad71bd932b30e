import json

import numpy as np
import pytest

from relboltz import harness
from relboltz.errors import ConfigError
from relboltz.harness import (export_grid, file_hash, import_grid, load_config, main, read_csv, run_scenario,
                              validate_config)
from relboltz.kinetic_core import PhaseGrid, ZeroDensity, bump_source
from relboltz.probe import Measurement


def observe_cfg(**kw):
    cfg = load_config("observe_minkowski.json")
    cfg.update(kw)
    return cfg


def test_shipped_scenarios_validate():
    for p in sorted(harness.SCENARIO_DIR.glob("*.json")):
        load_config(p)


def test_geodesic_csv_header(tmp_path):
    run_scenario("warped_geodesics.json", "geodesic", tmp_path)
    header, data = read_csv(tmp_path / "geodesic_0.csv")
    assert ",".join(header) == "s,x0,x1,x2,p0,p1,p2,mass_shell"
    assert data.shape == (201, 8)


def test_same_seed_gives_identical_csvs(tmp_path):
    for d in ("a", "b"):
        run_scenario("warped_geodesics.json", "geodesic", tmp_path / d, seed=7)
        run_scenario(observe_cfg(), "observe", tmp_path / d, seed=7)
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert len(names) == 5
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_lists_every_output(tmp_path):
    man = run_scenario(observe_cfg(), "observe", tmp_path)
    on_disk = {p.name for p in tmp_path.iterdir()} - {"manifest.json"}
    assert set(man["files"]) == on_disk
    for name, digest in man["files"].items():
        assert file_hash(tmp_path / name) == digest
    saved = json.loads((tmp_path / "manifest.json").read_text())
    assert saved["config_sha256"] == harness.config_hash(observe_cfg())
    assert saved["command"] == "observe" and "observe" in saved["wall_time_s"]


def test_inverted_diamond_rejected():
    with pytest.raises(ConfigError) as info:
        validate_config(observe_cfg(diamond={"s_minus": 0.5, "s_plus": 0.5}))
    assert info.value.pointer == "/diamond/s_minus"


def test_schema_violation_points_at_field():
    cfg = observe_cfg()
    cfg["metric"] = {"kind": "Minkowski", "n": "three"}
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert info.value.pointer == "/metric/n"


def test_target_outside_chart_rejected():
    cfg = observe_cfg(targets=[[0.0, 20.0, 0.0]])
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert info.value.pointer == "/targets/0"


def test_observe_without_targets_writes_observer_table(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(observe_cfg(targets=[])))
    out = tmp_path / "run"
    assert main(["observe", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.csv")) == ["observers.csv"]
    header, data = read_csv(out / "observers.csv")
    assert header == ["a0", "a1"] and data.shape == (33, 2)
    assert json.loads(capsys.readouterr().out)["out"] == str(out)


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(observe_cfg(diamond={"s_minus": 0.5, "s_plus": 0.2})))
    assert main(["observe", "--config", str(cfg_path), "--out", str(tmp_path / "run")]) == 2
    assert "/diamond/s_minus" in capsys.readouterr().err


def test_thread_variable_must_be_integer(monkeypatch):
    monkeypatch.setenv("RELBOLTZ_THREADS", "many")
    with pytest.raises(ConfigError):
        harness.worker_count()
    monkeypatch.setenv("RELBOLTZ_THREADS", "3")
    assert harness.worker_count() == 3


def test_unknown_command_rejected(tmp_path):
    with pytest.raises(ConfigError):
        run_scenario(observe_cfg(), "reconstruct", tmp_path)


def test_observation_table_matches_cone(tmp_path):
    run_scenario(observe_cfg(), "observe", tmp_path)
    header, data = read_csv(tmp_path / "observations_0.csv")
    assert header == ["a0", "a1", "f_plus", "f_minus", "e0", "e1", "e2"]
    w = np.array([0.5, 0.3, 0.0])
    dist = np.linalg.norm(data[:, :2] - w[1:], axis=1)
    assert np.allclose(data[:, 2], np.minimum(1.0, w[0] + dist), atol=2e-6)
    assert np.allclose(data[:, 3], w[0] - dist, atol=2e-6)


# grid export ------------------------------------------------------------------------------

GRID = PhaseGrid.uniform([0.0, -0.5, 0.8, -0.3], [1.0, 0.5, 1.2, 0.3], [4, 5, 3, 3])


def test_export_round_trip_is_exact(tmp_path):
    f = bump_source([0.5, 0.0], [1.0, 0.0], [0.6, 0.6], [0.3, 0.4], amp=np.pi)
    export_grid(f, GRID, tmp_path / "f.csv")
    header, coords, vals = import_grid(tmp_path / "f.csv")
    X, P = GRID.points()
    assert np.array_equal(coords, np.column_stack([X, P]))
    assert np.array_equal(vals, f(X, P))
    assert np.any(vals != 0)


def test_zero_density_exports_zero_column(tmp_path):
    export_grid(ZeroDensity(2), GRID, tmp_path / "z.csv")
    header, coords, vals = import_grid(tmp_path / "z.csv")
    assert ",".join(header) == "x0,x1,p0,p1,value"
    assert len(vals) == int(np.prod(GRID.shape))
    assert not np.any(vals)


def test_measurement_export_header(tmp_path):
    pts = np.stack(np.meshgrid(np.linspace(0, 1, 3), np.linspace(0, 1, 3), indexing="xy"), axis=-1)
    pts = np.concatenate([np.zeros(pts.shape[:-1] + (1,)), pts], axis=-1)
    m = Measurement(np.arange(9.0).reshape(3, 3), np.linspace(0, 1, 3), np.linspace(0, 1, 3), pts, (0.5, 0.5))
    export_grid(m, None, tmp_path / "m.csv")
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == "x0,x1,x2,S_value"
    # seventeen significant digits in scientific notation
    assert text[2].split(",")[-1] == "1.0000000000000000e+00"
    _, coords, vals = import_grid(tmp_path / "m.csv")
    assert np.array_equal(vals, np.arange(9.0))
