import json

import pytest

from exterior_bounds.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_OK, EXIT_VIOLATION, RunConfig, main
from exterior_bounds.errors import ConfigError
from exterior_bounds.reports import read_csv, read_vtk_cell_data

TINY = {"geometry": "ball", "R": 3.0, "ladder": [[2, 2], [3, 2]], "beta_max_iter": 60,
        "deltas": [0.0, 0.1]}


def _config(tmp_path, **kw):
    data = dict(TINY, **kw)
    p = tmp_path / "run.json"
    p.write_text(json.dumps(data))
    return str(p)


def test_defaults():
    cfg = RunConfig.from_dict({})
    assert cfg.geometry == "ball" and cfg.R == 5.0 and len(cfg.ladder) == 3


@pytest.mark.parametrize("bad", [
    {"R": 1.0}, {"R": "five"}, {"geometry": "cube", "R": 1.5}, {"geometry": "torus"},
    {"ladder": []}, {"ladder": [[1]]}, {"ladder": [[0, 2]]}, {"N": 2}, {"flux_degree": 3},
    {"thetas": [0.0]}, {"deltas": [-0.1]}, {"stop_rel": 0}, {"max_iter": 1.5},
    {"coefficient": [[1, 2], [3, 4]]}, {"coefficient": [[1, 0, 0], [0, -1, 0], [0, 0, 1]]},
    {"unknown_key": 1}, {"seed": -1}, {"out": 3},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_exit_code_for_bad_config(tmp_path, capsys):
    assert main(["solve", "--config", _config(tmp_path, R=0.5)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["solve", "--config", str(tmp_path / "broken.json")]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_exit_code_for_nonconvergence(tmp_path):
    assert main(["solve", "--config", _config(tmp_path, max_iter=1), "--out", str(tmp_path / "o")]) == EXIT_CONVERGENCE


def test_exit_code_for_violation(tmp_path, monkeypatch):
    from exterior_bounds import conforming

    monkeypatch.setattr(conforming.BoundReport, "bracketing_holds", lambda self, rtol=1e-8: False)
    cfg = _config(tmp_path, ladder=[[2, 2]])
    assert main(["bounds", "--config", cfg, "--out", str(tmp_path / "o"), "--sequential"]) == EXIT_VIOLATION


def test_meshgen_then_solve(tmp_path):
    out = tmp_path / "o"
    cfg = _config(tmp_path)
    assert main(["meshgen", "--config", cfg, "--out", str(out), "--sequential"]) == EXIT_OK
    assert sorted(p.name for p in out.glob("*.tetmesh")) == ["mesh_ball_R3_2x2.tetmesh", "mesh_ball_R3_3x2.tetmesh"]
    assert main(["solve", "--config", cfg, "--out", str(out), "--sequential"]) == EXIT_OK
    rows = read_csv(out / "solve.csv")
    assert [int(r["n_tets"]) for r in rows] == [144, 216]
    assert all(r["converged"] == "1" for r in rows)
    assert (out / "trace_ball_R3_2x2.csv").exists()


def test_bounds_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["bounds", "--config", _config(tmp_path), "--out", str(out), "--sequential"]) == EXIT_OK
    text = (out / "bounds.csv").read_text().splitlines()
    assert text[0].startswith("# ")
    rows = read_csv(out / "bounds.csv")
    for r in rows:
        assert float(r["minorant"]) <= float(r["oracle_error_sq"]) <= float(r["majorant_sq"])
        assert len(r["majorant_pct"].split(".")[1]) == 2
        assert "e" in r["majorant_sq"]
    cells = read_vtk_cell_data(out / "indicator_ball_R3_2x2.vtk")
    assert set(cells) == {"indicator", "oracle_error"} and len(cells["indicator"]) == 144


def test_nonconforming_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["nonconforming", "--config", _config(tmp_path, ladder=[[2, 2]]), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "nonconforming.csv")
    assert [float(r["delta"]) for r in rows] == [0.0, 0.1]
    for r in rows:
        assert float(r["lower"]) <= float(r["oracle_error_sq"]) <= float(r["upper"]) <= float(r["appendix_theta_1"])
        assert r["surrogate"] == "0"


def test_cube_nonconforming_uses_surrogate(tmp_path):
    out = tmp_path / "o"
    cfg = _config(tmp_path, geometry="cube", ladder=[[2, 2]], deltas=[0.1])
    assert main(["nonconforming", "--config", cfg, "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "nonconforming.csv")
    assert rows[0]["surrogate"] == "1" and rows[0]["oracle_error_sq"] == ""
    assert "surrogate" in (out / "nonconforming.csv").read_text().splitlines()[0]


def test_parallel_matches_sequential(tmp_path):
    cfg = _config(tmp_path)
    assert main(["bounds", "--config", cfg, "--out", str(tmp_path / "a"), "--sequential"]) == EXIT_OK
    assert main(["bounds", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("bounds.csv", "indicator_ball_R3_2x2.vtk", "indicator_ball_R3_3x2.vtk"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_usage_error_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        main(["plot", "--config", "x.json"])
    assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    cfg = _config(tmp_path, ladder=[[1, 1]])
    proc = subprocess.run([sys.executable, "-m", "exterior_bounds", "meshgen", "--config", cfg,
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "18 tets" in proc.stdout
