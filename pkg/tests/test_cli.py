import json
from pathlib import Path

import pytest

from carleman_lab import __version__, cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


BASE = """
[run]
experiment = "{exp}"
output = "out"
seed = 3

[physics]
E_min = 1.0
"""


def test_validate_grid_guideline():
    cfg = {"run": {"experiment": "resolvent-sweep", "output": "o"},
           "physics": {"E_min": 1.0}, "numerics": {"h_list": [0.05], "spacing": 0.02}}
    assert any(v.startswith("spacing > h/10") for v in cli.validate(cfg))


def test_validate_R0():
    cfg = {"run": {"experiment": "verify-lemmas", "output": "o"},
           "physics": {"E_min": 1.0, "R0": 2.0}}
    assert "R0 must exceed 3" in cli.validate(cfg)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_are_valid(path):
    assert cli.validate(cli.load_config(path)) == []


def test_validate_collects_everything():
    cfg = {"run": {"experiment": "resolvent-sweep", "output": "o"},
           "physics": {"E_min": 1.0, "R0": 4.0},
           "potential": {"kind": "square_well", "depth": 1.0, "radius": 3.0},
           "numerics": {"epsilon": 1e-5, "h_list": [2.0]}}
    out = cli.validate(cfg)
    assert any("B(0, R0/2)" in v for v in out)
    assert any("floor" in v for v in out)
    assert any("h = 2.0" in v for v in out)


def test_validate_never_throws():
    assert cli.validate({"physics": "nonsense"})
    assert cli.validate(None)
    assert cli.validate({"run": {"experiment": "glue-check", "output": "o"},
                         "physics": {"E_min": 1.0},
                         "numerics": {"h_list": ["x"]}})


def test_unknown_keys_rejected(tmp_path):
    cfg = {"run": {"experiment": "glue-check", "output": "o", "colour": "red"},
           "physics": {"E_min": 1.0}, "extras": {}}
    out = cli.validate(cfg)
    assert "unknown key run.colour" in out and "unknown section [extras]" in out


def test_missing_E_min_exit_1(tmp_path, capsys):
    path = write(tmp_path, '[run]\nexperiment = "verify-lemmas"\noutput = "o"\n')
    assert cli.main(["run", str(path)]) == 1
    assert "E_min" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_bad_toml_exit_1(tmp_path):
    path = write(tmp_path, "[run\n")
    assert cli.main(["run", str(path)]) == 1
    assert cli.main(["validate", str(path)]) == 1


def test_validate_subcommand(tmp_path, capsys):
    good = write(tmp_path, BASE.format(exp="glue-check"))
    assert cli.main(["validate", str(good)]) == 0
    bad = write(tmp_path, BASE.format(exp="glue-check") + "R0 = 2.0\n", "bad.toml")
    assert cli.main(["validate", str(bad)]) == 1
    assert "R0 must exceed 3" in capsys.readouterr().out


def test_version(capsys):
    assert cli.main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


def test_verify_lemmas_defaults(tmp_path):
    path = write(tmp_path, BASE.format(exp="verify-lemmas"))
    assert cli.main(["run", str(path)]) == 0
    rep = json.loads((tmp_path / "out" / "cert_report.json").read_text())
    assert rep["pass"] is True
    assert len(rep["by_h"]) == 8
    for r in rep["by_h"].values():
        assert all(c["pass"] for c in r["checks"])
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["exit_code"] == 0 and man["version"] == __version__
    assert len(man["config_sha256"]) == 64
    assert set(man["timestamps"]) == {"start", "end", "wall_time_s"}


def test_carleman_test_twice_byte_identical(tmp_path):
    text = BASE.format(exp="carleman-test") + """
R0 = 3.01
[potential]
kind = "square_well"
depth = 4.0
radius = 1.0
[numerics]
h_list = [0.5, 0.25]
n_samples = 5
"""
    path = write(tmp_path, text)
    assert cli.main(["run", str(path)]) == 0
    first = (tmp_path / "out" / "carleman.csv").read_bytes()
    assert cli.main(["run", str(path)]) == 0
    assert (tmp_path / "out" / "carleman.csv").read_bytes() == first


def test_worker_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli.worker_count({"run": {"workers": 1}}) == 3
    monkeypatch.delenv(cli.WORKERS_ENV)
    assert cli.worker_count({"run": {"workers": 2}}) == 2


def test_numerical_failure_exit_2(tmp_path, monkeypatch, capsys):
    from carleman_lab.operator1d import ConvergenceError

    def boom(ctx):
        raise ConvergenceError("stalled", 1.0, 0.0)

    monkeypatch.setitem(cli.RUNNERS, "glue-check", boom)
    path = write(tmp_path, BASE.format(exp="glue-check"))
    assert cli.main(["run", str(path)]) == 2
    assert "ConvergenceError" in capsys.readouterr().err
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["exit_code"] == 2


def test_certification_failure_exit_2(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.RUNNERS, "glue-check", lambda ctx: False)
    path = write(tmp_path, BASE.format(exp="glue-check"))
    assert cli.main(["run", str(path)]) == 2


def test_outputs_stay_in_output_dir(tmp_path):
    path = write(tmp_path, BASE.format(exp="glue-check"))
    before = {p.name for p in tmp_path.iterdir()}
    assert cli.main(["run", str(path)]) == 0
    assert {p.name for p in tmp_path.iterdir()} - before == {"out"}
    assert {p.name for p in (tmp_path / "out").iterdir()} == {"glue_report.json", "manifest.json"}
