import json
import subprocess
import sys

import numpy as np
import pytest

from rydberg_anyons.cli import ConfigError, ExperimentConfig, RunManifest, default_config, load_config, main, run

SMALL = {"lattice": {"cells_x": 1, "cells_y": 2}, "solver": {"k": 2}}


def write_config(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return str(p)


def read_manifest(out):
    d = json.loads((out / "manifest.json").read_text())
    return RunManifest(**d)


def test_defaults_validate():
    cfg = default_config()
    cfg.validate()
    assert cfg["model"]["detuning"] == 3.5
    assert len(cfg.digest()) == 64


@pytest.mark.parametrize(
    "data,field",
    [
        ({"lattice": {"cells_x": 0}}, "lattice.cells_x"),
        ({"lattice": {"boundary_y": "twisted"}}, "lattice.boundary_y"),
        ({"model": {"rabi": -1}}, "model.rabi"),
        ({"model": {"detuning": "big"}}, "model.detuning"),
        ({"solver": {"basis": "weird"}}, "solver.basis"),
        ({"thresholds": {"vanishing": 0.5, "finite": 0.2}}, "thresholds"),
        ({"sweep": {"detunings": []}}, "sweep.detunings"),
        ({"braid": {"N": 0}}, "braid.N"),
        ({"punctures": [{"split": "half"}]}, "punctures[0].cells"),
        ({"nonsense": 1}, "nonsense"),
        ({"model": {"colour": 1}}, "model.colour"),
    ],
)
def test_config_errors_name_field(data, field):
    with pytest.raises(ConfigError, match=field.replace("[", r"\[").replace("]", r"\]")):
        ExperimentConfig.from_dict(data)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_gs_stage(tmp_path):
    out = tmp_path / "gs"
    m = run(ExperimentConfig.from_dict(SMALL), "gs", out)
    assert m.status == "ok"
    assert m.verify(out)
    assert {f["path"] for f in m.files} >= {"eigen.npy", "eigen.json", "energies.csv", "config.json"}
    e = m.summary["energies"]
    assert len(e) == 2 and e[0] <= e[1]
    assert read_manifest(out).config_hash == ExperimentConfig.from_dict(SMALL).digest()


def test_gs_stage_deterministic(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL)
    a = run(cfg, "gs", tmp_path / "a", seed=3)
    b = run(cfg, "gs", tmp_path / "b", seed=3)
    assert np.array_equal(np.load(tmp_path / "a" / "eigen.npy"), np.load(tmp_path / "b" / "eigen.npy"))
    assert a.summary == b.summary


def test_strings_stage(tmp_path):
    out = tmp_path / "s"
    m = run(ExperimentConfig.from_dict(SMALL), "strings", out)
    head = (out / "strings.csv").read_text().splitlines()[0]
    assert head == "state_id,path_id,kind,raw,normalized,stderr"
    assert len(m.summary["phase_labels"]) == 2


def test_sweep_stage(tmp_path):
    data = dict(SMALL, sweep={"detunings": [1.0, 3.5]}, solver={"k": 1})
    m = run(ExperimentConfig.from_dict(data), "sweep", tmp_path / "w")
    assert [p["detuning"] for p in m.summary["points"]] == [1.0, 3.5]


def test_braid_stage(tmp_path):
    m = run(default_config(), "braid", tmp_path / "b")
    assert abs(m.summary["global_phase"] + np.pi / 2) < 1e-12
    d = json.loads((tmp_path / "b" / "braid.json").read_text())
    assert np.allclose(np.array(d["normalized"])[..., 0], [[0, 1], [1, 0]])


def test_braid_stage_bad_word(tmp_path):
    cfg = ExperimentConfig.from_dict({"braid": {"N": 1, "word": "R7"}})
    with pytest.raises(ConfigError, match="braid.word"):
        run(cfg, "braid", tmp_path)


def test_codesim_stage(tmp_path):
    out = tmp_path / "c"
    m = run(ExperimentConfig.from_dict({"codesim": {"runs": 5}}), "codesim", out)
    assert m.summary["n_qubits"] == 74
    assert m.summary["reference_signatures"] == {k: k for k in ("I", "e", "m", "epsilon", "plus", "minus")}
    assert sum(m.summary["label_counts"].values()) == 5
    lines = (out / "protocol.jsonl").read_text().splitlines()
    assert all(json.loads(x) for x in lines)


def test_codesim_bad_script(tmp_path):
    cfg = ExperimentConfig.from_dict({"codesim": {"script": {"steps": [{"op": "gate", "name": "T", "qubits": ["a0"]}]}}})
    with pytest.raises(ConfigError, match="codesim"):
        run(cfg, "codesim", tmp_path)


def test_validate_stage():
    m = run(default_config(), "validate")
    assert m.summary == {"valid": True} and m.files == []


def test_geometry_error_is_config_error(tmp_path):
    cfg = ExperimentConfig.from_dict({"lattice": {"cells_x": 1, "cells_y": 2}, "punctures": [{"cells": [[5, 5]]}]})
    with pytest.raises(ConfigError):
        run(cfg, "gs", tmp_path)


def test_unconverged_reports_status(tmp_path, capsys):
    data = dict(SMALL, solver={"k": 2, "tol": 1e-15, "krylov_dim": 3, "max_restarts": 1})
    rc = main(["gs", "--config", write_config(tmp_path, data), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert read_manifest(tmp_path / "o").status == "numerical_failure"


def test_main_exit_codes(tmp_path, capsys):
    assert main(["validate"]) == 0
    assert main(["gs", "--config", str(tmp_path / "nope.json")]) == 1
    assert "invalid configuration" in capsys.readouterr().err
    assert main(["braid", "--threads", "0"]) == 1
    cfg = write_config(tmp_path, SMALL)
    assert main(["gs", "--config", cfg, "--out", str(tmp_path / "x"), "--seed", "1", "--threads", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["stage"] == "gs" and out["status"] == "ok"


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "rydberg_anyons", "validate"], capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["summary"] == {"valid": True}
