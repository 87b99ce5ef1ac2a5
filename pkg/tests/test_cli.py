import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from contmeas import cli


def mat(a):
    a = np.asarray(a, dtype=complex)
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]])
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1, -1])


def run(tmp_path, command, cfg, *extra):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code, doc = cli.run([command, "--config", str(path), "--out", str(out), *extra])
    if doc is not None:
        jsonschema.validate(doc, cli.load_schema(f"{command}.output.json"))
    return code, doc, out


@pytest.mark.parametrize(
    "controls, caps",
    [
        ([np.eye(4), np.kron(X, I2), np.kron(I2, X)], [2, 2]),
        ([I2, X, Y, Z], [2]),
        ([I2], [1]),
    ],
)
def test_analyze(tmp_path, controls, caps):
    code, doc, out = run(tmp_path, "analyze", {"controls": [mat(c) for c in controls]})
    assert code == 0
    assert [s["capacity"] for s in doc["subspaces"]] == caps
    assert json.loads((out / "analyze.json").read_text()) == doc


def test_analyze_full_qubit_type(tmp_path):
    _, doc, _ = run(tmp_path, "analyze", {"controls": [mat(c) for c in (I2, X, Y, Z)]})
    (b,) = doc["subspaces"][0]["blocks"]
    assert (b["type"], b["rank"]) == ("ComplexHerm", 2)


def test_malformed_config(tmp_path):
    code, doc, _ = run(tmp_path, "analyze", {"controls": [{"re": "nope"}]})
    assert code == 1 and doc is None
    code, _, _ = run(tmp_path, "analyze", {"controls": [mat(I2)], "colour": 1})
    assert code == 1
    code, _, _ = run(tmp_path, "analyze", {"controls": [mat([[0, 1], [0, 0]])]})
    assert code == 1
    assert cli.run(["analyze", "--config", str(tmp_path / "missing.json")])[0] == 1


def test_error_names_field(tmp_path, capsys):
    run(tmp_path, "simulate", {"delta": 0, "X": 1, "psi0": {"re": [1, 0]}, "schedule": {"centers": [0, 0]}})
    assert "/delta" in capsys.readouterr().err


def test_resource_limit(tmp_path):
    cfg = {"controls": [mat(np.eye(4)), mat(np.kron(X, I2)), mat(np.kron(I2, X))], "limits": {"max_nodes": 1}}
    assert run(tmp_path, "analyze", cfg)[0] == 2


def test_tolerance_override(tmp_path):
    cfg = {"controls": [mat(I2), mat(Z)]}
    assert run(tmp_path, "analyze", cfg, "--tol-override", "closure=1e-6")[0] == 0
    assert run(tmp_path, "analyze", cfg, "--tol-override", "bogus=1")[0] == 1


def _sim_cfg(schedule, **kw):
    cfg = {"delta": 0.05, "X": 2, "psi0": {"re": [0.6, 0], "im": [0, 0.8]}, "schedule": schedule, "seed": 7, "trajectories": 10000}
    cfg.update(kw)
    return cfg


def test_simulate_unbiased(tmp_path):
    code, doc, out = run(tmp_path, "simulate", _sim_cfg({"constant": mat(np.zeros((2, 2)))}))
    assert code == 0
    p = doc["empirical"]["Plus"]
    assert abs(p - 0.5) <= 3 * np.sqrt(0.25 / 10000)
    assert doc["exact"]["Plus"] == pytest.approx(0.5, abs=1e-12)
    first = (out / "trajectories.csv").read_bytes()
    run(tmp_path, "simulate", _sim_cfg({"constant": mat(np.zeros((2, 2)))}))
    assert (out / "trajectories.csv").read_bytes() == first


def test_simulate_closed_form(tmp_path):
    code, doc, _ = run(tmp_path, "simulate", _sim_cfg({"centers": [1, -1], "x_max": 4}))
    assert code == 0
    p = doc["exact"]["Plus"]
    assert abs(doc["empirical"]["Plus"] - p) <= 3 * np.sqrt(p * (1 - p) / 10000)
    assert abs(doc["born"]["Plus"] - p) <= 1e-3


def test_simulate_seed_flag(tmp_path):
    cfg = _sim_cfg({"centers": [1, -1], "x_max": 4}, trajectories=50)
    _, a, _ = run(tmp_path, "simulate", cfg, "--seed", "3")
    assert a["seed"] == 3


def test_simulate_normalization_failure(tmp_path):
    cfg = _sim_cfg({"constant": mat(np.diag([1.0, 0.25, -0.7]))}, psi0={"re": [1, 0, 0]}, trajectories=10)
    assert run(tmp_path, "simulate", cfg)[0] == 3


def test_verify(tmp_path):
    code, doc, _ = run(tmp_path, "verify", {"delta": 0.01, "X": 2, "schedule": {"centers": [1, -1], "x_max": 4}})
    assert code == 0 and doc["passed"]
    code, doc, _ = run(tmp_path, "verify", {"delta": 0.01, "X": 2, "schedule": {"constant": mat(np.diag([1, 0.25]))}})
    assert code == 3
    order = next(c for c in doc["checks"] if c["name"] == "reversibility_order")
    assert not order["passed"] and order["value"] == pytest.approx(2.0, abs=0.1)
    assert run(tmp_path, "verify", {"delta": 0, "X": 2, "schedule": {"centers": [1, -1]}})[0] == 1


def _syn(target, controls=(I2, Z)):
    return {"controls": [mat(c) for c in controls], "target": mat(target), "X": 2, "delta": 0.01}


def test_synthesize_ok(tmp_path):
    code, doc, out = run(tmp_path, "synthesize", _syn(np.diag([0.8, 0.3])))
    assert code == 0 and doc["achievable"]
    assert doc["roundtrip_error"] <= 1e-4
    sched = json.loads((out / "schedule.json").read_text())
    assert sched["centers"] == doc["centers"]


def test_synthesize_open_interval(tmp_path):
    code, doc, _ = run(tmp_path, "synthesize", _syn(np.diag([1.0, 0.3])))
    assert code == 4
    assert any("open interval" in v for v in doc["reports"][0]["violations"])


def test_synthesize_capacity(tmp_path):
    cfg = _syn(np.diag([0.2, 0.5, 0.8, 0.8]), controls=(np.eye(4), np.diag([1, 1, -1, -1])))
    code, doc, _ = run(tmp_path, "synthesize", cfg)
    assert code == 4
    assert any("spectrum capacity" in v for v in doc["reports"][0]["violations"])


def test_synthesize_saturation(tmp_path):
    code, doc, _ = run(tmp_path, "synthesize", _syn(np.diag([0.05, 0.5])))
    assert code == 4
    assert any("saturation" in v for v in doc["reports"][0]["violations"])


def test_module_entry(tmp_path):
    path = tmp_path / "a.json"
    path.write_text(json.dumps({"controls": [mat(I2)]}))
    res = subprocess.run(
        [sys.executable, "-m", "contmeas.cli", "analyze", "--config", str(path), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0
    assert (tmp_path / "analyze.json").exists()


def test_shipped_docs_schemas_match():
    from pathlib import Path

    docs = Path(__file__).resolve().parents[1] / "docs" / "schemas"
    for name in ("analyze", "simulate", "verify", "synthesize"):
        for kind in ("input", "output"):
            f = f"{name}.{kind}.json"
            assert json.loads((docs / f).read_text()) == cli.load_schema(f)
