import hashlib
import json
import subprocess
import sys

import pytest

from symwalks import config as cfgmod
from symwalks.cli import main
from symwalks.runner import COLUMNS, read_csv


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _rows(path):
    meta, cols, rows = read_csv(path.read_text())
    return meta, cols, rows


TELEGRAPH = {"seed": 3, "model": {"preset": "telegraph"}, "beta": 1.0, "N": 3,
             "functional": {"linear": [0.75]}, "p": [0.5, 0.5], "samples": 200, "chunk": 50}


def test_dv_rate_uniform_internal(tmp_path, capsys):
    cfg = {"model": {"preset": "lattice", "box": [[0, 3]], "boundary": "internal"},
           "p": [0.25] * 4}
    assert main(["dv-rate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "0.0"
    _, cols, rows = _rows(tmp_path / "dv_rate.csv")
    assert cols == COLUMNS["dv_rate.csv"]
    assert [r[0] for r in rows] == ["dirichlet_form", "legendre"]


def test_free_energy_preset(tmp_path):
    assert main(["free-energy", "--config", "preset:telegraph", "--out", str(tmp_path)]) == 0
    _, cols, rows = _rows(tmp_path / "free_energy.csv")
    assert cols == ("N", "f_spec", "value", "method")
    by_N = {r[0]: float(r[2]) for r in rows}
    assert abs(by_N["500"] - 0.40139) / 0.40139 < 0.01
    assert by_N["limit"] == pytest.approx(0.401387, abs=1e-6)
    finite = [by_N[k] for k in ("50", "100", "200", "500")]
    assert all(b < a for a, b in zip(finite, finite[1:]))


def test_free_energy_nonlinear(tmp_path):
    cfg = dict(TELEGRAPH, functional={"polynomial": [0.0, 0.0, 1.0]}, N_list=[4, 8])
    assert main(["free-energy", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    _, _, rows = _rows(tmp_path / "free_energy.csv")
    assert [r[3] for r in rows] == ["occupation_basis", "occupation_basis", "variational"]


def test_trace_table(tmp_path):
    cfg = dict(TELEGRAPH, trace={"N_max": 5})
    assert main(["trace", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    _, cols, rows = _rows(tmp_path / "trace.csv")
    assert cols == COLUMNS["trace.csv"] and len(rows) == 5
    assert max(float(r[-1]) for r in rows) < 1e-10


def test_jsym_outputs(tmp_path):
    assert main(["jsym", "--config", "preset:lattice", "--out", str(tmp_path)]) == 0
    cert = json.loads((tmp_path / "jsym.json").read_text())
    assert cert["lower"] <= cert["upper"] + 1e-12
    assert abs(cert["upper"] - cert["beta_dv_rate"]) / cert["beta_dv_rate"] < 1e-4
    assert cert["seed"] == 7


def test_kernel_output(tmp_path):
    assert main(["kernel", "--config", _write(tmp_path, TELEGRAPH), "--out", str(tmp_path)]) == 0
    _, cols, rows = _rows(tmp_path / "kernel.csv")
    assert cols == ("row", "col", "value") and len(rows) == 4


def test_header_and_thread_determinism(tmp_path):
    path = _write(tmp_path, TELEGRAPH)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sample", "--config", path, "--threads", "1", "--out", str(a)]) == 0
    assert main(["sample", "--config", path, "--threads", "8", "--out", str(b)]) == 0
    for name in ("sample.csv", "sample_summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    meta = (a / "sample.csv").read_text().splitlines()[0]
    cfg = cfgmod.resolve(cfgmod.load(path))
    assert meta == f"# symwalks sample config_sha256={cfgmod.config_hash(cfg)} seed=3"
    assert len(cfgmod.config_hash(cfg)) == len(hashlib.sha256().hexdigest())


def test_seed_override_changes_output(tmp_path):
    path = _write(tmp_path, TELEGRAPH)
    main(["sample", "--config", path, "--out", str(tmp_path / "a")])
    main(["sample", "--config", path, "--seed", "4", "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "sample.csv").read_text()
    b = (tmp_path / "b" / "sample.csv").read_text()
    assert a != b and "seed=4" in b.splitlines()[0]


def test_bad_configs_exit_2(tmp_path):
    bad = _write(tmp_path, dict(TELEGRAPH, colour="red"), "unknown.json")
    assert main(["kernel", "--config", bad]) == 2
    assert main(["kernel", "--config", _write(tmp_path, dict(TELEGRAPH, beta=-1.0), "neg.json")]) == 2
    assert main(["dv-rate", "--config", _write(tmp_path, dict(TELEGRAPH, p=[0.5, 0.6]), "p.json")]) == 2
    assert main(["kernel", "--config", "preset:nonexistent"]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["kernel", "--config", str(broken)]) == 2
    assert main(["kernel", "--config", _write(tmp_path, TELEGRAPH), "--threads", "0"]) == 2


def test_numerical_failure_exit_3(tmp_path):
    cfg = dict(TELEGRAPH, N=64, functional={"polynomial": [0.0, 0.0, 1.0]}, samples=500, chunk=500)
    assert main(["sample", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 3


@pytest.mark.parametrize("preset", ["telegraph", "lattice"])
def test_verify_presets(tmp_path, preset, capsys):
    assert main(["verify", "--config", f"preset:{preset}", "--out", str(tmp_path)]) == 0
    assert "all checks passed" in capsys.readouterr().out
    _, cols, rows = _rows(tmp_path / "verify.csv")
    assert all(r[1] == "pass" for r in rows)


def test_module_entry_point(tmp_path):
    cfg = {"model": {"preset": "lattice", "box": [[0, 1]], "boundary": "absorbing"}, "p": [0.5, 0.5]}
    out = subprocess.run([sys.executable, "-m", "symwalks", "dv-rate", "--config",
                          _write(tmp_path, cfg), "--out", str(tmp_path)],
                         capture_output=True, text=True, check=True)
    assert float(out.stdout) == pytest.approx(1.0)
