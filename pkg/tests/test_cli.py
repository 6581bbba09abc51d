import json
import subprocess
import sys

import pytest

from bhlab.cli import main
from bhlab.model import model_to_dict, reference_model


@pytest.fixture
def ref_file(root):
    return str(root / "models" / "reference_beta0p5.json")


def test_model_check(ref_file, tmp_path, capsys):
    assert main(["model", "check", ref_file]) == 0
    assert "PASS  Criticality" in capsys.readouterr().out
    bad = model_to_dict(reference_model())
    bad["offspring"][1]["outcomes"][0][1] = 0.5  # probabilities no longer sum to 1
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert main(["model", "check", str(p)]) == 1


def test_constants(ref_file, capsys):
    assert main(["constants", ref_file]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["D"] == [[1.0, 1.0], [0.5, 0.5]] and d["B"] == pytest.approx(1 / 6)
    assert main(["constants", ref_file, "--d-convention", "renewal"]) == 0
    assert json.loads(capsys.readouterr().out)["D"] == [[0.5, 1.0], [0.5, 1.0]]


def test_volterra(ref_file, tmp_path):
    out = tmp_path / "f.csv"
    assert main(["volterra", ref_file, "--horizon", "10", "--step", "0.5", "--s1", "0.5",
                 "--s2", "0.5", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "t,F1,F2" and rows[1] == "0.0,0.5,0.5" and len(rows) == 22


def test_limits(root, tmp_path):
    m025 = str(root / "models" / "reference_beta0p25.json")
    m075 = str(root / "models" / "reference_beta0p75.json")
    assert main(["limits", "omega", m025, "--lam", "0.5", "1", "--out",
                 str(tmp_path / "o.csv")]) == 0
    assert len((tmp_path / "o.csv").read_text().splitlines()) == 3
    assert main(["limits", "theta", m025, "--out", str(tmp_path / "t.csv")]) == 0
    assert main(["limits", "h", m075, "--out", str(tmp_path / "h.csv")]) == 0
    assert main(["limits", "h", m025, "--out", str(tmp_path / "h.csv")]) == 1
    assert main(["limits", "ofun", m025, "--s", "0.5", "--horizon", "2000", "--out",
                 str(tmp_path / "of.csv")]) == 0


def test_regimes_map(ref_file, tmp_path):
    out = tmp_path / "map.csv"
    assert main(["regimes", "map", ref_file, "--nmin", "1", "--nmax", "100", "--tmin", "1",
                 "--tmax", "1e4", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 9 * 17


def test_experiment_exit_codes(root, tmp_path):
    cfg = {"model": str(root / "models" / "reference_beta0p5.json"), "theorem": "T1",
           "points": [[200, 110.0]], "args": [[1, 1]], "replicates": 2000}
    good = tmp_path / "good.json"
    good.write_text(json.dumps({**cfg, "d_convention": "renewal"}))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(cfg))  # the paper D misses this point by ~0.16
    assert main(["experiment", "run", str(good), "--out-dir", str(tmp_path), "--quiet"]) == 0
    assert (tmp_path / "good.csv").exists() and (tmp_path / "good.json").exists()
    assert main(["experiment", "run", str(bad), "--out-dir", str(tmp_path), "--quiet"]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({**cfg, "theorem": "T9"}))
    assert main(["experiment", "run", str(broken), "--out-dir", str(tmp_path)]) == 1


def test_io_errors(tmp_path):
    assert main(["constants", str(tmp_path / "missing.json")]) == 3
    assert main(["experiment", "run", str(tmp_path / "missing.json"), "--out-dir",
                 str(tmp_path)]) == 3


def test_module_entry_point(ref_file):
    r = subprocess.run([sys.executable, "-m", "bhlab", "model", "check", ref_file],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "FiniteB" in r.stdout
