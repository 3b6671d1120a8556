import json
import shutil
import subprocess

import numpy as np
import pytest

from kzsurface.cli import main, parse_surface
from kzsurface.errors import ConfigError


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_presets():
    c = parse_surface("x^6 - 1")
    assert c.genus == 2
    assert np.allclose(sorted(np.angle(c.branch_points) % (2 * np.pi)), 2 * np.pi * np.arange(6) / 6)
    assert parse_surface("torus").modulus == 1j
    assert parse_surface("torus:0.5+1.5j").modulus == 0.5 + 1.5j
    assert parse_surface('{"type": "torus", "tau": [0, 2]}').modulus == 2j


@pytest.mark.parametrize("text", ["x^5-1", "x^2-1", "torus:abc", "{bad json", "/no/such/file.json", ""])
def test_bad_surfaces(text):
    with pytest.raises(ConfigError):
        parse_surface(text)


def test_surface_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"type": "hyperelliptic", "branch_points": [[1, 0], [0, 1], [-1, 0], [0, -1]]}))
    assert parse_surface(str(p)).genus == 1


def test_compute_json_and_cache(capsys, tmp_path):
    code, out, _ = run(capsys, "compute", "--surface", "x^6-1", "--cache-dir", str(tmp_path))
    assert code == 0
    rec = json.loads(out)
    assert rec["genus"] == 2 and not rec["cache_hit"]
    code, out, _ = run(capsys, "compute", "--surface", "x^6-1", "--cache-dir", str(tmp_path))
    assert json.loads(out)["cache_hit"]


def test_compute_writes_out_dir(capsys, tmp_path):
    code, _, _ = run(capsys, "compute", "--surface", "x^4-1", "--no-cache", "--out", str(tmp_path))
    assert code == 0
    assert {p.name for p in tmp_path.iterdir()} == {"record.json", "atensor.json", "summary.csv"}


def test_diagram_verb(capsys):
    code, out, _ = run(capsys, "diagram", "V1(i,~j) V2(k,~l); V1-V2; j=k, l=i", "--surface", "x^6-1")
    assert code == 0
    res = json.loads(out)
    assert res["value"][0] == pytest.approx(0.18783004327646718, rel=1e-9)
    assert res["cost"]["strategy"] == "tree"


def test_sweep_verb(capsys):
    code, out, err = run(capsys, "sweep", "--family", "epsilon", "--values", "0.5,0.4", "--no-cache")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("param,status") and len(lines) == 3
    assert json.loads(err.strip().splitlines()[-1])["n_ok"] == 2


def test_selftest_algebra(capsys):
    code, out, _ = run(capsys, "selftest", "algebra")
    assert code == 0
    assert out.count("PASS") >= 8 and "FAIL" not in out


@pytest.mark.filterwarnings("ignore:Q has rank")
def test_q_check(capsys):
    code, out, _ = run(capsys, "q-check", "--surface", "x^8-1")
    assert code == 0
    rep = json.loads(out)
    assert rep["pass"] and rep["e1_J"]["rank"] == 1


@pytest.mark.parametrize("argv,code", [
    (["q-check", "--surface", "x^6-1"], 3),
    (["compute", "--surface", '{"type": "plane_quartic"}'], 3),
    (["compute", "--surface", "x^5-1"], 2),
    (["compute", "--surface", "x^6-1", "--refine", "-1"], 2),
    (["diagram", "V1(i,~j) V2(k,~l); V1-V2; i=i", "--surface", "x^6-1"], 2),
    (["convergence", "--surface", "x^6-1", "--levels", "0,1"], 2),
    (["sweep", "--values", "a,b"], 2),
])
def test_exit_codes(capsys, argv, code):
    got, _, err = run(capsys, *argv)
    assert got == code
    assert err.startswith("error [")


def test_console_script():
    exe = shutil.which("kzsurface")
    if exe is None:
        pytest.skip("console script not on PATH")
    res = subprocess.run([exe, "--version"], capture_output=True, text=True, check=True)
    assert res.stdout.strip() == "0.1.0"
