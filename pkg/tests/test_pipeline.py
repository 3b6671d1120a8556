import csv
import json

import numpy as np
import pytest

from conftest import roots_of_unity
from kzsurface import JobConfig, TorusSurface, run_compute, run_convergence, run_sweep
from kzsurface.errors import ConfigError
from kzsurface.pipeline import (CACHE_ENV, SWEEP_COLUMNS, ResultRecord, atomic_write_text, epsilon_family,
                                min_separation, resolve_cache_dir)
from kzsurface.tensor import ATensor


def test_config_validation():
    c = roots_of_unity(4)
    for bad in ({"mesh": {"refinement_level": -1}}, {"mesh": {"refinement_level": 1.5}}, {"tol": 0},
                {"solver_tol": float("nan")}, {"threads": 0}, {"mesh": {"base_resolution": 0}}):
        with pytest.raises(ConfigError):
            JobConfig(c, **bad)


def test_hash_tracks_inputs():
    c = roots_of_unity(6)
    h = JobConfig(c).hash()
    assert h == JobConfig(c, threads=4).hash()
    assert h != JobConfig(c, tol=1e-6).hash()
    assert h != JobConfig(c, mesh={"refinement_level": 1}).hash()
    assert h != JobConfig(roots_of_unity(8)).hash()


def test_cache_dir_resolution(tmp_path, monkeypatch):
    c = roots_of_unity(4)
    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "env"))
    assert resolve_cache_dir(JobConfig(c)) == tmp_path / "env"
    assert resolve_cache_dir(JobConfig(c, cache_dir=tmp_path / "flag")) == tmp_path / "flag"
    monkeypatch.delenv(CACHE_ENV)
    assert resolve_cache_dir(JobConfig(c)).name == "kzsurface"


def test_compute_then_cache_hit(tmp_path):
    cfg = JobConfig(roots_of_unity(6), cache_dir=tmp_path)
    first = run_compute(cfg)
    assert not first.cache_hit and first.passed
    assert first.genus == 2 and first.a_g == pytest.approx(0.18783004327646718, rel=1e-9)
    assert first.e1["kahler_residual"] < 1e-9
    second = run_compute(cfg)
    assert second.cache_hit
    assert second.a_g == first.a_g and second.hash == first.hash
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == [f"{first.hash}.atensor.json", f"{first.hash}.json"]


def test_corrupt_cache_is_recomputed(tmp_path, caplog):
    cfg = JobConfig(roots_of_unity(4), cache_dir=tmp_path)
    rec = run_compute(cfg)
    (tmp_path / f"{rec.hash}.json").write_text("{not json")
    again = run_compute(cfg)
    assert not again.cache_hit
    assert "unreadable cache" in caplog.text


def test_outputs_written(tmp_path):
    out = tmp_path / "out"
    rec = run_compute(JobConfig(roots_of_unity(6), out=out, use_cache=False))
    assert rec.atensor == "atensor.json"
    stored = ResultRecord.from_json(json.loads((out / "record.json").read_text()))
    assert stored.a_g == rec.a_g
    a = ATensor.from_json(json.loads((out / "atensor.json").read_text()))
    assert a.genus == 2
    rows = list(csv.reader((out / "summary.csv").open()))
    assert rows[1][0] == rec.hash and rows[0][-1] == "passed"


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_text(tmp_path / "a" / "x.txt", "hello")
    assert (tmp_path / "a" / "x.txt").read_text() == "hello"
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["x.txt"]


def test_epsilon_family_geometry():
    c = epsilon_family(0.3)
    assert c.genus == 2
    assert min_separation(c) == pytest.approx(0.6)


def test_sweep_skips_collisions(tmp_path):
    res = run_sweep(JobConfig(roots_of_unity(6), use_cache=False), "epsilon", [0.5, 1e-8, 0.0],
                    out_csv=tmp_path / "s.csv")
    status = [r["status"] for r in res.rows]
    assert status == ["ok", "skipped", "skipped"]
    assert "collide" in res.rows[1]["reason"]
    assert "coincide" in res.rows[2]["reason"]
    assert res.summary["n_ok"] == 1
    rows = list(csv.DictReader((tmp_path / "s.csv").open()))
    assert list(rows[0]) == SWEEP_COLUMNS and len(rows) == 3


def test_mobius_sweep_is_flat():
    res = run_sweep(JobConfig(roots_of_unity(6), mesh={"refinement_level": 1}, use_cache=False),
                    "mobius", [0.0, 0.2])
    vals = [r["a_g"] for r in res.rows]
    assert abs(vals[0] - vals[1]) < 0.01 * vals[0]


def test_unknown_family():
    with pytest.raises(ConfigError):
        run_sweep(JobConfig(roots_of_unity(6)), "banana", [1.0])


def test_convergence_hyperelliptic(tmp_path):
    rep = run_convergence(JobConfig(roots_of_unity(6), out=tmp_path, use_cache=False), [0, 1, 2])
    assert rep["status"] == "pass"
    names = [q["name"] for q in rep["quantities"]]
    assert names[0] == "a_g" and names[1].startswith("A[")
    assert all(q["orders"][-1] >= 1.5 for q in rep["quantities"])
    assert json.loads((tmp_path / "convergence.json").read_text())["status"] == "pass"


def test_convergence_torus():
    rep = run_convergence(JobConfig(TorusSurface(1j, 9)), [0, 1, 2])
    (q,) = rep["quantities"]
    assert q["kind"] == "error" and q["status"] == "pass"
    assert np.all(np.abs(np.array(q["orders"]) - 2) < 0.15)


@pytest.mark.parametrize("levels", [[0, 1], [0, 2, 3]])
def test_convergence_level_checks(levels):
    with pytest.raises(ConfigError):
        run_convergence(JobConfig(roots_of_unity(6)), levels)
