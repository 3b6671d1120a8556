"""Job configuration, cached compute records, sweeps and convergence reports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import green
from ._version import __version__
from .convergence import assess
from .errors import ConfigError, KZError, UnsupportedModelError
from .mesh import mesh_params
from .state import prepare_state
from .surfaces import HyperellipticCurve, SurfaceModel, TorusSurface, mobius_transform
from .tensor import ATensor, compute_A, kz_invariant

log = logging.getLogger(__name__)

CACHE_ENV = "KZSURFACE_CACHE_DIR"
RECORD_SCHEMA = 1


@dataclass
class JobConfig:
    surface: SurfaceModel
    mesh: dict = field(default_factory=dict)
    tol: float = 1e-8
    solver_tol: float = 1e-12
    threads: int = 1
    out: Path | None = None
    cache_dir: Path | None = None
    use_cache: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        level = self.mesh.get("refinement_level", 0)
        if not isinstance(level, int) or level < 0:
            raise ConfigError(f"refinement_level must be an integer >= 0, got {level!r}")
        for name in ("tol", "solver_tol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if int(self.threads) < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads!r}")
        try:
            mesh_params(self.mesh)
        except (TypeError, ValueError, KZError) as exc:
            raise ConfigError(str(exc)) from exc

    def key(self) -> dict:
        return {
            "surface": self.surface.to_spec(),
            "mesh": mesh_params(self.mesh),
            "tol": self.tol,
            "solver_tol": self.solver_tol,
            "code_version": __version__,
        }

    def hash(self) -> str:
        blob = json.dumps(self.key(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def resolve_cache_dir(config: JobConfig) -> Path:
    if config.cache_dir is not None:
        return Path(config.cache_dir)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "kzsurface"


def atomic_write_text(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class ResultRecord:
    hash: str
    surface: dict
    params: dict
    genus: int
    a_g: float
    residuals: dict
    e1: dict | None
    n_vertices: int
    passed: bool
    timings: dict = field(default_factory=dict)
    atensor: str | None = None
    cache_hit: bool = False

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in ("hash", "surface", "params", "genus", "a_g", "residuals", "e1",
                                          "n_vertices", "passed", "timings", "atensor")}
        d["schema"] = RECORD_SCHEMA
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ResultRecord":
        return cls(d["hash"], d["surface"], d["params"], d["genus"], d["a_g"], d["residuals"], d["e1"],
                   d["n_vertices"], d["passed"], d.get("timings", {}), d.get("atensor"))


def _check_residuals(residuals: dict, tol: float) -> bool:
    keys = ("conj_symmetry", "swap_symmetry", "trace_right", "trace_left")
    return all(residuals[k] <= tol for k in keys)


def _e1_summary(a: ATensor, a_g: float) -> dict | None:
    if a.genus < 2:
        return None
    from .johnson import e1_phi_coefficients, kahler_contraction

    e1 = e1_phi_coefficients(a)
    kc = kahler_contraction(e1, a, a_g)
    lam = complex(kc["lambda_E1"])
    return {
        "lambda_E1": [lam.real, lam.imag],
        "target": float(kc["target"]),
        "kahler_residual": float(kc["residual"]),
        "conj_symmetry_residual": float(e1.conj_symmetry_residual()),
    }


def run_compute(config: JobConfig) -> ResultRecord:
    """surface -> mesh -> basis -> A -> a_g -> identity report, cached by config hash."""
    key = config.hash()
    cache = resolve_cache_dir(config)
    rec_path = cache / f"{key}.json"
    a_path = cache / f"{key}.atensor.json"
    if config.use_cache and rec_path.exists() and a_path.exists():
        try:
            record = ResultRecord.from_json(json.loads(rec_path.read_text(encoding="utf-8")))
            atensor = ATensor.from_json(json.loads(a_path.read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable cache entry %s (%s)", rec_path, exc)
        else:
            if record.hash == key:
                record.cache_hit = True
                _emit(config, record, atensor)
                return record
    t0 = time.perf_counter()
    state = prepare_state(config.surface, config.mesh, {"tol": config.solver_tol})
    a = compute_A(state)
    a_g = kz_invariant(a)
    e1 = _e1_summary(a, a_g)
    timings = dict(state.timings)
    timings["total"] = time.perf_counter() - t0
    passed = _check_residuals(a.residuals, config.tol)
    if e1 is not None:
        passed = passed and e1["kahler_residual"] <= config.tol
    where = a_path.name if config.use_cache else ("atensor.json" if config.out is not None else None)
    record = ResultRecord(key, config.surface.to_spec(), mesh_params(config.mesh), state.genus, a_g,
                          a.residuals, e1, state.mesh.n_vertices, passed, timings, where)
    if config.use_cache:
        atomic_write_text(a_path, a.dumps())
        atomic_write_text(rec_path, json.dumps(record.to_json(), sort_keys=True, indent=1))
    _emit(config, record, a)
    return record


def _emit(config: JobConfig, record: ResultRecord, atensor: ATensor):
    if config.out is None:
        return
    out = Path(config.out)
    atomic_write_text(out / "record.json", json.dumps(record.to_json(), sort_keys=True, indent=1))
    atomic_write_text(out / "atensor.json", atensor.dumps())
    rows = [["hash", "genus", "n_vertices", "a_g", *sorted(record.residuals), "passed"],
            [record.hash, record.genus, record.n_vertices, repr(record.a_g),
             *[repr(record.residuals[k]) for k in sorted(record.residuals)], record.passed]]
    atomic_write_text(out / "summary.csv", _csv_text(rows))


def _csv_text(rows) -> str:
    import io

    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- sweeps


def epsilon_family(eps: float) -> HyperellipticCurve:
    """y^2 = (x^2 - eps^2)(x^4 - 1); the pair +-eps collides as eps -> 0."""
    return HyperellipticCurve((eps, -eps, 1, 1j, -1, -1j))


def _family(name: str | Callable, base: SurfaceModel) -> Callable:
    if callable(name):
        return name
    if name == "epsilon":
        return epsilon_family
    if name == "constant":
        return lambda _v: base
    if name == "mobius":
        if not isinstance(base, HyperellipticCurve):
            raise UnsupportedModelError("the Moebius family needs a hyperelliptic base surface")
        return lambda t: mobius_transform(base, (1, 0, t, 1))
    raise ConfigError(f"unknown sweep family {name!r} (epsilon, constant, mobius)")


def min_separation(curve: HyperellipticCurve) -> float:
    pts = np.array(curve.branch_points)
    d = np.abs(pts[:, None] - pts[None, :])
    return float(d[np.triu_indices(len(pts), 1)].min())


@dataclass
class SweepResult:
    rows: list
    summary: dict
    path: Path | None = None


SWEEP_COLUMNS = ["param", "status", "reason", "genus", "a_g", "max_residual", "n_vertices", "hash"]


def run_sweep(config: JobConfig, family, values, collision_tol: float = 1e-6,
              out_csv: Path | None = None) -> SweepResult:
    """One row per parameter value; collisions and model errors are skipped with a reason."""
    make = _family(family, config.surface)
    rows = []
    for v in values:
        row = dict.fromkeys(SWEEP_COLUMNS, "")
        row["param"] = v
        try:
            model = make(v)
            if isinstance(model, HyperellipticCurve):
                sep = min_separation(model)
                scale = max(1.0, max(abs(p) for p in model.branch_points))
                if sep <= collision_tol * scale:
                    raise _Skip(f"branch points collide (separation {sep:.3g})")
            rec = run_compute(replace(config, surface=model, out=None))
        except _Skip as exc:
            row.update(status="skipped", reason=str(exc))
        except KZError as exc:
            row.update(status="skipped", reason=f"{exc.tag()}: {exc}")
        else:
            row.update(status="ok", genus=rec.genus, a_g=rec.a_g, n_vertices=rec.n_vertices, hash=rec.hash,
                       max_residual=max(rec.residuals[k] for k in
                                        ("conj_symmetry", "swap_symmetry", "trace_right", "trace_left")))
        rows.append(row)
    ok = [r for r in rows if r["status"] == "ok"]
    summary = {"n_ok": len(ok), "n_skipped": len(rows) - len(ok)}
    if len(ok) >= 2:
        by_param = sorted(ok, key=lambda r: r["param"], reverse=True)
        vals = [r["a_g"] for r in by_param]
        summary["increasing_as_param_decreases"] = all(b > a for a, b in zip(vals[:-1], vals[1:]))
        summary["spread"] = max(vals) - min(vals)
    path = out_csv or (Path(config.out) / "sweep.csv" if config.out else None)
    if path is not None:
        atomic_write_text(path, _csv_text([SWEEP_COLUMNS] + [[r[c] for c in SWEEP_COLUMNS] for r in rows]))
    return SweepResult(rows, summary, path)


class _Skip(Exception):
    pass


# ---------------------------------------------------------------- convergence


def torus_oracle_error(model: TorusSurface, mesh: dict | None = None) -> float:
    """Relative L2 error of Phi(cos(2 pi x) dA) against -cos(2 pi x) / (4 pi^2)."""
    tau = model.modulus
    if abs(tau.real - round(tau.real)) > 1e-12:
        raise UnsupportedModelError("the Fourier oracle needs Re(tau) to be an integer")
    state = prepare_state(model, mesh)
    m = state.mesh
    x = m.node_z.real
    omega = green.two_form_from_density(m, np.cos(2 * np.pi * x), state.interp)
    u = state.interp @ green.green_apply(state.laplacian, omega).values
    exact = -np.cos(2 * np.pi * x) / (4 * np.pi**2)
    return float(np.sqrt(np.sum(m.node_w * np.abs(u - exact) ** 2) / np.sum(m.node_w * exact**2)))


A_ORDER = 1.5
Q_ORDER = 1.0


def run_convergence(config: JobConfig, levels) -> dict:
    """Empirical orders over refinement levels: A-type quantities need >= 1.5, Q residuals >= 1.0."""
    levels = sorted(int(v) for v in levels)
    if len(levels) < 3:
        raise ConfigError("convergence needs at least three levels")
    if any(b - a != 1 for a, b in zip(levels[:-1], levels[1:])):
        raise ConfigError("convergence levels must be consecutive")
    model = config.surface
    quantities = []
    if isinstance(model, TorusSurface):
        errs = [torus_oracle_error(model, {**config.mesh, "refinement_level": lv}) for lv in levels]
        quantities.append(assess("torus_green_l2_error", levels, errs, A_ORDER, kind="error"))
    else:
        a_vals, entry_vals, q_vals, entry = [], [], [], None
        for lv in levels:
            cfg = replace(config, mesh={**config.mesh, "refinement_level": lv}, out=None)
            state = prepare_state(model, cfg.mesh, {"tol": cfg.solver_tol})
            a = compute_A(state)
            a_vals.append(kz_invariant(a))
            if entry is None:
                entry = tuple(int(i) for i in np.unravel_index(np.argmax(np.abs(a.values)), a.values.shape))
            entry_vals.append(float(a.values[entry].real))
            if state.genus >= 3:
                from .johnson import q_restricted_checks

                rep = q_restricted_checks(state)
                q_vals.append(rep["U^2,1"]["max_nonholomorphic_residual"])
        quantities.append(assess("a_g", levels, a_vals, A_ORDER))
        label = "A[" + ",".join(str(i + 1) for i in entry) + "].real"
        quantities.append(assess(label, levels, entry_vals, A_ORDER))
        if q_vals:
            quantities.append(assess("Q_nonholomorphic_residual", levels, q_vals, Q_ORDER, kind="error"))
    statuses = [q.status for q in quantities]
    overall = "fail" if "fail" in statuses else ("pass" if all(s == "pass" for s in statuses) else "inconclusive")
    report = {"surface": model.to_spec(), "levels": levels, "quantities": [q.as_dict() for q in quantities],
              "status": overall}
    if config.out is not None:
        atomic_write_text(Path(config.out) / "convergence.json", json.dumps(report, indent=1, default=float))
    return report
