"""Command line front end.

    kzsurface compute     --surface S [--refine L] [--tol T] [--out DIR]
    kzsurface diagram     EXPR --surface S [--refine L]
    kzsurface sweep       --family {epsilon,constant,mobius} --values v1,v2,... [--surface S]
    kzsurface convergence --surface S --levels 0,1,2
    kzsurface selftest    [algebra|torus|all]
    kzsurface q-check     --surface S [--refine L]

``S`` is a JSON file, inline JSON, or a preset: ``x^N-1`` (N even, >= 4)
or ``torus`` / ``torus:TAU`` with TAU a Python complex literal such as
``1j``. Exit codes: 0 pass, 1 numeric failure, 2 configuration error,
3 unsupported model. Only the cache directory may come from the
environment (``KZSURFACE_CACHE_DIR``).
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import algebra
from ._version import __version__
from .errors import ConfigError, KZError
from .pipeline import JobConfig, run_compute, run_convergence, run_sweep, torus_oracle_error
from .surfaces import HyperellipticCurve, TorusSurface, load_surface, surface_from_spec

log = logging.getLogger("kzsurface")

_PRESET = re.compile(r"^x\^(\d+)-1$")


def parse_surface(text: str | None):
    if not text:
        raise ConfigError("--surface is required")
    m = _PRESET.match(text.replace(" ", ""))
    if m:
        n = int(m.group(1))
        if n < 4 or n % 2:
            raise ConfigError(f"preset x^{n}-1 needs an even degree >= 4")
        return HyperellipticCurve(tuple(np.exp(2j * np.pi * k / n) for k in range(n)))
    if text == "torus" or text.startswith("torus:"):
        tau = text.partition(":")[2] or "1j"
        try:
            return TorusSurface(complex(tau.replace("i", "j")))
        except ValueError as exc:
            raise ConfigError(f"bad torus modulus {tau!r}") from exc
    if text.lstrip().startswith("{"):
        try:
            return surface_from_spec(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"inline surface JSON is invalid ({exc})") from exc
    path = Path(text)
    if not path.exists():
        raise ConfigError(f"surface {text!r} is neither a preset nor an existing file")
    return load_surface(path)


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma separated numbers, got {text!r}") from exc


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma separated integers, got {text!r}") from exc


def _config(args, surface=None) -> JobConfig:
    surface = surface if surface is not None else parse_surface(args.surface)
    mesh = {"refinement_level": args.refine}
    return JobConfig(surface, mesh, tol=args.tol, threads=args.threads,
                     out=Path(args.out) if args.out else None,
                     cache_dir=Path(args.cache_dir) if args.cache_dir else None,
                     use_cache=not args.no_cache)


def _dump(obj):
    print(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist()) if x.dtype != complex else [[v.real, v.imag] for v in x.ravel()]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


# ---------------------------------------------------------------- verbs


def cmd_compute(args) -> int:
    rec = run_compute(_config(args))
    out = rec.to_json()
    out["cache_hit"] = rec.cache_hit
    _dump(out)
    return 0 if rec.passed else 1


def cmd_diagram(args) -> int:
    from .diagrams import eval_diagram, parse_diagram
    from .state import prepare_state

    expr = parse_diagram(args.expr)
    cfg = _config(args)
    state = prepare_state(cfg.surface, cfg.mesh, {"tol": cfg.solver_tol})
    val = eval_diagram(expr, state, threads=cfg.threads)
    _dump({"diagram": args.expr, "free": val.free, "value": val.value, "cost": val.cost,
           "n_vertices": state.mesh.n_vertices})
    return 0


def cmd_sweep(args) -> int:
    base = parse_surface(args.surface) if args.surface else HyperellipticCurve((1, 1j, -1, -1j, 2, -2))
    cfg = _config(args, base)
    res = run_sweep(cfg, args.family, _floats(args.values))
    if res.path is None:
        from .pipeline import SWEEP_COLUMNS

        print(",".join(SWEEP_COLUMNS))
        for r in res.rows:
            print(",".join(str(r[c]) for c in SWEEP_COLUMNS))
    print(json.dumps(res.summary), file=sys.stderr)
    bad = [r for r in res.rows if r["status"] == "ok" and r["max_residual"] > cfg.tol]
    return 1 if bad else 0


def cmd_convergence(args) -> int:
    rep = run_convergence(_config(args), _ints(args.levels))
    _dump(rep)
    if rep["status"] == "inconclusive":
        log.warning("convergence inconclusive: error sequence not monotone")
    return 1 if rep["status"] == "fail" else 0


def selftest_rows(which: str = "all") -> list:
    rows = []
    if which in ("algebra", "all"):
        rows.extend(algebra.selftest())
    if which in ("torus", "all"):
        torus = TorusSurface(1j, 18)
        errs = [torus_oracle_error(torus, {"refinement_level": lv}) for lv in (0, 1, 2)]
        order = float(np.log2(errs[1] / errs[2]))
        rows.append({"test": "torus Green vs Fourier (5184 vertices)", "value": errs[2], "expected": "<1e-3",
                     "pass": errs[2] < 1e-3})
        rows.append({"test": "torus Green order", "value": order, "expected": "~2",
                     "pass": abs(order - 2.0) < 0.2})
    return rows


def cmd_selftest(args) -> int:
    rows = selftest_rows(args.which)
    for r in rows:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['test']}: {r['value']} (expected {r['expected']})")
    return 0 if all(r["pass"] for r in rows) else 1


def cmd_qcheck(args) -> int:
    from .johnson import JohnsonMap, e1_J_matrix, q_restricted_checks
    from .state import prepare_state

    cfg = _config(args)
    state = prepare_state(cfg.surface, cfg.mesh, {"tol": cfg.solver_tol})
    u = algebra.u_subspace(state.genus)
    jmap = JohnsonMap(state)
    rep = q_restricted_checks(state, u, jmap)
    ej = e1_J_matrix(state, u, jmap)
    rep["e1_J"] = {"labels": ej["labels"], "parity": ej["parity"], "rank": ej["rank"],
                   "hermitian_residual": ej["hermitian_residual"], "matrix": ej["matrix"],
                   "convention": ej["convention"]}
    _dump(rep)
    return 0 if rep["pass"] else 1


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--surface", help="JSON file, inline JSON, x^N-1 or torus[:TAU]")
    common.add_argument("--refine", type=int, default=0, help="refinement level (default 0)")
    common.add_argument("--tol", type=float, default=1e-8, help="pass threshold for relative residuals")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--cache-dir", help="record cache (default $KZSURFACE_CACHE_DIR or ~/.cache/kzsurface)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--no-cache", action="store_true", help="neither read nor write the cache")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kzsurface", description="Kawazumi-Zhang tensors on explicit surfaces")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)
    s = sub.add_parser("compute", parents=[common], help="A tensor, a_g and identity residuals")
    s.set_defaults(func=cmd_compute)
    s = sub.add_parser("diagram", parents=[common], help="evaluate a diagram expression")
    s.add_argument("expr", help="e.g. 'V1(i,~j) V2(k,~l); V1-V2; i=l, j=k'")
    s.set_defaults(func=cmd_diagram)
    s = sub.add_parser("sweep", parents=[common], help="a_g along a one-parameter family (CSV)")
    s.add_argument("--family", default="epsilon", help="epsilon, constant or mobius")
    s.add_argument("--values", required=True, help="comma separated parameter values")
    s.set_defaults(func=cmd_sweep)
    s = sub.add_parser("convergence", parents=[common], help="empirical orders over refinement levels")
    s.add_argument("--levels", default="0,1,2")
    s.set_defaults(func=cmd_convergence)
    s = sub.add_parser("selftest", parents=[common], help="exact algebra and torus oracles")
    s.add_argument("which", nargs="?", default="all", choices=["algebra", "torus", "all"])
    s.set_defaults(func=cmd_selftest)
    s = sub.add_parser("q-check", parents=[common], help="Q on U and the e1_J form (genus >= 3)")
    s.set_defaults(func=cmd_qcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KZError as exc:
        print(f"error [{exc.tag()}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
