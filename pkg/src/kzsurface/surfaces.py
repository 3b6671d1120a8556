"""Surface models: hyperelliptic curves y^2 = prod(x - e_i) and flat tori."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ModelError, UnsupportedModelError


def _as_complex(value) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ModelError(f"complex number must be [re, im], got {value!r}")
        return complex(float(value[0]), float(value[1]))
    return complex(value)


@dataclass(frozen=True)
class HyperellipticCurve:
    """Affine model y^2 = prod_i (x - e_i) with an even number of finite branch points.

    ``cut_plan`` pairs the branch points; each pair is joined by a branch cut
    when the double cover is meshed. Defaults to (0,1), (2,3), ...
    """

    branch_points: tuple[complex, ...]
    cut_plan: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        pts = tuple(complex(p) for p in self.branch_points)
        object.__setattr__(self, "branch_points", pts)
        n = len(pts)
        if n < 4 or n % 2:
            raise ModelError(f"need an even number >= 4 of branch points, got {n}")
        if not all(np.isfinite(p.real) and np.isfinite(p.imag) for p in pts):
            raise ModelError("branch points must be finite")
        for a in range(n):
            for b in range(a + 1, n):
                if pts[a] == pts[b]:
                    raise ModelError(f"branch points {a} and {b} coincide")
        plan = self.cut_plan or tuple((k, k + 1) for k in range(0, n, 2))
        plan = tuple((int(a), int(b)) for a, b in plan)
        used = [i for pair in plan for i in pair]
        if sorted(used) != list(range(n)) or any(a == b for a, b in plan):
            raise ModelError(f"cut plan {plan} must pair every branch point exactly once")
        object.__setattr__(self, "cut_plan", plan)

    @property
    def genus(self) -> int:
        return len(self.branch_points) // 2 - 1

    def to_spec(self) -> dict:
        return {
            "type": "hyperelliptic",
            "branch_points": [[p.real, p.imag] for p in self.branch_points],
            "cuts": [list(pair) for pair in self.cut_plan],
        }


@dataclass(frozen=True)
class TorusSurface:
    """Flat torus C / (Z + tau Z), meshed as a regular periodic grid."""

    modulus: complex
    grid_resolution: int = 32

    def __post_init__(self):
        tau = complex(self.modulus)
        object.__setattr__(self, "modulus", tau)
        if not tau.imag > 0:
            raise ModelError(f"torus modulus needs Im(tau) > 0, got {tau}")
        if int(self.grid_resolution) < 2:
            raise ModelError("grid_resolution must be >= 2")
        object.__setattr__(self, "grid_resolution", int(self.grid_resolution))

    @property
    def genus(self) -> int:
        return 1

    def to_spec(self) -> dict:
        return {
            "type": "torus",
            "tau": [self.modulus.real, self.modulus.imag],
            "grid_resolution": self.grid_resolution,
        }


SurfaceModel = Union[HyperellipticCurve, TorusSurface]


def genus(curve: HyperellipticCurve | Sequence[complex]) -> int:
    """Genus of a hyperelliptic model: (#branch points)/2 - 1."""
    if isinstance(curve, (HyperellipticCurve, TorusSurface)):
        return curve.genus
    n = len(curve)
    if n < 4 or n % 2:
        raise ModelError(f"need an even number >= 4 of branch points, got {n}")
    return n // 2 - 1


def mobius_transform(curve: HyperellipticCurve, coeffs) -> HyperellipticCurve:
    """Move the branch points by x -> (a x + b) / (c x + d).

    The image describes the same abstract surface. A branch point sent to
    infinity is rejected because the model keeps all branch points finite.
    """
    a, b, c, d = (complex(v) for v in np.asarray(coeffs, dtype=complex).ravel())
    det = a * d - b * c
    if abs(det) == 0:
        raise ModelError("degenerate Moebius map (ad - bc = 0)")
    scale = max(abs(a), abs(b), abs(c), abs(d))
    images = []
    for e in curve.branch_points:
        den = c * e + d
        if abs(den) <= 1e-12 * scale * max(1.0, abs(e)):
            raise UnsupportedModelError(f"branch point {e} is mapped to infinity")
        images.append((a * e + b) / den)
    return HyperellipticCurve(tuple(images), curve.cut_plan)


def surface_from_spec(spec: dict) -> SurfaceModel:
    kind = spec.get("type")
    if kind == "hyperelliptic":
        pts = tuple(_as_complex(p) for p in spec["branch_points"])
        cuts = tuple(tuple(c) for c in spec.get("cuts", ()))
        return HyperellipticCurve(pts, cuts)
    if kind == "torus":
        return TorusSurface(_as_complex(spec["tau"]), int(spec.get("grid_resolution", 32)))
    if not kind:
        raise ModelError("surface spec needs a 'type' field")
    raise UnsupportedModelError(f"surface type {kind!r} is not supported (hyperelliptic or torus)")


def load_surface(path: str | Path) -> SurfaceModel:
    with open(path, encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: invalid JSON ({exc})") from exc
    return surface_from_spec(spec)


def model_hash(model: SurfaceModel, params: dict | None = None) -> str:
    payload = {"model": model.to_spec(), "params": params or {}}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
