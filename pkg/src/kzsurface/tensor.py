"""The tensor A_{i jbar k lbar}, the invariant a_g, and their identity checks.

``A[i, j, k, l] = b(i, j)^T u(k, l)`` where ``b(i, j)`` is the load vector of
``psi_i ^ conj(psi_j)`` and ``u(k, l)`` the Green operator applied to
``b(k, l)``. Array indices are 0-based; JSON output uses 1-based labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .basis import raw_densities
from .errors import ConsistencyError
from .green import dense_green_oracle
from .mesh import quadrature_nodes
from .state import SurfaceState

SCHEMA_VERSION = 1


@dataclass
class ATensor:
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    @property
    def genus(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, idx):
        return self.values[idx]

    def norm(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def to_json(self) -> dict:
        g = self.genus
        entries = []
        for i in range(g):
            for j in range(g):
                for k in range(g):
                    for l in range(g):
                        z = self.values[i, j, k, l]
                        entries.append([i + 1, j + 1, k + 1, l + 1, float(z.real), float(z.imag)])
        return {"schema": SCHEMA_VERSION, "g": g, "entries": entries,
                "residuals": self.residuals, "metadata": self.metadata}

    @classmethod
    def from_json(cls, data: dict) -> "ATensor":
        g = int(data["g"])
        vals = np.zeros((g, g, g, g), dtype=complex)
        for i, j, k, l, re, im in data["entries"]:
            vals[i - 1, j - 1, k - 1, l - 1] = complex(re, im)
        return cls(vals, dict(data.get("metadata", {})), dict(data.get("residuals", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def compute_A(state: SurfaceState) -> ATensor:
    b = state.loads
    u = state.solutions
    vals = np.einsum("ijv,klv->ijkl", b, u)
    meta = {
        "surface_hash": state.content_hash,
        "refinement_level": int(state.mesh.params.get("refinement_level", 0)),
        "n_vertices": state.mesh.n_vertices,
        "solver_tol": state.laplacian.tol,
        "genus": state.genus,
    }
    a = ATensor(vals, meta)
    a.residuals = verify_identities(a)
    return a


def verify_identities(a: ATensor) -> dict:
    """Max residuals of the identity families, divided by max(|A|, 1e-12)."""
    v = a.values
    scale = max(a.norm(), 1e-12)
    ag = np.einsum("ijji->", v)
    return {
        "conj_symmetry": float(np.abs(np.conj(v) - v.transpose(1, 0, 3, 2)).max()) / scale,
        "swap_symmetry": float(np.abs(v - v.transpose(2, 3, 0, 1)).max()) / scale,
        "trace_right": float(np.abs(np.einsum("ijll->ij", v)).max()) / scale,
        "trace_left": float(np.abs(np.einsum("jjkl->kl", v)).max()) / scale,
        "imag_a_g": float(abs(ag.imag)) / max(abs(ag.real), 1e-300),
        "norm": a.norm(),
    }


def kz_invariant(a: ATensor, tol: float = 1e-8) -> float:
    """a_g = Re sum_ij A[i][j][j][i]; the imaginary part must be negligible."""
    s = np.einsum("ijji->", a.values)
    if abs(s.imag) > tol * max(abs(s.real), a.norm(), 1e-300) and abs(s.imag) > 1e-14:
        raise ConsistencyError(f"a_g has imaginary part {s.imag:.3e}", stage="kz_invariant")
    return float(s.real)


# ---------------------------------------------------------------- dense oracle


def independent_loads(state: SurfaceState, orders=(6, 12, 12)) -> np.ndarray:
    """Wedge loads recomputed on a different quadrature node set."""
    mesh = state.mesh
    if mesh.kind == "torus":
        raise ValueError("independent loads are defined for hyperelliptic meshes")
    tri, bary, w, z, y = quadrature_nodes(mesh, *orders)
    vals = state.basis.transform @ raw_densities(mesh, z, y, mesh.tri_chart[tri])
    rows = np.repeat(np.arange(tri.size), 3)
    interp = sparse.csr_matrix((bary.ravel(), (rows, mesh.triangles[tri].ravel())),
                               shape=(tri.size, mesh.n_vertices))
    g = state.genus
    dens = -2j * (vals * w)[:, None, :] * np.conj(vals)[None, :, :]
    return np.asarray(interp.T @ dens.reshape(g * g, -1).T).T.reshape(g, g, -1)


def dense_A_entry(state: SurfaceState, index, orders=(6, 12, 12)) -> complex:
    """One entry of A from dense log-Green columns and independently integrated loads."""
    dense = dense_green_oracle(state.mesh, state.laplacian)
    b = independent_loads(state, orders)
    i, j, k, l = index
    return complex(b[i, j] @ dense.matrix @ b[k, l])
