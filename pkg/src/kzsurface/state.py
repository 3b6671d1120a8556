"""Solved surface: mesh, basis, B, factored Laplacian, and the g^2 wedge solves."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import time

import numpy as np

from .basis import DifferentialBasis, VolumeFormB, bergman_form, orthonormal_basis
from .green import ConformalLaplacian, assemble_operators, wedge_loads, wedge_mass_matrices
from .mesh import BranchedMesh, build_surface, mesh_params
from .surfaces import SurfaceModel, model_hash


@dataclass
class SurfaceState:
    model: SurfaceModel
    mesh: BranchedMesh
    basis: DifferentialBasis
    volume: VolumeFormB
    laplacian: ConformalLaplacian
    timings: dict = field(default_factory=dict)

    @property
    def genus(self) -> int:
        return self.basis.genus

    @cached_property
    def interp(self):
        return self.mesh.interpolation_matrix()

    @cached_property
    def loads(self) -> np.ndarray:
        """(g, g, V) loads of psi_i ^ conj(psi_j)."""
        return wedge_loads(self.mesh, self.basis, self.interp)

    @cached_property
    def wedge_mass(self) -> list:
        """g x g sparse matrices of the bilinear forms int f h psi_i ^ conj(psi_j)."""
        return wedge_mass_matrices(self.mesh, self.basis)

    @cached_property
    def solutions(self) -> np.ndarray:
        """(g, g, V) Green operator applied to each load."""
        g = self.genus
        t = time.perf_counter()
        u = self.laplacian.solve(self.loads.reshape(g * g, -1).T).T.reshape(g, g, -1)
        self.timings["wedge_solves"] = time.perf_counter() - t
        return u

    @property
    def content_hash(self) -> str:
        return self.mesh.content_hash


def prepare_state(model: SurfaceModel, params: dict | None = None, solver: dict | None = None) -> SurfaceState:
    params = mesh_params(params)
    solver = solver or {}
    timings = {}
    t = time.perf_counter()
    mesh = build_surface(model, params)
    timings["mesh"] = time.perf_counter() - t
    t = time.perf_counter()
    basis = orthonormal_basis(mesh, model)
    volume = bergman_form(basis, mesh)
    timings["basis"] = time.perf_counter() - t
    t = time.perf_counter()
    lap = assemble_operators(mesh, volume, method=solver.get("method", "direct"), tol=solver.get("tol", 1e-12))
    timings["factor"] = time.perf_counter() - t
    return SurfaceState(model, mesh, basis, volume, lap, timings)


def state_hash(model: SurfaceModel, params: dict | None = None) -> str:
    return model_hash(model, mesh_params(params))
