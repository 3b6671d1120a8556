"""Holomorphic 1-forms, their orthonormalization, and the volume form B.

Forms are stored as densities against ``dz`` in the chart of the owning
triangle. For the hyperelliptic model the raw forms are

    omega_k = x**(k-1) dx / y        (affine chart)
            = -u**(g-k) du / yhat    (chart u = 1/x, yhat = u**(g+1) y)

and on a torus the single raw form is ``dz``. With ``dz ^ conj(dz) = -2i dA``
the Hermitian Gram matrix is ``N_kl = (i/2) int omega_k ^ conj(omega_l) =
int f_k conj(f_l) dA``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import MeshResolutionError, QuadratureError
from .mesh import CHART_AFFINE, BranchedMesh, quadrature_nodes


def raw_densities(mesh: BranchedMesh, z: np.ndarray, y: np.ndarray | None, chart: np.ndarray) -> np.ndarray:
    """(g, n) densities of the raw forms at chart points ``z``."""
    if mesh.kind == "torus":
        return np.ones((1, z.size), dtype=complex)
    g = mesh.genus
    out = np.empty((g, z.size), dtype=complex)
    aff = chart == CHART_AFFINE
    inv_y = 1.0 / y
    for k in range(1, g + 1):
        out[k - 1, aff] = z[aff] ** (k - 1) * inv_y[aff]
        out[k - 1, ~aff] = -z[~aff] ** (g - k) * inv_y[~aff]
    return out


def descriptors(mesh: BranchedMesh) -> list[str]:
    if mesh.kind == "torus":
        return ["dz"]
    return [f"x^{k - 1} dx/y" for k in range(1, mesh.genus + 1)]


@dataclass(frozen=True)
class DifferentialBasis:
    """Orthonormal holomorphic 1-forms ``psi = T @ omega_raw``.

    ``values[i, n]`` is the density of ``psi_i`` at quadrature node ``n`` of
    the mesh the basis was built on.
    """

    genus: int
    raw: tuple[str, ...]
    gram: np.ndarray
    transform: np.ndarray
    values: np.ndarray
    orthonormality_residual: float

    def evaluate(self, mesh: BranchedMesh, z, y, chart) -> np.ndarray:
        return self.transform @ raw_densities(mesh, z, y, chart)

    def wedge_density(self, i: int, j: int) -> np.ndarray:
        """Density of psi_i ^ conj(psi_j) against dA (0-based indices)."""
        return -2j * self.values[i] * np.conj(self.values[j])


def gram_matrix(f: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (f * w) @ f.conj().T


def orthonormal_basis(mesh: BranchedMesh, curve=None, check_orders=(6, 10, 12)) -> DifferentialBasis:
    """Gram matrix by quadrature, then ``T = L^-1`` from ``N = L L^H``.

    ``check_orders`` is the (far, near, singular) rule used to re-verify the
    result on an independent node set; ``None`` skips the check.
    """
    chart = mesh.tri_chart[mesh.node_tri]
    f = raw_densities(mesh, mesh.node_z, mesh.node_y, chart)
    n = gram_matrix(f, mesh.node_w)
    n = 0.5 * (n + n.conj().T)
    try:
        lower = np.linalg.cholesky(n)
    except np.linalg.LinAlgError as exc:
        raise MeshResolutionError("Gram matrix not positive definite", stage="orthonormal_basis") from exc
    t = np.linalg.solve(lower, np.eye(len(n)))
    t = np.tril(t)
    values = t @ f
    resid = 0.0
    if check_orders is not None and mesh.kind == "hyperelliptic":
        resid = orthonormality_residual(mesh, t, check_orders)
    elif mesh.kind == "torus":
        resid = abs(float((t @ n @ t.conj().T)[0, 0].real) - 1.0)
    return DifferentialBasis(mesh.genus, tuple(descriptors(mesh)), n, t, values, resid)


def orthonormality_residual(mesh: BranchedMesh, transform: np.ndarray, orders) -> float:
    """max |(i/2) int psi_i ^ conj(psi_j) - delta_ij| under another quadrature rule."""
    tri, _, w, z, y = quadrature_nodes(mesh, *orders)
    f = transform @ raw_densities(mesh, z, y, mesh.tri_chart[tri])
    g = gram_matrix(f, w)
    return float(np.max(np.abs(g - np.eye(len(g)))))


@dataclass(frozen=True)
class VolumeFormB:
    """B = (i/2g) sum psi_i ^ conj(psi_i): lumped vertex masses and node density."""

    mass: np.ndarray
    density: np.ndarray
    total: float

    def consistent_mass_matrix(self, mesh: BranchedMesh) -> sparse.csr_matrix:
        """M_vw = int B phi_v phi_w (convergence studies only)."""
        interp = mesh.interpolation_matrix()
        return (interp.T @ sparse.diags(mesh.node_w * self.density) @ interp).tocsr()


def bergman_form(basis: DifferentialBasis, mesh: BranchedMesh) -> VolumeFormB:
    density = np.sum(np.abs(basis.values) ** 2, axis=0) / basis.genus
    if not np.all(density > 0):
        raise QuadratureError("nonpositive B density at a quadrature node", stage="bergman_form")
    mass = mesh.interpolation_matrix().T @ (mesh.node_w * density)
    if not np.all(mass > 0):
        raise QuadratureError("nonpositive lumped B mass", stage="bergman_form")
    return VolumeFormB(mass=mass, density=density, total=float(mass.sum()))
