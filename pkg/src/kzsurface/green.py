"""Discrete d*d, the Green operator, Hodge star and harmonic projection.

Sign convention. The cotangent stiffness satisfies ``u^T S w = int du ^ *dw``
and is positive semidefinite. Testing ``d*d u = Omega - (int Omega) B`` with
hat functions gives

    -S u = b - (1^T b) m,        m^T u = 0,

with ``b`` the load vector of Omega and ``m`` the lumped B mass. ``S`` is
factored once with one vertex pinned; the pinned system returns the exact
solution of ``S v = r`` whenever ``1^T r = 0``, and the B-mean is removed
afterwards. Real and imaginary parts go through the same real factor, so
the operator commutes with complex conjugation exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .basis import DifferentialBasis, VolumeFormB
from .errors import MeshMismatchError, OracleSizeError, SolverError
from .mesh import CHART_AFFINE, BranchedMesh, corner_angles

ORACLE_MAX_VERTICES = 500


def cotangent_stiffness(triangles: np.ndarray, lengths: np.ndarray, n_vertices: int):
    """Stiffness matrix and the number of edges with negative cotangent weight."""
    a2 = lengths**2
    s = 0.5 * lengths.sum(axis=1)
    area = np.sqrt(np.maximum(s * (s - lengths[:, 0]) * (s - lengths[:, 1]) * (s - lengths[:, 2]), 0.0))
    # cot of the angle at corner k, opposite edge k
    cot = np.stack(
        [
            (a2[:, 1] + a2[:, 2] - a2[:, 0]),
            (a2[:, 2] + a2[:, 0] - a2[:, 1]),
            (a2[:, 0] + a2[:, 1] - a2[:, 2]),
        ],
        axis=1,
    ) / (4.0 * area[:, None])
    i = triangles[:, [1, 2, 0]].ravel()
    j = triangles[:, [2, 0, 1]].ravel()
    w = 0.5 * cot.ravel()
    off = sparse.coo_matrix((-w, (i, j)), shape=(n_vertices, n_vertices))
    off = (off + off.T).tocsr()
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    stiff = (off + sparse.diags(diag)).tocsc()
    n_negative = int(np.sum(off.data > 1e-12 * np.abs(off.data).max()))
    return stiff, n_negative // 2


@dataclass
class TwoForm:
    """Load vector ``b_v = int Omega phi_v``."""

    load: np.ndarray
    label: str = ""

    @property
    def total(self) -> complex:
        return complex(self.load.sum())

    def __add__(self, other: "TwoForm") -> "TwoForm":
        return TwoForm(self.load + other.load)

    def scale(self, c) -> "TwoForm":
        return TwoForm(c * self.load, self.label)


@dataclass
class ScalarField:
    values: np.ndarray
    mean_zero: bool = True
    flags: dict = field(default_factory=dict)


@dataclass
class ConformalLaplacian:
    stiffness: sparse.csc_matrix
    mass: np.ndarray
    pin: int
    method: str = "direct"
    tol: float = 1e-12
    n_negative_weights: int = 0
    cone: np.ndarray | None = None
    _factor: object = None
    n_solves: int = 0

    @property
    def n(self) -> int:
        return self.stiffness.shape[0]

    def _pinned(self) -> sparse.csc_matrix:
        alpha = float(self.stiffness.diagonal().mean())
        e = sparse.coo_matrix(([alpha], ([self.pin], [self.pin])), shape=self.stiffness.shape)
        return (self.stiffness + e).tocsc()

    def factor(self):
        if self._factor is None and self.method == "direct":
            try:
                self._factor = splinalg.splu(self._pinned(), permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}", stage="factor") from exc
        return self._factor

    def _solve_real(self, rhs: np.ndarray) -> np.ndarray:
        if self.method == "direct":
            return self.factor().solve(rhs)
        k = self._pinned()
        out = np.empty_like(rhs)
        for c in range(rhs.shape[1]):
            x, info = splinalg.cg(k, rhs[:, c], rtol=self.tol, maxiter=20 * self.n)
            if info != 0:
                raise SolverError(f"CG did not converge (info={info})", stage="solve")
            out[:, c] = x
        return out

    def solve(self, loads: np.ndarray) -> np.ndarray:
        """Green operator on load columns ``(n,)`` or ``(n, k)``; complex in, complex out."""
        b = np.asarray(loads)
        squeeze = b.ndim == 1
        if squeeze:
            b = b[:, None]
        if b.shape[0] != self.n:
            raise MeshMismatchError(f"load has {b.shape[0]} entries, mesh has {self.n} vertices")
        r = b - np.outer(self.mass, b.sum(axis=0))
        cplx = np.iscomplexobj(r)
        rr = np.hstack([r.real, r.imag]) if cplx else r
        v = self._solve_real(np.ascontiguousarray(rr))
        if cplx:
            k = r.shape[1]
            v = v[:, :k] + 1j * v[:, k:]
        u = -(v - np.outer(np.ones(self.n), self.mass @ v) / self.mass.sum())
        self.n_solves += r.shape[1]
        scale = np.maximum(np.abs(b).max(axis=0), 1e-300)
        resid = np.abs(self.stiffness @ u + r).max(axis=0) / scale
        if np.any(resid > 1e-8):
            raise SolverError(f"solve residual {resid.max():.2e} too large", stage="solve", residual=float(resid.max()))
        return u[:, 0] if squeeze else u


def assemble_operators(mesh: BranchedMesh, volume: VolumeFormB, method: str = "direct",
                       tol: float = 1e-12, negative_weight_warning: float = 0.15) -> ConformalLaplacian:
    stiff, n_neg = cotangent_stiffness(mesh.triangles, mesh.edge_lengths, mesh.n_vertices)
    n_edges = stiff.nnz // 2
    if n_neg > negative_weight_warning * n_edges:
        warnings.warn(f"{n_neg} of {n_edges} edges have negative cotangent weight", stacklevel=2)
    candidates = np.flatnonzero(~mesh.vertex_cone)
    pin = int(candidates[np.argmax(volume.mass[candidates])])
    lap = ConformalLaplacian(stiff, volume.mass, pin, method=method, tol=tol,
                             n_negative_weights=n_neg, cone=mesh.vertex_cone)
    lap.factor()
    return lap


def two_form_from_density(mesh: BranchedMesh, density: np.ndarray, interp=None) -> TwoForm:
    """Load vector of a 2-form given by its density against dA at the nodes."""
    interp = mesh.interpolation_matrix() if interp is None else interp
    return TwoForm(interp.T @ (mesh.node_w * density))


def wedge_loads(mesh: BranchedMesh, basis: DifferentialBasis, interp=None) -> np.ndarray:
    """All loads of psi_i ^ conj(psi_j) as an array (g, g, n_vertices)."""
    interp = mesh.interpolation_matrix() if interp is None else interp
    g = basis.genus
    wf = basis.values * mesh.node_w
    dens = -2j * wf[:, None, :] * np.conj(basis.values)[None, :, :]
    out = interp.T @ dens.reshape(g * g, -1).T
    return np.asarray(out).T.reshape(g, g, -1)


def wedge_mass_matrices(mesh: BranchedMesh, basis: DifferentialBasis) -> list:
    """Sparse M[s][t] with M[s][t][p, q] = int phi_p phi_q psi_s ^ conj(psi_t).

    Applying M[s][t] to nodal values of a field gives the load of the field
    times the 2-form, with the same quadrature as ``wedge_loads``.
    """
    g = basis.genus
    nt = mesh.n_triangles
    tri = mesh.node_tri
    bb = mesh.node_bary[:, :, None] * mesh.node_bary[:, None, :]
    summer = sparse.csr_matrix((np.ones(tri.size), (tri, np.arange(tri.size))), shape=(nt, tri.size))
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    wf = basis.values * mesh.node_w
    out = []
    for s in range(g):
        row = []
        for t in range(g):
            dens = -2j * wf[s] * np.conj(basis.values[t])
            local = summer @ (dens[:, None] * bb.reshape(-1, 9))
            m = sparse.csr_matrix((np.asarray(local).ravel(), (rows, cols)),
                                  shape=(mesh.n_vertices, mesh.n_vertices))
            row.append(m)
        out.append(row)
    return out


def wedge_two_form(mesh: BranchedMesh, basis: DifferentialBasis, i: int, j: int, interp=None) -> TwoForm:
    """psi_i ^ conj(psi_j) with 1-based indices."""
    g = basis.genus
    if not (1 <= i <= g and 1 <= j <= g):
        raise ValueError(f"indices must lie in 1..{g}")
    form = two_form_from_density(mesh, basis.wedge_density(i - 1, j - 1), interp)
    form.label = f"psi{i}^psibar{j}"
    return form


def volume_two_form(volume: VolumeFormB) -> TwoForm:
    return TwoForm(volume.mass.astype(complex), "B")


def green_apply(lap: ConformalLaplacian, omega: TwoForm) -> ScalarField:
    return ScalarField(lap.solve(omega.load))


def green_pairing(lap: ConformalLaplacian, omega: TwoForm, omega2: TwoForm) -> complex:
    """int Phi(Omega2) Omega, discretized as b(Omega)^T u(Omega2)."""
    if omega.load.shape != omega2.load.shape:
        raise MeshMismatchError("two-forms live on different meshes", stage="pairing")
    return complex(omega.load @ lap.solve(omega2.load))


def log_green_column(lap: ConformalLaplacian, vertex: int) -> ScalarField:
    """Green operator applied to the hat-function delta at ``vertex`` (minus B)."""
    b = np.zeros(lap.n)
    b[vertex] = 1.0
    flags = {}
    if lap.cone is not None and lap.cone[vertex]:
        flags["cone_vertex"] = True
    return ScalarField(lap.solve(b), flags=flags)


# ---------------------------------------------------------------- 1-forms


@dataclass
class OneForm:
    """Per-triangle constant coefficients of ``c_dz dz + c_dzbar dzbar`` in each chart."""

    c_dz: np.ndarray
    c_dzbar: np.ndarray

    def __add__(self, other: "OneForm") -> "OneForm":
        return OneForm(self.c_dz + other.c_dz, self.c_dzbar + other.c_dzbar)

    def __sub__(self, other: "OneForm") -> "OneForm":
        return OneForm(self.c_dz - other.c_dz, self.c_dzbar - other.c_dzbar)

    def norm(self, mesh: BranchedMesh) -> float:
        """L2 norm (int phi ^ *conj(phi))^(1/2)."""
        area = triangle_areas(mesh)
        return float(np.sqrt(2.0 * np.sum(area * (np.abs(self.c_dz) ** 2 + np.abs(self.c_dzbar) ** 2))))


def triangle_areas(mesh: BranchedMesh) -> np.ndarray:
    """Chart areas of the (sphere-projected) triangles from the node weights."""
    return np.bincount(mesh.node_tri, weights=mesh.node_w, minlength=mesh.n_triangles)


def exterior_derivative(mesh: BranchedMesh, u: np.ndarray) -> OneForm:
    """du of a piecewise-linear field, split into dz and dzbar parts per triangle."""
    z = mesh.corner_z
    uu = np.asarray(u)[mesh.triangles]
    d1, d2 = z[:, 1] - z[:, 0], z[:, 2] - z[:, 0]
    f1, f2 = uu[:, 1] - uu[:, 0], uu[:, 2] - uu[:, 0]
    det = d1 * np.conj(d2) - d2 * np.conj(d1)
    p = (f1 * np.conj(d2) - f2 * np.conj(d1)) / det
    q = (d1 * f2 - d2 * f1) / det
    return OneForm(p, q)


def recovered_dz(mesh: BranchedMesh, c_dz: np.ndarray) -> np.ndarray:
    """Area-weighted vertex averages of per-triangle dz coefficients, returned per corner.

    Shape ``(..., T, 3)``: the value at corner k of triangle t is expressed in
    the chart of t. Triangles touching a cone vertex keep their own constant
    value, since the gradient is unbounded there.
    """
    c_dz = np.asarray(c_dz)
    lead = c_dz.shape[:-1]
    flat = c_dz.reshape(-1, mesh.n_triangles)
    area = np.abs(triangle_areas(mesh))
    aff = mesh.tri_chart == CHART_AFFINE
    zc = mesh.corner_z
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        xc = np.where(aff[:, None], zc, 1.0 / zc)  # affine coordinate of each corner
        uc = 1.0 / xc
        # factor taking d/dz in the triangle chart to d/dx and to d/du at each corner
        to_x = np.where(aff[:, None], 1.0, -uc**2)
        to_u = np.where(aff[:, None], -xc**2, 1.0)
    to_x = np.nan_to_num(to_x, nan=0.0, posinf=0.0, neginf=0.0)
    to_u = np.nan_to_num(to_u, nan=0.0, posinf=0.0, neginf=0.0)
    v = mesh.triangles.ravel()
    n = mesh.n_vertices
    wsum = np.bincount(v, weights=np.repeat(area, 3), minlength=n)
    out = np.empty(flat.shape + (3,), dtype=complex)
    for r in range(flat.shape[0]):
        contrib = (flat[r] * area)[:, None]
        sx = _bincount_c(v, (contrib * to_x).ravel(), n) / wsum
        su = _bincount_c(v, (contrib * to_u).ravel(), n) / wsum
        out[r] = np.where(aff[:, None], sx[mesh.triangles], su[mesh.triangles])
    cone = np.zeros(n, dtype=bool)
    cone[mesh.cone_vertices] = True
    keep = cone[mesh.triangles].any(axis=1)
    out[:, keep, :] = flat[:, keep, None]
    return out.reshape(lead + (mesh.n_triangles, 3))


def _bincount_c(idx, vals, n):
    return np.bincount(idx, weights=vals.real, minlength=n) + 1j * np.bincount(idx, weights=vals.imag, minlength=n)


def hodge_star(phi: OneForm) -> OneForm:
    return OneForm(-1j * phi.c_dz, 1j * phi.c_dzbar)


def holomorphic_one_form(mesh: BranchedMesh, basis: DifferentialBasis, coeffs) -> OneForm:
    """sum_i coeffs[i] psi_i, averaged over each triangle."""
    area = triangle_areas(mesh)
    dens = np.asarray(coeffs) @ basis.values
    avg = np.bincount(mesh.node_tri, weights=(mesh.node_w * dens).real, minlength=mesh.n_triangles) + 1j * np.bincount(
        mesh.node_tri, weights=(mesh.node_w * dens).imag, minlength=mesh.n_triangles
    )
    return OneForm(avg / area, np.zeros(mesh.n_triangles, dtype=complex))


def _tri_integrals(mesh: BranchedMesh, values: np.ndarray) -> np.ndarray:
    """(k, T) integrals over each triangle of node samples (k, n_nodes)."""
    wv = values * mesh.node_w
    out = np.empty((values.shape[0], mesh.n_triangles), dtype=complex)
    for k in range(values.shape[0]):
        out[k] = np.bincount(mesh.node_tri, weights=wv[k].real, minlength=mesh.n_triangles) + 1j * np.bincount(
            mesh.node_tri, weights=wv[k].imag, minlength=mesh.n_triangles
        )
    return out


def harmonic_coefficients(mesh: BranchedMesh, phi: OneForm, basis: DifferentialBasis):
    """(alpha, beta) with H(phi) = sum alpha_j psi_j + beta_j conj(psi_j)."""
    ints = _tri_integrals(mesh, basis.values)  # int_T psi_j density dA
    # phi ^ conj(psi_j) = -2i a conj(F_j) dA ;  phi ^ psi_j = 2i b F_j dA
    with_conj = -2j * (np.conj(ints) @ phi.c_dz)
    with_hol = 2j * (ints @ phi.c_dzbar)
    alpha = 0.5j * with_conj
    beta = -0.5j * with_hol
    return alpha, beta


def harmonic_projection(mesh: BranchedMesh, phi: OneForm, basis: DifferentialBasis) -> OneForm:
    alpha, beta = harmonic_coefficients(mesh, phi, basis)
    area = triangle_areas(mesh)
    ints = _tri_integrals(mesh, basis.values) / area
    return OneForm(alpha @ ints, beta @ np.conj(ints))


# ---------------------------------------------------------------- dense oracle


@dataclass
class DenseGreen:
    """Green operator as a dense matrix from a full eigendecomposition of S."""

    matrix: np.ndarray
    eigenvalues: np.ndarray

    def apply(self, load: np.ndarray) -> np.ndarray:
        return self.matrix @ load

    def pairing_matrix(self, loads: np.ndarray) -> np.ndarray:
        return loads @ self.matrix @ loads.T


def dense_green_oracle(mesh: BranchedMesh, lap: ConformalLaplacian) -> DenseGreen:
    n = mesh.n_vertices
    if n > ORACLE_MAX_VERTICES:
        raise OracleSizeError(f"dense oracle limited to {ORACLE_MAX_VERTICES} vertices, mesh has {n}")
    s = lap.stiffness.toarray()
    lam, q = np.linalg.eigh(s)
    keep = lam > 1e-10 * lam.max()
    if np.count_nonzero(~keep) != 1:
        raise SolverError(f"stiffness kernel has dimension {np.count_nonzero(~keep)}", stage="oracle")
    pinv = (q[:, keep] / lam[keep]) @ q[:, keep].T
    m = lap.mass / lap.mass.sum()
    left = np.eye(n) - np.outer(np.ones(n), m)
    right = np.eye(n) - np.outer(lap.mass, np.ones(n))
    g = -left @ pinv @ right
    return DenseGreen(g, lam)


def stiffness_row_sums(lap: ConformalLaplacian) -> float:
    s = lap.stiffness
    return float(np.abs(np.asarray(s.sum(axis=1)).ravel()).max() / abs(s).max())


__all__ = [
    "ConformalLaplacian", "TwoForm", "ScalarField", "OneForm", "DenseGreen",
    "assemble_operators", "wedge_loads", "wedge_two_form", "two_form_from_density",
    "volume_two_form", "green_apply", "green_pairing", "log_green_column",
    "exterior_derivative", "hodge_star", "holomorphic_one_form", "harmonic_coefficients",
    "harmonic_projection", "dense_green_oracle", "corner_angles",
]
