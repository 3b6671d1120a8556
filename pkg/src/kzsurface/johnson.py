"""e1 coefficients from A, the Kaehler contraction, and the Johnson map Q.

Quadratic differentials are sampled as densities against ``dz**2`` in the
chart of each node:

    even  x**a dx**2 / y**2   ->  u**(2g-2-a) du**2 / yhat**2   (a = 0..2g-2)
    odd   x**b dx**2 / y      ->  u**(g-3-b)  du**2 / yhat      (b = 0..g-3)

and compared with the Bergman L2 product ``int q1 conj(q2) / rho dA`` where
``rho`` is the density of B. That product is chart independent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import algebra
from .errors import UnsupportedGenusError
from .green import exterior_derivative, recovered_dz
from .mesh import CHART_AFFINE
from .state import SurfaceState
from .tensor import ATensor

KAHLER_FACTOR = 4j  # Lambda(e_a.e_b (x) conj(e_c.e_d)) = 4i <e_a.e_b, e_c.e_d>


# ---------------------------------------------------------------- e1 from A


@dataclass
class E1Coefficients:
    """Coefficients of e1 in the frame (psi_j.psi_l) (x) conj(psi_k.psi_i).

    ``tensor[j, l, k, i]`` is symmetric in (j, l) and in (k, i); ``matrix``
    is the same data on index pairs j <= l, k <= i.
    """

    tensor: np.ndarray
    pairs: list

    @property
    def matrix(self) -> np.ndarray:
        idx = self.pairs
        return np.array([[self.tensor[j, l, k, i] for (k, i) in idx] for (j, l) in idx])

    def conj_symmetry_residual(self) -> float:
        t = self.tensor
        return float(np.abs(t + np.conj(t.transpose(2, 3, 0, 1))).max())


def e1_phi_coefficients(a: ATensor) -> E1Coefficients:
    v = a.values
    g = v.shape[0]
    trace = np.einsum("mjkm->jk", v)
    raw = np.einsum("ijkl->jlki", v)
    raw = raw - np.einsum("jk,li->jlki", trace, np.eye(g))
    raw = -3j * raw
    sym = 0.25 * (raw + raw.transpose(1, 0, 2, 3) + raw.transpose(0, 1, 3, 2) + raw.transpose(1, 0, 3, 2))
    pairs = [(j, l) for j in range(g) for l in range(j, g)]
    return E1Coefficients(sym, pairs)


def kahler_contraction(e1: E1Coefficients, a: ATensor, a_g: float) -> dict:
    v = a.values
    g = v.shape[0]
    from_e1 = complex(KAHLER_FACTOR * np.einsum("jljl->", e1.tensor))
    four_term = complex(
        6.0 * (np.einsum("ljjl->", v) + np.einsum("jjll->", v) - g * np.einsum("ijji->", v) - np.einsum("illi->", v))
    )
    target = -6.0 * g * a_g
    scale = max(abs(a_g), 1e-300)
    return {
        "lambda_E1": from_e1,
        "four_term": four_term,
        "target": target,
        "residual": abs(from_e1 - target) / scale,
        "four_term_residual": abs(four_term - target) / scale,
        "absolute_residual": abs(from_e1 - target),
    }


# ---------------------------------------------------------------- quadratic differentials


@dataclass
class QuadDiffBasis:
    labels: list
    parity: np.ndarray  # +1 even (x^a dx^2/y^2), -1 odd (x^b dx^2/y)
    samples: np.ndarray
    gram: np.ndarray
    weight: np.ndarray  # node_w / rho

    @property
    def even(self) -> np.ndarray:
        return np.flatnonzero(self.parity > 0)

    @property
    def odd(self) -> np.ndarray:
        return np.flatnonzero(self.parity < 0)

    def inner(self, q1, q2) -> complex:
        return complex(np.sum(self.weight * q1 * np.conj(q2)))

    def project(self, q: np.ndarray) -> np.ndarray:
        rhs = (self.samples.conj() * self.weight) @ q
        return np.linalg.solve(self.gram.T, rhs)


def quad_diff_basis(state: SurfaceState) -> QuadDiffBasis:
    mesh = state.mesh
    g = state.genus
    if mesh.kind != "hyperelliptic" or g < 2:
        raise UnsupportedGenusError("quadratic differential basis needs a hyperelliptic surface of genus >= 2")
    z, y = mesh.node_z, mesh.node_y
    aff = mesh.tri_chart[mesh.node_tri] == CHART_AFFINE
    rows, labels, parity = [], [], []
    for a in range(2 * g - 1):
        f = np.where(aff, z**a, z ** (2 * g - 2 - a)) / y**2
        rows.append(f)
        labels.append(f"x^{a} dx^2/y^2")
        parity.append(1)
    for b in range(g - 2):
        f = np.where(aff, z**b, z ** (g - 3 - b)) / y
        rows.append(f)
        labels.append(f"x^{b} dx^2/y")
        parity.append(-1)
    samples = np.array(rows)
    weight = mesh.node_w / state.volume.density
    gram = (samples * weight) @ samples.conj().T
    return QuadDiffBasis(labels, np.array(parity), samples, gram, weight)


# ---------------------------------------------------------------- Q


@dataclass
class QValue:
    samples: np.ndarray
    coefficients: np.ndarray
    norm: float
    residual: float
    even_norm: float
    odd_norm: float
    meta: dict = field(default_factory=dict)


class JohnsonMap:
    """Evaluates Q on H-coordinates (psi_1..psi_g, conj psi_1..conj psi_g)."""

    def __init__(self, state: SurfaceState, qbasis: QuadDiffBasis | None = None, recover: bool = True):
        if state.genus < 2 or state.mesh.kind != "hyperelliptic":
            raise UnsupportedGenusError("Q needs genus >= 2 (no quadratic differentials at genus 1)")
        self.state = state
        self.qbasis = qbasis or quad_diff_basis(state)
        g = state.genus
        mesh = state.mesh
        sol = state.solutions
        # d u(ij) / dz per triangle, then recovered to linear per-triangle fields
        self.du = np.array([[exterior_derivative(mesh, sol[i, j]).c_dz for j in range(g)] for i in range(g)])
        self.du_corners = recovered_dz(mesh, self.du) if recover else np.repeat(self.du[..., None], 3, axis=-1)
        self.psi = state.basis.values

    def _wedge_coeffs(self, p2, p3) -> np.ndarray:
        g = self.state.genus
        a2, c2 = p2[:g], p2[g:]
        a3, c3 = p3[:g], p3[g:]
        return np.outer(a2, c3) - np.outer(a3, c2)

    def field(self, p1, p2, p3) -> np.ndarray:
        """Node samples of Q(p1, p2, p3) as densities against dz^2."""
        g = self.state.genus
        p = [np.asarray(x, dtype=complex) for x in (p1, p2, p3)]
        tri = self.state.mesh.node_tri
        total = np.zeros(tri.size, dtype=complex)
        for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            hol = p[a][:g]
            if not np.any(hol):
                continue
            w = self._wedge_coeffs(p[b], p[c])
            if not np.any(w):
                continue
            corners = np.einsum("ij,ijtk->tk", w, self.du_corners)
            du = np.einsum("nk,nk->n", corners[tri], self.state.mesh.node_bary)
            total += (hol @ self.psi) * du
        return -1j * total

    def evaluate(self, p1, p2, p3) -> QValue:
        return self._finish(self.field(p1, p2, p3))

    def evaluate_triple_vector(self, vec: np.ndarray) -> QValue:
        """Q on an element of Lambda^3 H given in the triple basis."""
        g = self.state.genus
        frame = algebra.CohomologyFrame(g)
        eye = np.eye(2 * g)
        q = np.zeros(self.state.mesh.node_tri.size, dtype=complex)
        for n, (a, b, c) in enumerate(frame.triples):
            if vec[n] != 0:
                q += vec[n] * self.field(eye[a], eye[b], eye[c])
        return self._finish(q)

    def _finish(self, q: np.ndarray) -> QValue:
        qb = self.qbasis
        norm = float(np.sqrt(max(qb.inner(q, q).real, 0.0)))
        if norm == 0.0:
            zeros = np.zeros(len(qb.labels), dtype=complex)
            return QValue(q, zeros, 0.0, 0.0, 0.0, 0.0)
        coeffs = qb.project(q)
        fit = coeffs @ qb.samples
        resid = float(np.sqrt(max(qb.inner(q - fit, q - fit).real, 0.0))) / norm

        def part(idx):
            if not len(idx):
                return 0.0
            f = coeffs[idx] @ qb.samples[idx]
            return float(np.sqrt(max(qb.inner(f, f).real, 0.0)))

        return QValue(q, coeffs, norm, resid, part(qb.even), part(qb.odd))


def compute_Q(state: SurfaceState, p1, p2, p3, jmap: JohnsonMap | None = None) -> QValue:
    return (jmap or JohnsonMap(state)).evaluate(p1, p2, p3)


def q_restricted_checks(state: SurfaceState, u: algebra.USubspace | None = None,
                        jmap: JohnsonMap | None = None, tol: float = 1e-10) -> dict:
    if state.genus < 3:
        raise UnsupportedGenusError("U vanishes for genus <= 2")
    u = u or algebra.u_subspace(state.genus)
    jmap = jmap or JohnsonMap(state)
    report = {}
    scale = 0.0
    values = {}
    for pq, basis in u.graded.items():
        num = np.array(basis.evalf(), dtype=complex)
        values[pq] = [jmap.evaluate_triple_vector(num[:, k]) for k in range(num.shape[1])]
        if pq == (2, 1):
            scale = max([v.norm for v in values[pq]] + [0.0])
    for pq, vals in values.items():
        key = f"U^{pq[0]},{pq[1]}"
        norms = [v.norm for v in vals]
        entry = {"max_norm": max(norms) if norms else 0.0, "dim": len(vals)}
        if pq == (3, 0):
            entry["pass"] = all(n == 0.0 for n in norms)
        elif pq == (2, 1):
            ratios = [v.even_norm / v.norm for v in vals if v.norm > 0]
            entry["max_even_ratio"] = max(ratios) if ratios else 0.0
            # absolute L2 distance from the holomorphic span, on the scale of Q(U^{2,1})
            entry["max_nonholomorphic_residual"] = max(v.residual * v.norm for v in vals) / max(scale, 1e-300)
            entry["pass"] = entry["max_even_ratio"] < 1e-6
        else:
            entry["pass"] = entry["max_norm"] <= tol * max(scale, 1.0)
        report[key] = entry
    report["pass"] = all(v["pass"] for v in report.values() if isinstance(v, dict))
    return report


def _numeric_gram(frame: algebra.CohomologyFrame) -> np.ndarray:
    return np.array(algebra.triple_gram(frame).evalf(), dtype=complex)


def _numeric_conj(frame: algebra.CohomologyFrame) -> np.ndarray:
    """Matrix C with conj(v) = C @ conj(coeffs)."""
    n = len(frame.triples)
    out = np.zeros((n, n))
    for k in range(n):
        e = [0] * n
        e[k] = 1
        col = algebra.conj_triple_vector(frame, e)
        out[:, k] = np.array(col, dtype=float).ravel()
    return out


def e1_J_matrix(state: SurfaceState, u: algebra.USubspace | None = None,
                jmap: JohnsonMap | None = None) -> dict:
    """Hermitian form M_ab = -i <v_a, conj v_b> with v_a in U^{1,2} dual to Q.

    ``v_a`` solves <w, v_a> = R_aw for all w in U^{2,1}, where R_aw is the
    coefficient of the a-th quadratic differential in Q(w). Overall constant
    fixed to 1.
    """
    g = state.genus
    if g <= 2:
        return {"matrix": np.zeros((0, 0), dtype=complex), "labels": [], "convention": "constant=1", "rank": 0}
    u = u or algebra.u_subspace(g)
    jmap = jmap or JohnsonMap(state)
    frame = u.frame
    w_basis = np.array(u.graded[(2, 1)].evalf(), dtype=complex)
    v_basis = np.array(u.graded[(1, 2)].evalf(), dtype=complex)
    gram = _numeric_gram(frame)
    conj_map = _numeric_conj(frame)
    qs = [jmap.evaluate_triple_vector(w_basis[:, k]) for k in range(w_basis.shape[1])]
    r = np.array([q.coefficients for q in qs]).T  # (n_quad, dim U21)
    pair = w_basis.T @ gram @ v_basis  # <w_s, v_t>
    x = np.linalg.solve(pair, r.T).T  # v_a = v_basis @ x[a]
    v = v_basis @ x.T
    cv = conj_map @ np.conj(v)
    m = -1j * (v.T @ gram @ cv)
    rank = int(np.linalg.matrix_rank(r, tol=1e-8 * max(np.abs(r).max(), 1e-300)))
    if rank < min(r.shape):
        # on a hyperelliptic curve the image lies in the odd part, so rank <= g - 2 is expected
        warnings.warn(f"Q has rank {rank} on U^(2,1) (of {min(r.shape)}; odd quadratic differentials: {g - 2})",
                      stacklevel=2)
    return {
        "matrix": m,
        "labels": jmap.qbasis.labels,
        "parity": jmap.qbasis.parity.tolist(),
        "hermitian_residual": float(np.abs(m - m.conj().T).max()),
        "rank": rank,
        "convention": "constant=1",
        "R": r,
    }


# ---------------------------------------------------------------- dbar check


def dbar_defect(state: SurfaceState, p1, p2, p3, jmap: JohnsonMap | None = None) -> dict:
    """Weak d/dzbar of the per-triangle Q field against hat functions.

    Only vertices whose whole star sits in one chart are tested. The
    expected value is (i/4) int phi_v h rho dA with
    h = p1'(p2.p3) + p2'(p3.p1) + p3'(p1.p2).
    """
    jmap = jmap or JohnsonMap(state)
    mesh = state.mesh
    g = state.genus
    q_nodes = jmap.field(p1, p2, p3)
    nt = mesh.n_triangles
    w = mesh.node_w
    area = np.bincount(mesh.node_tri, weights=w, minlength=nt)
    q_tri = (np.bincount(mesh.node_tri, weights=(w * q_nodes).real, minlength=nt)
             + 1j * np.bincount(mesh.node_tri, weights=(w * q_nodes).imag, minlength=nt)) / area
    # d(phi_v)/dzbar on each triangle for its three corners
    z = mesh.corner_z
    d = np.zeros((nt, 3), dtype=complex)
    for c in range(3):
        uu = np.zeros((nt, 3))
        uu[:, c] = 1.0
        d1, d2 = z[:, 1] - z[:, 0], z[:, 2] - z[:, 0]
        f1, f2 = uu[:, 1] - uu[:, 0], uu[:, 2] - uu[:, 0]
        det = d1 * np.conj(d2) - d2 * np.conj(d1)
        d[:, c] = (d1 * f2 - d2 * f1) / det
    terms = -(area * q_tri)[:, None] * d
    nv = mesh.n_vertices
    lhs = np.bincount(mesh.triangles.ravel(), weights=terms.real.ravel(), minlength=nv) + 1j * np.bincount(
        mesh.triangles.ravel(), weights=terms.imag.ravel(), minlength=nv)
    size = np.bincount(mesh.triangles.ravel(), weights=np.abs(terms).ravel(), minlength=nv)
    # expected value
    frame = algebra.CohomologyFrame(g)
    jm = np.array(frame.intersection.evalf(), dtype=complex)
    p = [np.asarray(x, dtype=complex) for x in (p1, p2, p3)]
    hol = sum(p[a][:g] * (p[b] @ jm @ p[c]) for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)))
    h = hol @ state.basis.values
    rhs = 0.25j * (state.interp.T @ (w * h * state.volume.density))
    charts = mesh.tri_chart
    lo = np.full(nv, 2)
    hi = np.full(nv, -1)
    for c in range(3):
        np.minimum.at(lo, mesh.triangles[:, c], charts)
        np.maximum.at(hi, mesh.triangles[:, c], charts)
    ok = (lo == hi) & ~mesh.vertex_cone
    defect = np.linalg.norm((lhs - rhs)[ok])
    return {
        "defect": float(defect),
        "relative_to_terms": float(defect / max(np.linalg.norm(size[ok]), 1e-300)),
        "relative_to_expected": float(defect / np.linalg.norm(rhs[ok])) if np.linalg.norm(rhs[ok]) > 0 else None,
        "n_tested": int(ok.sum()),
    }
