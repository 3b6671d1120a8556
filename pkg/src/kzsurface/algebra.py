"""Exact linear algebra on H = H' + H'' and its third exterior power.

Frame: ``psi_1..psi_g`` (holomorphic) followed by ``conj(psi_1)..conj(psi_g)``,
with intersection numbers ``psi_i . conj(psi_j) = -2i delta_ij`` and
``conj(psi_j) . psi_i = 2i delta_ij``. Everything here uses sympy Gaussian
rationals, so identities hold exactly and serve as oracles for numerics.

Lambda^3 H is indexed by increasing triples of frame indices (lexicographic,
hence ordered by type first). The pairing between triples is the signed
one, ``6 * det[phi_a . phi'_b]``; see ``pairing_M0``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import combinations

import numpy as np
import sympy as sp

I = sp.I


@dataclass(frozen=True)
class CohomologyFrame:
    genus: int

    @property
    def dim(self) -> int:
        return 2 * self.genus

    def label(self, k: int) -> str:
        g = self.genus
        return f"psi{k + 1}" if k < g else f"~psi{k - g + 1}"

    def is_holomorphic(self, k: int) -> bool:
        return k < self.genus

    def conj_index(self, k: int) -> int:
        g = self.genus
        return k + g if k < g else k - g

    @cached_property
    def intersection(self) -> sp.Matrix:
        g = self.genus
        m = sp.zeros(2 * g, 2 * g)
        for i in range(g):
            m[i, g + i] = -2 * I
            m[g + i, i] = 2 * I
        return m

    @cached_property
    def triples(self) -> list[tuple[int, int, int]]:
        return list(combinations(range(self.dim), 3))

    @cached_property
    def triple_index(self) -> dict:
        return {t: n for n, t in enumerate(self.triples)}

    def triple_type(self, t) -> tuple[int, int]:
        p = sum(1 for k in t if self.is_holomorphic(k))
        return p, 3 - p


def _check_dim(frame: CohomologyFrame, *vecs):
    for v in vecs:
        if len(v) != frame.dim:
            raise ValueError(f"expected {frame.dim} coordinates, got {len(v)}")


def intersection_pairing(frame: CohomologyFrame, u, v):
    """u . v for coordinate vectors in the frame (bilinear, antisymmetric)."""
    _check_dim(frame, u, v)
    return sp.expand((sp.Matrix(u).T * frame.intersection * sp.Matrix(v))[0, 0])


def omega_hat(g: int) -> sp.Matrix:
    """sum_i psi_i (x) conj(psi_i) as a (2g x 2g) coefficient matrix."""
    m = sp.zeros(2 * g, 2 * g)
    for i in range(g):
        m[i, g + i] = 1
    return m


def contract_second_slot(frame: CohomologyFrame, tensor: sp.Matrix) -> sp.Matrix:
    """Linear map x -> sum_ab t_ab (x . e_b) e_a, as a matrix on coordinates."""
    # (x . e_b) = x^T J e_b, so the map is t @ J^T
    return tensor * frame.intersection.T


def change_of_basis(g: int, unitary) -> sp.Matrix:
    """Frame matrix of psi'_i = sum_k U_ik psi_k and its conjugates."""
    u = sp.Matrix(unitary)
    m = sp.zeros(2 * g, 2 * g)
    m[:g, :g] = u
    m[g:, g:] = u.conjugate()
    return m


# ---------------------------------------------------------------- Lambda^3


def wedge3(frame: CohomologyFrame, a, b, c) -> sp.Matrix:
    """Coordinates of a ^ b ^ c in the triple basis."""
    _check_dim(frame, a, b, c)
    out = sp.zeros(len(frame.triples), 1)
    for n, (i, j, k) in enumerate(frame.triples):
        det = sp.Matrix([[a[i], a[j], a[k]], [b[i], b[j], b[k]], [c[i], c[j], c[k]]]).det()
        out[n] = sp.expand(det)
    return out


def contraction_matrix(frame: CohomologyFrame) -> sp.Matrix:
    """Matrix of phi1^phi2^phi3 -> (phi2.phi3)phi1 + (phi3.phi1)phi2 + (phi1.phi2)phi3."""
    j = frame.intersection
    out = sp.zeros(frame.dim, len(frame.triples))
    for n, (a, b, c) in enumerate(frame.triples):
        out[a, n] += j[b, c]
        out[b, n] += j[c, a]
        out[c, n] += j[a, b]
    return out


def conj_triple_vector(frame: CohomologyFrame, v) -> sp.Matrix:
    """Complex conjugate of an element of Lambda^3 H (swaps psi and conj(psi))."""
    out = sp.zeros(len(frame.triples), 1)
    for n, t in enumerate(frame.triples):
        if v[n] == 0:
            continue
        img = [frame.conj_index(k) for k in t]
        order = sorted(range(3), key=lambda r: img[r])
        sign = _perm_sign(order)
        out[frame.triple_index[tuple(img[r] for r in order)]] += sign * sp.conjugate(v[n])
    return out


def _perm_sign(p) -> int:
    p = list(p)
    sign = 1
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


@lru_cache(maxsize=8)
def _triple_gram(g: int) -> sp.Matrix:
    frame = CohomologyFrame(g)
    j = frame.intersection
    ts = frame.triples
    m = sp.zeros(len(ts), len(ts))
    for x, s in enumerate(ts):
        for y, t in enumerate(ts):
            block = sp.Matrix(3, 3, lambda a, b: j[s[a], t[b]])
            if any(block.row(r).is_zero_matrix for r in range(3)):
                continue
            m[x, y] = 6 * block.det()
    return m


def triple_gram(frame: CohomologyFrame) -> sp.Matrix:
    return _triple_gram(frame.genus)


def pairing_M0(frame: CohomologyFrame, v, w):
    """<v, w> = sum over sigma, tau in S3 of sgn(sigma tau) prod (v_sigma(k) . w_tau(k)).

    On basis triples this is ``6 det[e_a . e_b]``. The signs make the form
    well defined on Lambda^3 H; on triples whose pairing matrix is diagonal
    up to order it agrees with the unsigned sum.
    """
    n = len(frame.triples)
    if len(v) != n or len(w) != n:
        raise ValueError(f"expected {n} triple coordinates")
    return sp.expand((sp.Matrix(v).T * triple_gram(frame) * sp.Matrix(w))[0, 0])


def pairing_M0_unsigned(frame: CohomologyFrame, a, b) -> sp.Expr:
    """Literal 36-term permanent sum for two decomposable triples (lists of 3 vectors)."""
    from itertools import permutations

    j = frame.intersection
    total = 0
    for s in permutations(range(3)):
        for t in permutations(range(3)):
            term = 1
            for k in range(3):
                term *= (sp.Matrix(a[s[k]]).T * j * sp.Matrix(b[t[k]]))[0, 0]
            total += term
    return sp.expand(total)


# ---------------------------------------------------------------- U subspace


@dataclass(frozen=True)
class USubspace:
    """Kernel of the contraction, split by (p, q) type; columns are basis vectors."""

    frame: CohomologyFrame
    graded: dict

    @property
    def basis(self) -> sp.Matrix:
        cols = [self.graded[k] for k in sorted(self.graded, reverse=True) if self.graded[k].shape[1]]
        if not cols:
            return sp.zeros(len(self.frame.triples), 0)
        return sp.Matrix.hstack(*cols)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def dims(self) -> dict:
        return {k: v.shape[1] for k, v in sorted(self.graded.items(), reverse=True)}

    def numeric(self, pq=None) -> np.ndarray:
        m = self.basis if pq is None else self.graded[pq]
        return np.array(m.evalf(), dtype=complex)


def u_subspace(g: int) -> USubspace:
    frame = CohomologyFrame(g)
    c = contraction_matrix(frame)
    graded = {}
    for p in range(3, -1, -1):
        cols = [n for n, t in enumerate(frame.triples) if frame.triple_type(t)[0] == p]
        block = c[:, cols]
        kernel = block.nullspace(simplify=True)
        basis = sp.zeros(len(frame.triples), len(kernel))
        for k, vec in enumerate(kernel):
            vec = vec / _first_nonzero(vec)
            for r, n in enumerate(cols):
                basis[n, k] = sp.nsimplify(vec[r])
        graded[(p, 3 - p)] = basis
    return USubspace(frame, graded)


def _first_nonzero(vec):
    for x in vec:
        if x != 0:
            return x
    return 1


def random_gaussian_rational(rng: random.Random, size: int, bound: int = 5) -> list:
    return [sp.Rational(rng.randint(-bound, bound), rng.randint(1, bound))
            + I * sp.Rational(rng.randint(-bound, bound), rng.randint(1, bound)) for _ in range(size)]


def positivity_values(u: USubspace, count: int = 100, seed: int = 0) -> list:
    """-i <v, conj v> for random exact v in U^{1,2}."""
    frame = u.frame
    basis = u.graded[(1, 2)]
    rng = random.Random(seed)
    gram = triple_gram(frame)
    out = []
    for _ in range(count):
        coeffs = sp.Matrix(random_gaussian_rational(rng, basis.shape[1]))
        if all(c == 0 for c in coeffs):
            continue
        v = basis * coeffs
        cv = conj_triple_vector(frame, v)
        out.append(sp.nsimplify(sp.expand(-I * (v.T * gram * cv)[0, 0])))
    return out


def restricted_gram(u: USubspace) -> sp.Matrix:
    b = u.basis
    return b.T * triple_gram(u.frame) * b


def selftest(genera=(1, 2, 3)) -> list[dict]:
    """Exact checks used by the CLI ``selftest algebra`` verb."""
    rows = []
    for g in genera:
        frame = CohomologyFrame(g)
        u = u_subspace(g)
        expected = 0 if g <= 2 else len(frame.triples) - 2 * g
        rows.append({"test": f"dim U (g={g})", "value": u.dim, "expected": expected, "pass": u.dim == expected})
        c = contraction_matrix(frame)
        ok = (c * u.basis).is_zero_matrix if u.dim else True
        rows.append({"test": f"contraction on U (g={g})", "value": 0 if ok else 1, "expected": 0, "pass": ok})
        if g >= 3:
            rank = restricted_gram(u).rank()
            rows.append({"test": f"pairing non-degenerate on U (g={g})", "value": rank, "expected": u.dim,
                         "pass": rank == u.dim})
            vals = positivity_values(u, 100, seed=g)
            ok = all(v.is_real and v > 0 for v in vals)
            rows.append({"test": f"positivity on U^(1,2) (g={g})", "value": float(min(vals)), "expected": ">0",
                         "pass": ok})
    return rows
