import warnings

import numpy as np
import pytest

from kzsurface import (compute_Q, e1_J_matrix, e1_phi_coefficients, kahler_contraction, kz_invariant,
                       q_restricted_checks, u_subspace)
from kzsurface.errors import UnsupportedGenusError
from kzsurface.johnson import JohnsonMap, dbar_defect, quad_diff_basis

# [DERIVED] odd-odd entry of the e1_J form on y^2 = x^8 - 1, refinement level 0
E1J_ODD_LEVEL0 = 2.0567909530451935e-05


@pytest.fixture(scope="module")
def jmap(state_g3):
    return JohnsonMap(state_g3)


@pytest.fixture(scope="module")
def u3():
    return u_subspace(3)


@pytest.mark.parametrize("fixture", ["tensor_g2", "tensor_g3"])
def test_kahler_contraction(request, fixture):
    a = request.getfixturevalue(fixture)
    ag = kz_invariant(a)
    e1 = e1_phi_coefficients(a)
    kc = kahler_contraction(e1, a, ag)
    assert kc["residual"] < 1e-9
    assert kc["target"] == pytest.approx(-6 * a.genus * ag)
    assert e1.conj_symmetry_residual() < 1e-10 * np.abs(e1.tensor).max()


def test_e1_matrix_shape(tensor_g3):
    e1 = e1_phi_coefficients(tensor_g3)
    assert e1.matrix.shape == (6, 6)
    t = e1.tensor
    assert np.allclose(t, t.transpose(1, 0, 2, 3)) and np.allclose(t, t.transpose(0, 1, 3, 2))


def test_q_needs_genus_two(state_g1):
    with pytest.raises(UnsupportedGenusError):
        JohnsonMap(state_g1)


def test_quad_diff_basis_dimension(state_g3):
    qb = quad_diff_basis(state_g3)
    assert len(qb.labels) == 3 * 3 - 3
    assert len(qb.even) == 5 and len(qb.odd) == 1
    # even and odd differentials are orthogonal under the involution-invariant product
    assert np.abs(qb.gram[np.ix_(qb.even, qb.odd)]).max() < 1e-10 * np.abs(qb.gram).max()


def test_q_is_alternating(state_g3, jmap):
    rng = np.random.default_rng(3)
    p = [rng.normal(size=6) + 1j * rng.normal(size=6) for _ in range(3)]
    q123 = jmap.field(*p)
    q213 = jmap.field(p[1], p[0], p[2])
    q231 = jmap.field(p[1], p[2], p[0])
    assert np.allclose(q213, -q123, atol=1e-12 * np.abs(q123).max())
    assert np.allclose(q231, q123, atol=1e-12 * np.abs(q123).max())
    assert np.abs(jmap.field(p[0], p[0], p[2])).max() < 1e-12 * np.abs(q123).max()


def test_q_vanishes_without_a_holomorphic_slot(state_g3):
    e = np.eye(6)
    assert compute_Q(state_g3, e[3], e[4], e[5]).norm == 0.0


def test_restricted_checks(state_g3, u3, jmap):
    rep = q_restricted_checks(state_g3, u3, jmap)
    assert rep["pass"]
    assert rep["U^3,0"]["max_norm"] == 0.0
    assert rep["U^0,3"]["max_norm"] < 1e-12
    assert rep["U^2,1"]["max_even_ratio"] < 1e-6
    assert rep["U^2,1"]["max_nonholomorphic_residual"] < 0.05


def test_restricted_checks_refuse_genus_two(state_g2):
    with pytest.raises(UnsupportedGenusError):
        q_restricted_checks(state_g2)


def test_gradient_recovery_lowers_the_residual(state_g3, u3, jmap):
    raw = q_restricted_checks(state_g3, u3, JohnsonMap(state_g3, recover=False))
    rec = q_restricted_checks(state_g3, u3, jmap)
    assert rec["U^2,1"]["max_nonholomorphic_residual"] < 0.7 * raw["U^2,1"]["max_nonholomorphic_residual"]


def test_e1_J_form(state_g3, u3, jmap):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ej = e1_J_matrix(state_g3, u3, jmap)
    assert any("rank 1" in str(w.message) for w in caught)
    m = ej["matrix"]
    assert ej["hermitian_residual"] < 1e-14
    odd = ej["parity"].index(-1)
    assert m[odd, odd].real == pytest.approx(E1J_ODD_LEVEL0, rel=1e-6)
    mask = np.ones(m.shape, bool)
    mask[odd, odd] = False
    assert np.abs(m[mask]).max() < 1e-10 * abs(m[odd, odd])


def test_e1_J_trivial_below_genus_three(state_g2):
    assert e1_J_matrix(state_g2)["rank"] == 0


def test_dbar_defect_is_small(state_g3, jmap):
    e = np.eye(6)
    d = dbar_defect(state_g3, e[0], e[1], e[3], jmap)
    assert d["n_tested"] > 0
    assert d["relative_to_terms"] < 0.1
