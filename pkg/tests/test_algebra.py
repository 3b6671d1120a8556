import time

import numpy as np
import pytest
import sympy as sp

import oracles
from kzsurface import CohomologyFrame, intersection_pairing, omega_hat, pairing_M0, u_subspace
from kzsurface.algebra import (change_of_basis, contraction_matrix, positivity_values, restricted_gram,
                               selftest, wedge3)


@pytest.mark.parametrize("g", [1, 2, 3, 4])
def test_u_dimension(g):
    assert u_subspace(g).dim == oracles.u_dimension(g)


@pytest.mark.parametrize("g", [2, 3, 4])
def test_contraction_rank_matches_numeric_oracle(g):
    frame = CohomologyFrame(g)
    assert contraction_matrix(frame).rank() == oracles.contraction_rank_numeric(g) == 2 * g


def test_u_is_killed_by_contraction():
    u = u_subspace(3)
    assert (contraction_matrix(u.frame) * u.basis).is_zero_matrix


def test_u_grading_g3():
    dims = u_subspace(3).dims()
    assert dims == {(3, 0): 1, (2, 1): 6, (1, 2): 6, (0, 3): 1}


def test_basis_entries_are_exact():
    b = u_subspace(3).basis
    assert all(isinstance(x, (sp.Integer, sp.Rational)) or x.is_Add or x.is_Mul or x == 0 for x in b)
    assert all(x.is_number for x in b)


def test_intersection_pairing_is_antisymmetric():
    frame = CohomologyFrame(2)
    e = sp.eye(4)
    for a in range(4):
        for b in range(4):
            assert intersection_pairing(frame, e[:, a], e[:, b]) == -intersection_pairing(frame, e[:, b], e[:, a])


def test_omega_hat_is_exact():
    w = omega_hat(2)
    assert all(x.is_number for x in w)


def test_pairing_non_degenerate_on_u():
    u = u_subspace(3)
    assert restricted_gram(u).rank() == u.dim


def test_pairing_m0_symmetric_on_triples():
    u = u_subspace(3)
    v, w = u.basis[:, 0], u.basis[:, 3]
    assert sp.simplify(pairing_M0(u.frame, v, w) - pairing_M0(u.frame, w, v)) == 0


def test_positivity_on_u12():
    vals = positivity_values(u_subspace(3), count=100, seed=7)
    assert len(vals) >= 99
    assert all(v.is_real and v > 0 for v in vals)


def test_wedge3_is_alternating():
    frame = CohomologyFrame(3)
    e = sp.eye(6)
    a, b, c = e[:, 0], e[:, 3] + e[:, 1], e[:, 4]
    assert wedge3(frame, a, b, c) == -wedge3(frame, b, a, c)
    assert wedge3(frame, a, a, c).is_zero_matrix


def test_change_of_basis_is_unitary_on_h():
    m = change_of_basis(2, sp.Matrix([[0, 1], [1, 0]]))
    assert (m * m).equals(sp.eye(m.shape[0]))


def test_selftest_passes_quickly():
    t = time.perf_counter()
    rows = selftest()
    assert all(r["pass"] for r in rows), [r for r in rows if not r["pass"]]
    assert time.perf_counter() - t < 5.0


def test_signed_and_unsigned_pairings_agree_on_orthogonal_triples():
    from kzsurface.algebra import pairing_M0_unsigned

    frame = CohomologyFrame(3)
    e = sp.eye(6)
    a = [e[:, 0], e[:, 1], e[:, 5]]
    b = [e[:, 3], e[:, 4], e[:, 2]]
    va = wedge3(frame, *a)
    vb = wedge3(frame, *b)
    assert pairing_M0(frame, va, vb) == pairing_M0_unsigned(frame, a, b) != 0
