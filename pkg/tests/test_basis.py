import numpy as np
import pytest

import oracles
from kzsurface.basis import descriptors


def test_gram_g1_is_lemniscatic_area(state_g1):
    assert state_g1.basis.gram[0, 0].real == pytest.approx(oracles.lemniscatic_area(), rel=1e-7)


@pytest.mark.parametrize("fixture,n", [("state_g2", 6), ("state_g3", 8)])
def test_gram_diagonal_matches_elliptic_oracle(request, fixture, n):
    st = request.getfixturevalue(fixture)
    gram = st.basis.gram
    g = gram.shape[0]
    expected = [oracles.gram_diagonal(n, k) for k in range(g)]
    assert np.allclose(gram.diagonal().real, expected, rtol=1e-7)
    # x^k dx/y have distinct weights under x -> e^{2 pi i / n} x, hence orthogonal
    off = gram - np.diag(gram.diagonal())
    assert np.abs(off).max() < 1e-8 * np.abs(gram).max()


def test_basis_is_orthonormal(state_g3):
    b = state_g3.basis
    assert b.orthonormality_residual < 1e-7
    w = state_g3.mesh.node_w
    g = (b.values * w) @ b.values.conj().T
    assert np.allclose(g, np.eye(3), atol=1e-12)


def test_transform_is_lower_triangular(state_g3):
    t = state_g3.basis.transform
    assert np.allclose(np.triu(t, 1), 0)


def test_bergman_volume_has_unit_mass(state_g2, state_g3, torus_state):
    for st in (state_g2, state_g3, torus_state):
        assert st.volume.total == pytest.approx(1.0, abs=1e-12)
        assert np.all(st.volume.mass > 0)


def test_wedge_density_convention(state_g2):
    # (i/2) psi ^ conj(psi) is a positive area form
    d = state_g2.basis.wedge_density(0, 0)
    assert np.all((0.5j * d).real > 0)
    assert np.abs((0.5j * d).imag).max() < 1e-14 * np.abs(d).max()


def test_descriptors(state_g3):
    assert descriptors(state_g3.mesh) == ["x^0 dx/y", "x^1 dx/y", "x^2 dx/y"]
