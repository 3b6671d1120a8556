import numpy as np
import pytest

from conftest import roots_of_unity
from kzsurface import HyperellipticCurve, TorusSurface, genus, mobius_transform
from kzsurface.errors import ModelError, UnsupportedModelError
from kzsurface.surfaces import model_hash, surface_from_spec


def test_genus_from_branch_points():
    assert genus(roots_of_unity(4)) == 1
    assert genus(roots_of_unity(8)) == 3
    assert genus([0, 1, 2, 3, 4, 5]) == 2
    assert TorusSurface(1j).genus == 1


@pytest.mark.parametrize("pts", [(0, 1, 2), (0, 1, 2, 3, 4), (0, 1, 1, 2)])
def test_bad_branch_points(pts):
    with pytest.raises(ModelError):
        HyperellipticCurve(pts)


def test_bad_cut_plan():
    with pytest.raises(ModelError):
        HyperellipticCurve((0, 1, 2, 3), ((0, 1), (1, 2)))


def test_torus_needs_upper_half_plane():
    with pytest.raises(ModelError):
        TorusSurface(-1j)


def test_spec_round_trip():
    c = HyperellipticCurve((0.5, -0.5, 1, 1j, -1, -1j))
    assert surface_from_spec(c.to_spec()) == c
    t = TorusSurface(0.5 + 1.2j, 16)
    assert surface_from_spec(t.to_spec()) == t


def test_spec_type_errors():
    with pytest.raises(ModelError):
        surface_from_spec({"branch_points": []})
    with pytest.raises(UnsupportedModelError) as exc:
        surface_from_spec({"type": "plane_quartic"})
    assert exc.value.exit_code == 3


def test_mobius_moves_points_and_keeps_cuts():
    c = roots_of_unity(6)
    m = mobius_transform(c, (1, 0, 0.3, 1))
    expected = [e / (0.3 * e + 1) for e in c.branch_points]
    assert np.allclose(m.branch_points, expected)
    assert m.cut_plan == c.cut_plan


def test_mobius_rejects_point_at_infinity():
    with pytest.raises(UnsupportedModelError):
        mobius_transform(roots_of_unity(4), (1, 0, 1, -1))
    with pytest.raises(ModelError):
        mobius_transform(roots_of_unity(4), (1, 1, 1, 1))


def test_model_hash_depends_on_params():
    c = roots_of_unity(4)
    assert model_hash(c, {"a": 1}) == model_hash(c, {"a": 1})
    assert model_hash(c, {"a": 1}) != model_hash(c, {"a": 2})
