import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from posner.core.errors import GeometryError, StructureMismatchError
from posner.schemas.structure import RigidTransform
from posner.services import geometry_service

from ..factories import make_structure


def test_centroid_single_atom():
    """Test the centroid of one atom is the atom."""
    s = make_structure(["O"], [[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(geometry_service.centroid(s), [1.0, 2.0, 3.0])


def test_centroid_symmetric_pair():
    """Test a centred pair has its centroid at the origin."""
    s = make_structure(["O", "O"], [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    np.testing.assert_allclose(geometry_service.centroid(s), [0.0, 0.0, 0.0], atol=1e-15)


def test_centroid_matches_direct_mean(most_stable):
    """Test the fixture centroid against a plain mean over its rows."""
    expected = sum(most_stable.positions) / most_stable.n_atoms
    np.testing.assert_allclose(geometry_service.centroid(most_stable), expected, atol=1e-12)


def test_center_of_mass_weighted():
    """Test masses 16 and 1 give a centre at 1/17."""
    s = make_structure(["O", "O"], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    com = geometry_service.center_of_mass(s, masses=[16.0, 1.0])
    np.testing.assert_allclose(com, [1.0 / 17.0, 0.0, 0.0], atol=1e-15)


def test_center_of_mass_homonuclear_pair():
    """Test equal masses put the centre at the midpoint."""
    s = make_structure(["Ca", "Ca"], [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    np.testing.assert_allclose(geometry_service.center_of_mass(s), [1.0, 0.0, 0.0])


def test_inertia_two_point_masses():
    """Test two unit masses on z give moments (2, 2, 0) with the zero moment along z."""
    s = make_structure(["O", "O"], [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    result = geometry_service.inertia_tensor(s, masses=[1.0, 1.0])
    np.testing.assert_allclose(result.moments, [2.0, 2.0, 0.0], atol=1e-12)
    assert abs(abs(result.axes[2][2]) - 1.0) < 1e-12
    assert (0, 1) in result.degenerate_pairs


def test_inertia_regular_tetrahedron_is_spherical():
    """Test a regular tetrahedron has three equal moments."""
    s = make_structure(["O"] * 4, [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    result = geometry_service.inertia_tensor(s)
    np.testing.assert_allclose(result.moments, [result.moments[0]] * 3, rtol=1e-12)
    assert len(result.degenerate_pairs) == 3


def test_inertia_matches_direct_summation(rng):
    """Test the tensor against a per-atom loop on a random cloud."""
    positions = rng.normal(size=(5, 3))
    masses = rng.uniform(1.0, 40.0, size=5)
    s = make_structure(["O"] * 5, positions)
    result = geometry_service.inertia_tensor(s, masses=masses)

    r = positions - (masses[:, None] * positions).sum(axis=0) / masses.sum()
    expected = np.zeros((3, 3))
    for m, ri in zip(masses, r):
        expected += m * (np.dot(ri, ri) * np.eye(3) - np.outer(ri, ri))
    np.testing.assert_allclose(result.tensor, expected, atol=1e-10)
    assert np.all(np.diff(result.moments) <= 0)
    np.testing.assert_allclose(result.axes @ result.axes.T, np.eye(3), atol=1e-10)


def test_inertia_rejects_single_atom():
    """Test one atom has no inertia tensor."""
    with pytest.raises(GeometryError):
        geometry_service.inertia_tensor(make_structure(["O"], [[0.0, 0.0, 0.0]]))


def test_rmsd_identical_is_zero(most_stable):
    """Test a structure has zero RMSD to itself."""
    assert geometry_service.rmsd(most_stable, most_stable) == 0.0


def test_rmsd_uniform_translation():
    """Test a (3, 4, 0) translation gives RMSD 5 exactly."""
    a = make_structure(["O", "P"], [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    b = geometry_service.translate(a, (3.0, 4.0, 0.0))
    assert geometry_service.rmsd(a, b) == 5.0


def test_rmsd_matches_direct_sum(rng):
    """Test RMSD against a direct per-atom sum."""
    a = make_structure(["O"] * 6, rng.normal(size=(6, 3)))
    b = make_structure(["O"] * 6, rng.normal(size=(6, 3)))
    expected = np.sqrt(sum(np.sum((x - y) ** 2) for x, y in zip(a.positions, b.positions)) / 6)
    assert abs(geometry_service.rmsd(a, b) - expected) < 1e-12


def test_rmsd_rejects_different_elements():
    """Test structures with different element sequences cannot be compared."""
    a = make_structure(["O", "P"], [[0, 0, 0], [1, 0, 0]])
    b = make_structure(["P", "O"], [[0, 0, 0], [1, 0, 0]])
    with pytest.raises(StructureMismatchError):
        geometry_service.rmsd(a, b)


def test_apply_identity_transform(most_stable):
    """Test the identity transform leaves positions unchanged."""
    moved = geometry_service.apply_transform(most_stable, RigidTransform.identity())
    np.testing.assert_array_equal(moved.positions, most_stable.positions)


def test_apply_quarter_turn():
    """Test a 90° turn about z takes x to y."""
    s = make_structure(["O"], [[1.0, 0.0, 0.0]])
    turn = RigidTransform(rotation=geometry_service.proper_rotation_matrix((0, 0, 1), 4), translation=(0, 0, 0))
    np.testing.assert_allclose(geometry_service.apply_transform(s, turn).positions, [[0.0, 1.0, 0.0]], atol=1e-15)


def test_compose_transforms_matches_sequential_application(rng, most_stable):
    """Test composing two transforms equals applying them in turn."""
    first = RigidTransform(rotation=Rotation.random(None, 1).as_matrix(), translation=rng.normal(size=3))
    second = RigidTransform(rotation=Rotation.random(None, 2).as_matrix(), translation=rng.normal(size=3))
    sequential = geometry_service.apply_transform(geometry_service.apply_transform(most_stable, first), second)
    composed = geometry_service.apply_transform(most_stable, geometry_service.compose_transforms(first, second))
    np.testing.assert_allclose(composed.positions, sequential.positions, atol=1e-12)


def test_rigid_transform_rejects_reflection():
    """Test an improper matrix is not a rigid transform."""
    with pytest.raises(ValueError):
        RigidTransform(rotation=np.diag([1.0, 1.0, -1.0]), translation=(0, 0, 0))


def test_molecular_radius():
    """Test the radius of simple cases."""
    assert geometry_service.molecular_radius(make_structure(["O"], [[5.0, 5.0, 5.0]])) == 0.0
    pair = make_structure(["O", "O"], [[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]])
    assert geometry_service.molecular_radius(pair) == 2.0


def test_molecular_radius_matches_scan(most_stable):
    """Test the fixture radius against a scan over all atoms."""
    center = most_stable.positions.mean(axis=0)
    expected = max(np.linalg.norm(p - center) for p in most_stable.positions)
    assert abs(geometry_service.molecular_radius(most_stable) - expected) < 1e-12


def test_improper_rotation_builders():
    """Test S2 is the inversion and a mirror has determinant -1."""
    np.testing.assert_allclose(geometry_service.improper_rotation_matrix((0, 0, 1), 2), -np.eye(3), atol=1e-15)
    assert np.isclose(np.linalg.det(geometry_service.mirror_matrix((1, 1, 0))), -1.0)
