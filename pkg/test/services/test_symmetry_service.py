import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from posner.core.errors import UsageError
from posner.models.enums import ElementKind, TemplateGroup
from posner.schemas.symmetry import SymmetryElement
from posner.services import generation_service, geometry_service, symmetry_service

from ..factories import make_structure, orbit_cloud, rotated_copy

Z = (0.0, 0.0, 1.0)


def _square():
    return make_structure(["O"] * 4, [[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]])


def _d3h_monomer():
    """Ca3(PO4)2 with the Ca triangle in the mirror plane and eclipsed phosphates on the axis."""
    ca, p, o = [], [], []
    for k in range(3):
        angle = 2.0 * math.pi * k / 3.0
        ca.append([3.0 * math.cos(angle), 3.0 * math.sin(angle), 0.0])
    for sign in (1.0, -1.0):
        p.append([0.0, 0.0, 2.0 * sign])
        o.append([0.0, 0.0, 3.55 * sign])
        for k in range(3):
            angle = 2.0 * math.pi * k / 3.0
            o.append([1.461 * math.cos(angle), 1.461 * math.sin(angle), 1.483 * sign])
    return make_structure(["Ca"] * 3 + ["P"] * 2 + ["O"] * 8, ca + p + o)


def _ring(radius, height, phase_deg, count=3):
    angles = np.radians(phase_deg + 360.0 * np.arange(count) / count)
    return [[radius * math.cos(a), radius * math.sin(a), height] for a in angles]


def _hexagon():
    return make_structure(["O"] * 6, _ring(1.4, 0.0, 0.0, count=6))


def _bent_triatomic():
    return make_structure(["P", "O", "O"], [[0.0, 0.0, 0.0], [1.2, 0.0, 0.8], [-1.2, 0.0, 0.8]])


def _inversion_pairs():
    half = np.array([[1.0, 0.3, 0.2], [0.4, 1.1, -0.5], [-0.7, 0.2, 0.9]])
    return make_structure(["Ca", "P", "O", "Ca", "P", "O"], np.vstack([half, -half]))


def _planar_scalene():
    return make_structure(["Ca", "P", "O", "O"], [[0.0, 0.0, 0.0], [1.5, 0.2, 0.0], [-0.3, 1.7, 0.0], [0.9, -1.1, 0.0]])


def _staggered_pair():
    oxygens = _ring(1.0, 1.15, 0.0) + _ring(1.0, -1.15, 60.0)
    return make_structure(["P", "P"] + ["O"] * 6, [[0.0, 0.0, 0.77], [0.0, 0.0, -0.77]] + oxygens)


def _random_cloud():
    return make_structure(["Ca", "P", "O", "O", "O", "O", "O", "O"], np.random.default_rng(5).uniform(-2.0, 2.0, (8, 3)))


REFERENCE_SHAPES = {
    "D6h": _hexagon,
    "C2v": _bent_triatomic,
    "Ci": _inversion_pairs,
    "Cs": _planar_scalene,
    "D3d": _staggered_pair,
    "C1": _random_cloud,
}

X = (1.0, 0.0, 0.0)

# generators, then one (symbol, point) site per species; orbits stay at or under 12 atoms
ORBIT_GROUPS = [
    ([geometry_service.improper_rotation_matrix(Z, 6)], ["Ca", "O"]),
    ([geometry_service.proper_rotation_matrix(Z, 3), geometry_service.proper_rotation_matrix(X, 2), -np.eye(3)], ["O"]),
    ([geometry_service.proper_rotation_matrix(Z, 2), geometry_service.mirror_matrix(X)], ["Ca", "P", "O"]),
    ([geometry_service.proper_rotation_matrix(Z, 3), geometry_service.mirror_matrix(X)], ["Ca", "O"]),
    ([-np.eye(3)], ["Ca", "P", "O", "O"]),
    ([geometry_service.proper_rotation_matrix(Z, 2), geometry_service.proper_rotation_matrix((1, 1, 1), 3), -np.eye(3)], ["O"]),
]
NOISE_LEVELS = (0.0, 0.01, 0.03, 0.05, 0.1)


def _tolerance_case(seed):
    """Even seeds: a mixed-species random cloud. Odd seeds: a jittered orbit of a small point group."""
    rng = np.random.default_rng(seed)
    if seed % 2 == 0:
        n = int(rng.integers(4, 8))
        symbols = [("Ca", "P", "O")[i % 3] for i in range(n)]
        return make_structure(symbols, rng.uniform(-2.0, 2.0, (n, 3)))

    generators, species = ORBIT_GROUPS[(seed // 2) % len(ORBIT_GROUPS)]
    operations = generation_service.close_group(generators)
    if len(operations) == 24:
        sites = [(species[0], [rng.uniform(0.6, 1.0), rng.uniform(1.2, 1.8), 0.0])]
    else:
        sites = [(symbol, rng.uniform(0.3, 1.8, 3) * rng.choice([-1.0, 1.0], 3)) for symbol in species]
    exact = orbit_cloud(operations, sites)
    noise = NOISE_LEVELS[int(rng.integers(len(NOISE_LEVELS)))] * symmetry_service.molecular_radius(exact)
    return exact.with_positions(exact.positions + rng.normal(0.0, noise, exact.positions.shape))


def test_group_order_table():
    """Test group orders for the labels the detector can emit."""
    assert symmetry_service.group_order("C1") == 1
    assert symmetry_service.group_order("Cs") == 2
    assert symmetry_service.group_order("Ci") == 2
    assert symmetry_service.group_order("S6") == 6
    assert symmetry_service.group_order("C3v") == 6
    assert symmetry_service.group_order("D3d") == 12
    assert symmetry_service.group_order("D3h") == 12
    assert symmetry_service.group_order("Th") == 24
    assert symmetry_service.group_order("Oh") == 48
    assert math.isinf(symmetry_service.group_order("D∞h"))


def test_group_order_unknown_label():
    """Test an unknown label is rejected."""
    with pytest.raises(UsageError):
        symmetry_service.group_order("Q7")


def test_score_triangle_c3_is_zero():
    """Test an equilateral triangle is exactly invariant under C3 about its normal."""
    angles = [0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0]
    triangle = make_structure(["O"] * 3, [[math.cos(a), math.sin(a), 0.0] for a in angles])
    assert symmetry_service.score_element(triangle, SymmetryElement.rotation(Z, 3)) < 1e-12


def test_score_collinear_inversion():
    """Test the inversion score of atoms at x = 0, 1, 2.1 against the hand-matched value."""
    line = make_structure(["O"] * 3, [[0.0, 0, 0], [1.0, 0, 0], [2.1, 0, 0]])
    score = symmetry_service.score_element(line, SymmetryElement.inversion())
    assert abs(score - 0.0625) < 1e-12


def test_score_fixture_best_mirror_between_tolerances(most_stable):
    """Test the fixture's best mirror sits between the strict and loose tolerances."""
    elements = symmetry_service.find_elements(most_stable, 0.25)
    mirrors = [e.score for e in elements if e.kind == ElementKind.MIRROR]
    assert mirrors
    assert 0.1 < min(mirrors) <= 0.25


def test_find_elements_square():
    """Test a square of identical atoms carries the full D4h element set."""
    elements = symmetry_service.find_elements(_square(), 0.01)
    x, y, diag = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0, 0.0)
    expected = [
        SymmetryElement.rotation(Z, 4),
        SymmetryElement.rotation(Z, 2),
        SymmetryElement.rotation(x, 2),
        SymmetryElement.rotation(y, 2),
        SymmetryElement.rotation(diag, 2),
        SymmetryElement.rotation((1.0, -1.0, 0.0), 2),
        SymmetryElement.mirror(Z),
        SymmetryElement.mirror(x),
        SymmetryElement.mirror(y),
        SymmetryElement.mirror(diag),
        SymmetryElement.mirror((1.0, -1.0, 0.0)),
        SymmetryElement.improper(Z, 4),
        SymmetryElement.inversion(),
    ]
    for element in expected:
        assert symmetry_service.contains_element(elements, element), element.symbol


def test_find_elements_octahedron():
    """Test six atoms on ±x, ±y, ±z give three C4, four C3 and inversion."""
    positions = np.vstack([np.eye(3), -np.eye(3)])
    elements = symmetry_service.find_elements(make_structure(["O"] * 6, positions), 0.01)
    assert sum(1 for e in elements if e.kind == ElementKind.PROPER_ROTATION and e.order == 4) == 3
    assert sum(1 for e in elements if e.kind == ElementKind.PROPER_ROTATION and e.order == 3) == 4
    assert any(e.kind == ElementKind.INVERSION for e in elements)


def test_find_elements_random_cloud_identity_only(rng):
    """Test a random cloud at a tight tolerance keeps only the identity."""
    cloud = make_structure(["O"] * 10, rng.uniform(-2.0, 2.0, size=(10, 3)))
    elements = symmetry_service.find_elements(cloud, 1e-3)
    assert [e.kind for e in elements] == [ElementKind.IDENTITY]


def test_find_elements_rejects_bad_tolerance(most_stable):
    """Test a non-positive tolerance is a usage error."""
    with pytest.raises(UsageError):
        symmetry_service.find_elements(most_stable, 0.0)


def test_detect_tetrahedron():
    """Test a centred tetrahedron of identical atoms is Td."""
    s = make_structure(["P"] + ["O"] * 4, [[0, 0, 0], [1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    group = symmetry_service.detect_point_group(s, 0.01)
    assert group.schoenflies == "Td"
    assert group.order == 24


def test_detect_octahedron_is_oh():
    """Test the six-atom octahedron is Oh."""
    positions = np.vstack([np.eye(3), -np.eye(3)])
    assert symmetry_service.detect_point_group(make_structure(["O"] * 6, positions), 0.01).schoenflies == "Oh"


def test_detect_square_is_d4h():
    """Test the square is D4h with the principal axis along z."""
    group = symmetry_service.detect_point_group(_square(), 0.01)
    assert group.schoenflies == "D4h"
    assert abs(abs(group.principal_axis[2]) - 1.0) < 1e-6


def test_detect_d3h_monomer():
    """Test the idealised Ca3(PO4)2 monomer is D3h."""
    assert symmetry_service.detect_point_group(_d3h_monomer(), 0.01).schoenflies == "D3h"


def test_detect_fixture_strict_tolerance(most_stable):
    """Test the most-stable structure is C1 at tolerance 0.1."""
    assert symmetry_service.detect_point_group(most_stable, 0.1).schoenflies == "C1"


def test_detect_fixture_loose_tolerance(most_stable):
    """Test the most-stable structure is Cs at tolerance 0.25."""
    group = symmetry_service.detect_point_group(most_stable, 0.25)
    assert group.schoenflies == "Cs"
    assert group.count(ElementKind.MIRROR) == 1


def test_detect_order_monotone_in_tolerance(most_stable):
    """Test loosening the tolerance never lowers the reported group order."""
    orders = [symmetry_service.detect_point_group(most_stable, tol).order for tol in (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)]
    assert orders == sorted(orders)


def test_detect_invariant_under_rigid_motion(most_stable):
    """Test the label does not depend on orientation or position."""
    moved = rotated_copy(most_stable, Rotation.random(None, 7).as_matrix(), (4.0, -2.0, 1.5))
    for tol in (0.1, 0.25):
        assert (
            symmetry_service.detect_point_group(moved, tol).schoenflies
            == symmetry_service.detect_point_group(most_stable, tol).schoenflies
        )


@pytest.mark.parametrize("label", sorted(REFERENCE_SHAPES))
def test_detect_reference_shapes(label):
    """Test each small reference shape gets its own group and order at tolerance 1e-3."""
    group = symmetry_service.detect_point_group(REFERENCE_SHAPES[label](), 1e-3)
    assert group.schoenflies == label
    assert group.order == symmetry_service.group_order(label)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("label", sorted(REFERENCE_SHAPES))
def test_reference_shapes_invariant_under_rigid_motion(label, seed):
    """Test random rotations and translations leave the label unchanged."""
    rng = np.random.default_rng(seed)
    moved = rotated_copy(REFERENCE_SHAPES[label](), Rotation.random(random_state=rng).as_matrix(), rng.uniform(-5.0, 5.0, 3))
    assert symmetry_service.detect_point_group(moved, 1e-3).schoenflies == label


@pytest.mark.parametrize("factor", [0.5, 2.0])
@pytest.mark.parametrize("seed", range(1, 21, 2))
def test_detect_invariant_under_uniform_scaling(seed, factor):
    """Test scaling a jittered orbit about the origin keeps the label, since tolerances are relative."""
    s = _tolerance_case(seed)
    scaled = s.with_positions(s.positions * factor)
    for tol in (0.05, 0.1):
        assert (
            symmetry_service.detect_point_group(scaled, tol).schoenflies
            == symmetry_service.detect_point_group(s, tol).schoenflies
        )


@pytest.mark.parametrize("seed", range(200))
def test_loosening_tolerance_only_adds_symmetry(seed):
    """Test every element found at 0.1 is still found at 0.25 and the group order does not drop."""
    s = _tolerance_case(seed)
    tight = symmetry_service.find_elements(s, 0.1)
    loose = symmetry_service.find_elements(s, 0.25)
    assert [e.symbol for e in tight if not symmetry_service.contains_element(loose, e)] == []

    tight_group = symmetry_service.assemble_point_group(symmetry_service.consistent_elements(tight), 0.1)
    loose_group = symmetry_service.assemble_point_group(symmetry_service.consistent_elements(loose), 0.25)
    assert loose_group.order >= tight_group.order


def test_detect_single_atom_and_linear():
    """Test atoms and linear molecules get the infinite groups."""
    assert symmetry_service.detect_point_group(make_structure(["Ca"], [[1, 2, 3]])).schoenflies == "Kh"
    symmetric = make_structure(["O", "P", "O"], [[-1.5, 0, 0], [0, 0, 0], [1.5, 0, 0]])
    assert symmetry_service.detect_point_group(symmetric, 0.01).schoenflies == "D∞h"
    polar = make_structure(["O", "P", "Ca"], [[-1.5, 0, 0], [0, 0, 0], [2.5, 0, 0]])
    assert symmetry_service.detect_point_group(polar, 0.01).schoenflies == "C∞v"


@pytest.mark.parametrize(
    "group, label",
    [
        (TemplateGroup.S6, "S6"),
        (TemplateGroup.TH, "Th"),
        (TemplateGroup.D3D, "D3d"),
        (TemplateGroup.C3V, "C3v"),
    ],
)
def test_detect_templates(group, label):
    """Test each hand-built template is detected as its own group."""
    structure = generation_service.build_template(group)
    assert symmetry_service.detect_point_group(structure, 0.01).schoenflies == label


def test_s6_template_has_inversion_and_order_six(s6_structure):
    """Test the exact S6 template includes inversion and reaches order 6 at a tiny tolerance."""
    group = symmetry_service.detect_point_group(s6_structure, 1e-6)
    assert group.has_inversion()
    assert group.order >= 6
    assert symmetry_service.contains_element(group.elements, SymmetryElement.improper(Z, 6))


def test_d3d_template_element_set():
    """Test the D3d template carries C3, three C2, inversion, S6 and three mirrors."""
    group = symmetry_service.detect_point_group(generation_service.build_template(TemplateGroup.D3D), 0.01)
    assert group.count(ElementKind.PROPER_ROTATION, 3) == 1
    assert group.count(ElementKind.PROPER_ROTATION, 2) == 3
    assert group.has_inversion()
    assert group.count(ElementKind.IMPROPER_ROTATION, 6) >= 1
    assert group.count(ElementKind.MIRROR) == 3


def test_is_closed_accepts_c2h():
    """Test {E, C2, σh, i} is closed."""
    elements = [
        SymmetryElement.identity(),
        SymmetryElement.rotation(Z, 2),
        SymmetryElement.mirror(Z),
        SymmetryElement.inversion(),
    ]
    assert symmetry_service.is_closed(elements)


def test_is_closed_rejects_tilted_mirror_with_c3():
    """Test a C3 with a mirror that neither contains nor is normal to its axis is not closed."""
    tilted = (math.sin(math.radians(40.0)), 0.0, math.cos(math.radians(40.0)))
    elements = [SymmetryElement.identity(), SymmetryElement.rotation(Z, 3), SymmetryElement.mirror(tilted)]
    assert not symmetry_service.is_closed(elements)


def test_consistent_elements_drops_worst_first():
    """Test the closure filter drops the worse-scoring element of an inconsistent pair."""
    tilted = (math.sin(math.radians(40.0)), 0.0, math.cos(math.radians(40.0)))
    mirror = SymmetryElement.mirror(tilted, score=0.2)
    rotation = SymmetryElement.rotation(Z, 3, score=0.22)
    kept = symmetry_service.consistent_elements([SymmetryElement.identity(), mirror, rotation])
    assert kept == [SymmetryElement.identity(), mirror]


def test_detect_many_keeps_order(most_stable, s6_structure):
    """Test batch detection returns labels in input order with several workers."""
    groups = symmetry_service.detect_many([s6_structure, most_stable, s6_structure], 0.1, workers=3)
    assert [g.schoenflies for g in groups] == ["S6", "C1", "S6"]


def test_detect_many_detects_repeated_frames_once(most_stable, s6_structure, monkeypatch):
    """Test identical frames share one detection and still come back in input order."""
    calls = []
    detect = symmetry_service.detect_point_group

    def counting(s, tol=None):
        calls.append(s)
        return detect(s, tol)

    monkeypatch.setattr(symmetry_service, "detect_point_group", counting)
    frames = [s6_structure, most_stable, s6_structure, s6_structure, most_stable]
    groups = symmetry_service.detect_many(frames, 0.1, workers=1)
    assert [g.schoenflies for g in groups] == ["S6", "C1", "S6", "S6", "C1"]
    assert len(calls) == 2


def test_equivalence_permutation_inversion(s6_structure):
    """Test inversion pairs every atom of the S6 template with a partner of the same element."""
    perm = symmetry_service.equivalence_permutation(s6_structure, SymmetryElement.inversion())
    x = s6_structure.positions - s6_structure.positions.mean(axis=0)
    assert sorted(perm) == list(range(s6_structure.n_atoms))
    for atom, partner in enumerate(perm):
        assert s6_structure.symbols[atom] == s6_structure.symbols[partner]
        np.testing.assert_allclose(x[partner], -x[atom], atol=1e-9)
