import math

import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from posner.core.errors import AllStartsCollidedError, MissingParameterError, SingularGeometryError, UsageError
from posner.schemas.generation import S6Params
from posner.schemas.potential import BuckinghamPair, OptimizerConfig, PairPotentialParams
from posner.schemas.symmetry import SymmetryElement
from posner.services import forcefield_service, generation_service, symmetry_service

from ..factories import make_structure, rotated_copy

ION_PAIR = PairPotentialParams(charges={"Ca": 1.0, "O": -1.0})


def _wall_potential():
    """Opposite unit charges with a Ca-O repulsive wall."""
    return PairPotentialParams(
        charges={"Ca": 1.0, "O": -1.0},
        buckingham={("Ca", "O"): BuckinghamPair(a=500.0, rho=0.3, c=0.0)},
    )


def _random_cluster(seed, symbols=("Ca", "Ca", "P", "O", "O", "O"), box=3.0, closest=1.2):
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-box, box, size=(len(symbols), 3))
    while pdist(positions).min() < closest:
        positions = rng.uniform(-box, box, size=(len(symbols), 3))
    return make_structure(symbols, positions)


def _numeric_gradient(s, p, h=1e-5):
    grad = np.zeros_like(s.positions)
    for atom in range(s.n_atoms):
        for axis in range(3):
            step = np.zeros_like(s.positions)
            step[atom, axis] = h
            up = forcefield_service.energy(s.with_positions(s.positions + step), p)
            down = forcefield_service.energy(s.with_positions(s.positions - step), p)
            grad[atom, axis] = (up - down) / (2 * h)
    return grad


def test_coulomb_pair_energy():
    """Test +1/−1 charges 1 Å apart give −k_e in eV."""
    s = make_structure(["Ca", "O"], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert abs(forcefield_service.energy(s, ION_PAIR) - (-14.399645)) < 1e-9


def test_zero_parameters_give_zero_energy(rng):
    """Test zero charges and no Buckingham terms give zero for any geometry."""
    p = PairPotentialParams(charges={"O": 0.0})
    s = make_structure(["O"] * 5, rng.normal(size=(5, 3)) * 3)
    assert forcefield_service.energy(s, p) == 0.0


def test_buckingham_pair_energy():
    """Test an uncharged pair against A·exp(−r/ρ) − C/r⁶."""
    p = PairPotentialParams(
        charges={"O": 0.0},
        buckingham={("O", "O"): BuckinghamPair(a=1000.0, rho=0.3, c=20.0)},
    )
    s = make_structure(["O", "O"], [[0.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    expected = 1000.0 * math.exp(-2.0 / 0.3) - 20.0 / 2.0**6
    assert forcefield_service.energy(s, p) == pytest.approx(expected, rel=1e-12)


def test_cutoff_drops_distant_pairs():
    """Test pairs beyond the cutoff contribute nothing."""
    s = make_structure(["Ca", "O"], [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    p = ION_PAIR.model_copy(update={"cutoff": 4.0})
    assert forcefield_service.energy(s, p) == 0.0


def test_missing_charge():
    """Test an element without a charge is a missing parameter."""
    s = make_structure(["Ca", "P"], [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    with pytest.raises(MissingParameterError):
        forcefield_service.energy(s, ION_PAIR)


def test_coincident_atoms_are_singular():
    """Test two atoms on top of each other are rejected."""
    s = make_structure(["Ca", "O"], [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    with pytest.raises(SingularGeometryError):
        forcefield_service.energy(s, ION_PAIR)


def test_default_potential_is_neutral(s6_structure):
    """Test the built-in charges neutralise Ca9(PO4)6."""
    assert forcefield_service.default_potential().total_charge(s6_structure) == pytest.approx(0.0, abs=1e-12)


def test_default_potential_matches_shipped_file(fixtures_dir):
    """Test the shipped default parameter file holds the built-in parameters."""
    path = fixtures_dir.parent.parent / "potentials" / "default.env"
    assert forcefield_service.load_potential(path) == forcefield_service.default_potential()


def test_rigid_phosphates_exclude_internal_pairs():
    """Test a lone PO4 has no energy once its internal pairs are frozen."""
    seed = generation_service.build_cube_seed()
    groups = generation_service.identify_phosphate_groups(seed)
    p_index, oxygens = groups[0]
    atoms = [p_index, *oxygens]
    lone = make_structure([seed.symbols[i] for i in atoms], seed.positions[atoms])
    p = forcefield_service.default_potential()
    assert forcefield_service.energy(lone, p.with_rigid_phosphates(True)) == 0.0
    assert forcefield_service.energy(lone, p) != 0.0


def test_energy_rigid_motion_invariance(s6_structure):
    """Test energy is unchanged by rotation and translation."""
    p = forcefield_service.default_potential()
    moved = rotated_copy(s6_structure, Rotation.random(None, 11).as_matrix(), (3.0, -1.0, 8.0))
    assert abs(forcefield_service.energy(moved, p) - forcefield_service.energy(s6_structure, p)) <= 1e-8


@pytest.mark.parametrize("seed", range(100))
def test_gradient_matches_central_differences(seed):
    """Test the analytic gradient against central differences on random ion clusters."""
    p = forcefield_service.default_potential()
    s = _random_cluster(seed)
    analytic = forcefield_service.gradient(s, p)
    numeric = _numeric_gradient(s, p)
    scale = np.abs(analytic).max()
    assert np.abs(analytic - numeric).max() <= 1e-6 * scale


@pytest.mark.parametrize("seed", range(20))
def test_gradient_has_no_net_force_or_torque(seed):
    """Test pair forces cancel in sum and in moment about the origin."""
    s = _random_cluster(seed)
    grad = forcefield_service.gradient(s, forcefield_service.default_potential())
    scale = np.abs(grad).max()
    np.testing.assert_allclose(grad.sum(axis=0), 0.0, atol=1e-10 * scale)
    np.testing.assert_allclose(np.cross(s.positions, grad).sum(axis=0), 0.0, atol=1e-9 * scale)


def test_s6_structure_has_no_net_force_or_torque(s6_structure):
    """Test the same balance on the full S6 cluster with rigid phosphates."""
    p = forcefield_service.default_potential().with_rigid_phosphates(True)
    grad = forcefield_service.gradient(s6_structure, p)
    scale = np.abs(grad).max()
    np.testing.assert_allclose(grad.sum(axis=0), 0.0, atol=1e-10 * scale)
    np.testing.assert_allclose(np.cross(s6_structure.positions, grad).sum(axis=0), 0.0, atol=1e-9 * scale)


def test_gradient_like_charges_opposite_forces():
    """Test two like charges feel equal and opposite forces along their axis."""
    p = PairPotentialParams(charges={"Ca": 2.0})
    s = make_structure(["Ca", "Ca"], [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    grad = forcefield_service.gradient(s, p)
    np.testing.assert_allclose(grad[0], -grad[1])
    assert grad[0][0] > 0.0
    np.testing.assert_allclose(grad[:, 1:], 0.0)


def test_relax_lowers_energy():
    """Test relaxation never ends above its start."""
    p = _wall_potential()
    positions = [[0.0, 0.0, 0.0], [2.5, 0.1, 0.0], [0.2, 2.7, 0.3], [2.4, 2.6, -0.2]]
    s = make_structure(["Ca", "O", "O", "Ca"], positions)
    result = forcefield_service.relax(s, p)
    assert result.energy <= result.initial_energy
    assert result.energy == pytest.approx(forcefield_service.energy(result.structure, p))


def test_relax_at_analytic_minimum_stays_put():
    """Test a pair placed at its stationary separation barely moves."""
    p = _wall_potential()
    wall = p.pair("Ca", "O")

    def slope(r):
        return 14.399645 / r**2 - (wall.a / wall.rho) * math.exp(-r / wall.rho)

    lo, hi = 0.5, 5.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if slope(lo) * slope(mid) <= 0:
            hi = mid
        else:
            lo = mid
    r0 = 0.5 * (lo + hi)
    s = make_structure(["Ca", "O"], [[0.0, 0.0, 0.0], [r0, 0.0, 0.0]])
    result = forcefield_service.relax(s, p)
    assert result.iterations <= 1
    assert np.abs(result.structure.positions - s.positions).max() < 1e-6
    assert result.converged


def test_relax_config_limits_iterations(s6_structure):
    """Test the iteration cap is respected."""
    p = forcefield_service.default_potential()
    result = forcefield_service.relax(s6_structure, p, OptimizerConfig(max_iterations=3))
    assert result.iterations <= 3
    assert result.energy <= result.initial_energy


def test_minimize_s6_returns_exact_s6():
    """Test the S6 search result keeps the generator exactly and improves on its starts."""
    p = forcefield_service.default_potential()
    cfg = OptimizerConfig(max_iterations=150)
    starts = generation_service.random_s6_starts(2, seed=4)
    result = forcefield_service.minimize_s6(starts, p, cfg)

    generator = SymmetryElement.improper((0.0, 0.0, 1.0), 6)
    assert symmetry_service.score_element(result.structure, generator) <= 1e-10
    objective = forcefield_service.S6Objective(p, cfg)
    assert result.energy <= min(objective(s.to_vector()) for s in starts)
    assert result.starts_tried == 2
    assert result.energy == result.structure.energy


def test_minimize_s6_is_deterministic():
    """Test identical starts and settings give identical results, whatever the worker count."""
    p = forcefield_service.default_potential()
    starts = generation_service.random_s6_starts(3, seed=1)
    a = forcefield_service.minimize_s6(starts, p, OptimizerConfig(max_iterations=60))
    b = forcefield_service.minimize_s6(starts, p, OptimizerConfig(max_iterations=60, workers=3))
    assert a.energy == b.energy
    assert a.start_index == b.start_index
    np.testing.assert_array_equal(a.parameter_vector, b.parameter_vector)


def test_minimize_s6_skips_colliding_starts():
    """Test a colliding start is counted and skipped."""
    p = forcefield_service.default_potential()
    starts = [S6Params(ca_orbit=(0.1, 0.0, 0.0)), S6Params()]
    result = forcefield_service.minimize_s6(starts, p, OptimizerConfig(max_iterations=20))
    assert result.starts_collided == 1
    assert result.start_index == 1
    assert result.start_energies[0] is None


def test_minimize_s6_all_collided():
    """Test every start colliding is an error."""
    p = forcefield_service.default_potential()
    with pytest.raises(AllStartsCollidedError):
        forcefield_service.minimize_s6([S6Params(ca_orbit=(0.1, 0.0, 0.0))], p)


def test_minimize_s6_needs_starts():
    """Test an empty start list is a usage error."""
    with pytest.raises(UsageError):
        forcefield_service.minimize_s6([], forcefield_service.default_potential())


@pytest.mark.parametrize("seed", range(50))
def test_relax_reports_best_point_evaluated(monkeypatch, seed):
    """Test relaxation never ends above its start and returns the lowest energy it evaluated."""
    evaluated = []
    table_energy = forcefield_service._PairTable.energy

    def recording(self, positions):
        value = table_energy(self, positions)
        evaluated.append(value)
        return value

    monkeypatch.setattr(forcefield_service._PairTable, "energy", recording)
    s = _random_cluster(seed, symbols=("Ca", "O", "Ca", "O", "O"), box=2.5, closest=1.5)
    result = forcefield_service.relax(s, _wall_potential(), OptimizerConfig(max_iterations=200))

    assert result.energy <= result.initial_energy
    assert result.energy == min(evaluated)
    monkeypatch.undo()
    assert forcefield_service.energy(result.structure, _wall_potential()) == pytest.approx(result.energy, abs=1e-9)


# Convex bowl over the ten S6 parameters, centred near the default geometry.
BOWL_CENTER = S6Params().to_vector() + np.linspace(-0.05, 0.05, 10)
BOWL_WEIGHTS = np.linspace(1.0, 10.0, 10)


def _bowl(self, vector):
    return float(np.sum(BOWL_WEIGHTS * (np.asarray(vector) - BOWL_CENTER) ** 2))


def test_minimize_s6_beats_random_search_on_a_bowl(monkeypatch):
    """Test the simplex search reaches the bottom of a convex bowl and beats 20,000 random samples."""
    monkeypatch.setattr(forcefield_service.S6Objective, "__call__", _bowl)
    cfg = OptimizerConfig(max_iterations=5000, restarts=2, seed=3)
    result = forcefield_service.minimize_s6(3, forcefield_service.default_potential(), cfg)

    rng = np.random.default_rng(0)
    samples = BOWL_CENTER + rng.uniform(-0.3, 0.3, size=(20_000, 10))
    oracle = min(_bowl(None, sample) for sample in samples)
    assert result.energy <= oracle
    assert result.energy < 1e-5
    np.testing.assert_allclose(result.parameter_vector, BOWL_CENTER, atol=5e-3)


def test_minimize_s6_draws_starts_from_the_config_seed(monkeypatch):
    """Test an integer start count uses cfg.seed, so changing the seed changes the starts."""
    monkeypatch.setattr(forcefield_service.S6Objective, "__call__", _bowl)
    p = forcefield_service.default_potential()
    cfg = OptimizerConfig(max_iterations=5, seed=7)

    drawn = forcefield_service.minimize_s6(3, p, cfg)
    explicit = forcefield_service.minimize_s6(generation_service.random_s6_starts(3, seed=7), p, cfg)
    reseeded = forcefield_service.minimize_s6(3, p, cfg.model_copy(update={"seed": 8}))

    assert drawn.start_energies == explicit.start_energies
    assert drawn.start_energies[0] == reseeded.start_energies[0]
    assert drawn.start_energies[1:] != reseeded.start_energies[1:]
