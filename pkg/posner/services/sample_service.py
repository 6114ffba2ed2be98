import logging
from typing import Optional

import numpy as np

from posner.models.enums import PhaseKind
from posner.schemas.generation import PhosphateTemplate, S6Params, SampleTrajectory, SampleTrajectoryConfig
from posner.schemas.structure import Structure, Trajectory
from posner.schemas.symmetry import SymmetryElement
from posner.services import generation_service, symmetry_service

logger = logging.getLogger(__name__)

Z_AXIS = (0.0, 0.0, 1.0)


def _group_action(s: Structure, generator: SymmetryElement) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Matrices g^k and the atom permutations they induce, k = 0 .. order-1."""
    matrix = symmetry_service.element_matrix(generator)
    step = np.array(symmetry_service.equivalence_permutation(s, generator))
    matrices, perms = [np.eye(3)], [np.arange(s.n_atoms)]
    while True:
        perm = step[perms[-1]]
        if np.array_equal(perm, perms[0]) and np.allclose(matrices[-1] @ matrix, np.eye(3)):
            break
        matrices.append(matrices[-1] @ matrix)
        perms.append(perm)
    return matrices, perms


def symmetric_noise(
    rng: np.random.Generator,
    matrices: list[np.ndarray],
    perms: list[np.ndarray],
    magnitude: float,
) -> np.ndarray:
    """
    Uniform ±magnitude offsets drawn once per orbit representative and carried
    to the rest of the orbit by the group, so the field keeps the group's symmetry.
    """
    n_atoms = len(perms[0])
    noise = np.zeros((n_atoms, 3))
    done = np.zeros(n_atoms, dtype=bool)
    for atom in range(n_atoms):
        if done[atom]:
            continue
        draw = rng.uniform(-magnitude, magnitude, size=3)
        stabilizer = [m for m, perm in zip(matrices, perms) if perm[atom] == atom]
        draw = np.mean([m @ draw for m in stabilizer], axis=0)
        for m, perm in zip(matrices, perms):
            noise[perm[atom]] = m @ draw
            done[perm[atom]] = True
    return noise


def inversion_symmetric_noise(rng: np.random.Generator, partners: np.ndarray, magnitude: float) -> np.ndarray:
    noise = rng.uniform(-magnitude, magnitude, size=(len(partners), 3))
    for atom, partner in enumerate(partners):
        if partner == atom:
            noise[atom] = 0.0
        elif partner < atom:
            noise[atom] = -noise[partner]
    return noise


def _axial_shift(s: Structure, z_axial: float, shift: float) -> np.ndarray:
    """±shift along x on the two axial Ca atoms; odd under inversion."""
    offsets = np.zeros_like(s.positions)
    for index, symbol in enumerate(s.symbols):
        if symbol != "Ca":
            continue
        x, y, z = s.positions[index]
        if abs(x) < 1e-9 and abs(y) < 1e-9 and abs(abs(z) - z_axial) < 1e-9:
            offsets[index] = (np.sign(z) * shift, 0.0, 0.0)
    return offsets


def _inversion_break(
    rng: np.random.Generator,
    partners: np.ndarray,
    excluded: set[int],
    n_pairs: int,
    magnitude: float,
) -> np.ndarray:
    """
    Move both atoms of `n_pairs` inversion pairs by the same vector. Pairs come
    in couples with opposite vectors so the centroid stays put.
    """
    pairs = [(a, int(p)) for a, p in enumerate(partners) if a < p and a not in excluded]
    chosen = sorted(rng.choice(len(pairs), size=n_pairs, replace=False))
    offsets = np.zeros((len(partners), 3))
    for couple in range(n_pairs // 2):
        direction = rng.normal(size=3)
        direction *= magnitude / np.linalg.norm(direction)
        for sign, pair_index in ((1.0, chosen[2 * couple]), (-1.0, chosen[2 * couple + 1])):
            a, p = pairs[pair_index]
            offsets[a] = offsets[p] = sign * direction
    return offsets


def build_sample_trajectory(
    config: Optional[SampleTrajectoryConfig] = None,
    params: Optional[S6Params] = None,
    template: Optional[PhosphateTemplate] = None,
) -> SampleTrajectory:
    """
    Synthetic Posner-like run with planted phases: a Ci basin, a C1 basin and
    short exactly-S6 interludes, on the configured schedule.
    """
    config = config or SampleTrajectoryConfig()
    params = params or S6Params()
    base = generation_service.build_s6(params, template)
    rng = np.random.default_rng(config.seed)

    matrices, perms = _group_action(base, SymmetryElement.improper(Z_AXIS, 6))
    partners = np.array(symmetry_service.equivalence_permutation(base, SymmetryElement.inversion()))
    axial = _axial_shift(base, params.z_axial, config.axial_shift)
    excluded = set(np.flatnonzero(np.linalg.norm(axial, axis=1) > 0).tolist())
    broken = _inversion_break(rng, partners, excluded, config.broken_pairs, config.inversion_break)

    basins = {
        PhaseKind.S6_INTERLUDE: base.positions,
        PhaseKind.CI_BASIN: base.positions + axial,
        PhaseKind.C1_BASIN: base.positions + axial + broken,
    }
    planted = list(basins.values())
    amplitude_bound = max(
        float(np.linalg.norm(a - b, axis=1).max()) for i, a in enumerate(planted) for b in planted[i + 1:]
    )

    coordinates, energies, times = [], [], []
    for phase in config.schedule:
        for frame in range(phase.start_frame, phase.end_frame + 1):
            positions = basins[phase.kind] + symmetric_noise(rng, matrices, perms, config.symmetric_noise)
            if phase.kind == PhaseKind.CI_BASIN:
                positions = positions + inversion_symmetric_noise(rng, partners, config.thermal_noise)
            elif phase.kind == PhaseKind.C1_BASIN:
                positions = positions + rng.uniform(-config.thermal_noise, config.thermal_noise, size=positions.shape)
            coordinates.append(positions)
            energies.append(float(config.phase_energies[phase.kind] + rng.normal(0.0, config.energy_noise)))
            times.append(frame * config.timestep_fs)

    trajectory = Trajectory.from_coordinates(
        base.symbols,
        np.stack(coordinates),
        energies=energies,
        times_fs=times,
        timestep_fs=config.timestep_fs,
        temperature_k=config.temperature_k,
        label=f"sample seed={config.seed}",
    )
    logger.info(
        f"Built a {trajectory.n_frames}-frame sample trajectory over {len(config.schedule)} planted phases "
        f"(amplitude bound {amplitude_bound:.3f} Å)"
    )
    return SampleTrajectory(
        trajectory=trajectory,
        phases=config.schedule,
        amplitude_bound=amplitude_bound,
        equilibration_frames=config.equilibration_frames,
    )
