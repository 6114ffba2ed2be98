import logging
import math
from itertools import product
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist
from scipy.spatial.transform import Rotation

from posner.core.errors import CensusShortfallError, GeometryError, PhosphateGroupError, S6CollisionError, UsageError
from posner.models.enums import GenerationMode, TemplateGroup
from posner.schemas.generation import GenerationCensus, GenerationScheme, PhosphateTemplate, S6Params
from posner.schemas.structure import Structure
from posner.services import geometry_service

logger = logging.getLogger(__name__)

DEFAULT_DIAGONAL = 9.0
S6_COLLISION_DISTANCE = 0.3
ORIENTATION_DECIMALS = 6
STOICHIOMETRY = {"Ca": 9, "P": 6, "O": 24}

# counts the default scheme must reach
MIN_ROTATED_UNIQUE = 2800
MIN_SCALED_TOTAL = 10000

PhosphateGroup = tuple[int, tuple[int, int, int, int]]


def _assemble(calcium: Sequence, phosphorus: Sequence, oxygen_offsets: Sequence, label: str) -> Structure:
    """Ca block, then P block, then each P's four O in P order."""
    calcium = np.asarray(calcium, dtype=float).reshape(-1, 3)
    phosphorus = np.asarray(phosphorus, dtype=float).reshape(-1, 3)
    oxygen = (phosphorus[:, None, :] + np.asarray(oxygen_offsets, dtype=float)).reshape(-1, 3)
    symbols = ("Ca",) * len(calcium) + ("P",) * len(phosphorus) + ("O",) * len(oxygen)
    return Structure(symbols=symbols, positions=np.vstack([calcium, phosphorus, oxygen]), label=label)


# Cube seed and phosphate bookkeeping

def build_cube_seed(diagonal: float = DEFAULT_DIAGONAL, template: Optional[PhosphateTemplate] = None) -> Structure:
    """
    Ca9(PO4)6 seed: Ca on the body centre (atom 0) and the 8 corners of a cube
    with the given body diagonal, P on the 6 face centres, tetrahedra axis-aligned.
    """
    if diagonal <= 0:
        raise UsageError(f"cube diagonal must be positive, got {diagonal}")
    template = template or PhosphateTemplate()
    half = diagonal / math.sqrt(3.0) / 2.0

    corners = [(sx * half, sy * half, sz * half) for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)]
    calcium = [(0.0, 0.0, 0.0)] + corners
    faces = half * np.vstack([np.eye(3), -np.eye(3)])
    offsets = np.broadcast_to(template.offsets(), (6, 4, 3))
    return _assemble(calcium, faces, offsets, label=f"cube-seed d={diagonal:g}")


def identify_phosphate_groups(s: Structure) -> tuple[PhosphateGroup, ...]:
    """Each P with its four nearest O; an O claimed by two P is an error."""
    p_index = [i for i, symbol in enumerate(s.symbols) if symbol == "P"]
    o_index = np.array([i for i, symbol in enumerate(s.symbols) if symbol == "O"])
    if not p_index:
        raise PhosphateGroupError("structure has no phosphorus atoms")
    if len(o_index) < 4 * len(p_index):
        raise PhosphateGroupError(f"{len(p_index)} P atoms need {4 * len(p_index)} O atoms, found {len(o_index)}")

    distances = cdist(s.positions[p_index], s.positions[o_index])
    groups = []
    claimed: dict[int, int] = {}
    for row, p in enumerate(p_index):
        nearest = tuple(int(o) for o in o_index[np.argsort(distances[row], kind="stable")[:4]])
        for o in nearest:
            if o in claimed:
                raise PhosphateGroupError(f"O atom {o} is among the four nearest of both P {claimed[o]} and P {p}")
            claimed[o] = p
        groups.append((p, tuple(sorted(nearest))))
    return tuple(groups)


def assembled_phosphate_groups(s: Structure) -> tuple[PhosphateGroup, ...]:
    """PO4 groups of a structure laid out Ca block, P block, then four O per P in P order."""
    p_index = [i for i, symbol in enumerate(s.symbols) if symbol == "P"]
    first_oxygen = s.symbols.index("O")
    return tuple(
        (p, tuple(range(first_oxygen + 4 * k, first_oxygen + 4 * k + 4))) for k, p in enumerate(p_index)
    )


def relabel_rmsd(a: Structure, b: Structure, groups: Optional[Sequence[PhosphateGroup]] = None) -> float:
    """RMSD after the best relabelling of O atoms inside each PO4 group."""
    geometry_service.check_compatible(a, b)
    groups = groups if groups is not None else identify_phosphate_groups(a)
    order = np.arange(a.n_atoms)
    for _, oxygens in groups:
        oxygens = np.array(oxygens)
        cost = cdist(a.positions[oxygens], b.positions[oxygens], "sqeuclidean")
        rows, cols = linear_sum_assignment(cost)
        order[oxygens[rows]] = oxygens[cols]
    diff = a.positions - b.positions[order]
    return float(np.sqrt(np.einsum("ij,ij->", diff, diff) / a.n_atoms))


# Rotational enumeration

def rotation_grid(step_deg: float) -> np.ndarray:
    """Every xyz Euler triple on a `step_deg` lattice, identity first, as (M, 3, 3)."""
    steps = int(round(360.0 / step_deg))
    angles = np.array(list(product(range(steps), repeat=3)), dtype=float) * step_deg
    return Rotation.from_euler("xyz", angles, degrees=True).as_matrix()


def _orientation_key(offsets: np.ndarray) -> tuple:
    """Label-free fingerprint of a tetrahedron's O offsets."""
    rounded = np.round(offsets, ORIENTATION_DECIMALS) + 0.0
    return tuple(sorted(map(tuple, rounded.tolist())))


class _Enumerator:
    """Accumulates unique rotated structures and their keys in generation order."""

    def __init__(self, seed: Structure, groups: Sequence[PhosphateGroup]):
        self.seed = seed
        self.groups = groups
        self.centers = np.array([seed.positions[p] for p, _ in groups])
        self.offsets = np.array([seed.positions[list(o)] for _, o in groups]) - self.centers[:, None, :]
        self.seen: set[tuple] = set()
        self.structures: list[Structure] = []
        self.candidates = 0

    def unique_orientations(self, group: int, grid: np.ndarray) -> list[np.ndarray]:
        rotated = np.einsum("mij,kj->mki", grid, self.offsets[group])
        found: dict[tuple, np.ndarray] = {}
        for offsets in rotated:
            found.setdefault(_orientation_key(offsets), offsets)
        return list(found.values())

    def offer(self, offsets: np.ndarray) -> bool:
        self.candidates += 1
        key = tuple(_orientation_key(group_offsets) for group_offsets in offsets)
        if key in self.seen:
            return False
        self.seen.add(key)
        positions = self.seed.positions.copy()
        for group, (_, oxygens) in enumerate(self.groups):
            positions[list(oxygens)] = self.centers[group] + offsets[group]
        self.structures.append(self.seed.with_positions(positions, label=f"rotated-{len(self.structures)}"))
        return True


def _selected_groups(scheme: GenerationScheme, n_groups: int) -> list[int]:
    if scheme.groups is None:
        return list(range(n_groups))
    bad = [g for g in scheme.groups if g >= n_groups]
    if bad:
        raise UsageError(f"phosphate groups {bad} do not exist; the seed has {n_groups}")
    return sorted(set(scheme.groups))


def _product_offsets(base: np.ndarray, selected: list[int], choices: list[list[np.ndarray]]) -> Iterator[np.ndarray]:
    for combination in product(*choices):
        offsets = base.copy()
        for group, group_offsets in zip(selected, combination):
            offsets[group] = group_offsets
        yield offsets


def _enumerate(seed: Structure, scheme: GenerationScheme) -> tuple[_Enumerator, dict[str, int]]:
    enumerator = _Enumerator(seed, identify_phosphate_groups(seed))
    grid = rotation_grid(scheme.rotation_step)
    selected = _selected_groups(scheme, len(enumerator.groups))
    base = enumerator.offsets
    per_mode: dict[str, int] = {}

    for mode in scheme.modes:
        before = len(enumerator.structures)
        if mode == GenerationMode.UNIFORM:
            for rotation in grid:
                enumerator.offer(base @ rotation.T)
        elif mode == GenerationMode.PER_GROUP:
            for group in selected:
                for rotation in grid:
                    offsets = base.copy()
                    offsets[group] = base[group] @ rotation.T
                    enumerator.offer(offsets)
        elif mode == GenerationMode.FULL_PRODUCT:
            choices = [enumerator.unique_orientations(group, grid) for group in selected]
            added = 0
            for offsets in _product_offsets(base, selected, choices):
                if added >= scheme.product_cap:
                    break
                added += enumerator.offer(offsets)
        per_mode[mode.value] = len(enumerator.structures) - before
        logger.debug(f"{mode.value}: {per_mode[mode.value]} new unique structures")
    return enumerator, per_mode


def enumerate_rotated(seed: Structure, scheme: Optional[GenerationScheme] = None) -> list[Structure]:
    """
    Rigidly rotate PO4 groups about their P on the scheme's Euler lattice and
    keep one structure per distinct arrangement (O labels within a group do
    not count). The unrotated seed comes first.
    """
    enumerator, _ = _enumerate(seed, scheme or GenerationScheme())
    return enumerator.structures


def scale_set(
    structures: Sequence[Structure],
    factors: Iterable[float],
    center_index: Optional[int] = None,
) -> list[Structure]:
    """
    Scale Ca and P positions radially about the central Ca; each PO4 moves
    rigidly with its P. Output is structure-major.
    """
    factors = list(factors)
    if any(f <= 0 for f in factors):
        raise UsageError(f"scale factors must be positive, got {factors}")

    scaled: list[Structure] = []
    for s in structures:
        groups = identify_phosphate_groups(s)
        center = s.positions[_central_calcium(s) if center_index is None else center_index]
        for factor in factors:
            positions = s.positions.copy()
            for index, symbol in enumerate(s.symbols):
                if symbol != "O":
                    positions[index] = center + factor * (s.positions[index] - center)
            for p, oxygens in groups:
                shift = positions[p] - s.positions[p]
                positions[list(oxygens)] = s.positions[list(oxygens)] + shift
            scaled.append(s.with_positions(positions, label=f"{s.label or 'structure'} x{factor:g}"))
    return scaled


def check_census(
    census: GenerationCensus,
    min_rotated: int = MIN_ROTATED_UNIQUE,
    min_scaled: int = MIN_SCALED_TOTAL,
) -> None:
    if census.rotated_unique < min_rotated or census.scaled_total < min_scaled:
        raise CensusShortfallError(
            f"generation produced {census.rotated_unique} rotated / {census.scaled_total} scaled structures; "
            f"expected at least {min_rotated} / {min_scaled}"
        )


def _central_calcium(s: Structure) -> int:
    calcium = [i for i, symbol in enumerate(s.symbols) if symbol == "Ca"]
    if not calcium:
        raise GeometryError("structure has no Ca atom to scale about")
    distances = np.linalg.norm(s.positions[calcium] - geometry_service.centroid(s), axis=1)
    return calcium[int(np.argmin(distances))]


def generate(
    diagonal: float = DEFAULT_DIAGONAL,
    scheme: Optional[GenerationScheme] = None,
    template: Optional[PhosphateTemplate] = None,
) -> tuple[list[Structure], list[Structure], GenerationCensus]:
    """Cube seed -> rotated set -> scaled set, with per-stage counts."""
    scheme = scheme or GenerationScheme()
    seed = build_cube_seed(diagonal, template)
    enumerator, per_mode = _enumerate(seed, scheme)
    rotated = enumerator.structures
    scaled = scale_set(rotated, scheme.scale_factors, center_index=0)
    census = GenerationCensus(
        diagonal=diagonal,
        rotation_step=scheme.rotation_step,
        candidates=enumerator.candidates,
        per_mode=per_mode,
        rotated_unique=len(rotated),
        scale_factors=list(scheme.scale_factors),
        scaled_total=len(scaled),
        stoichiometry=seed.census(),
    )
    logger.info(
        f"Generated {census.rotated_unique} unique rotated structures from {census.candidates} candidates; "
        f"{census.scaled_total} after scaling"
    )
    return rotated, scaled, census


# Symmetric templates

def close_group(generators: Iterable[np.ndarray]) -> list[np.ndarray]:
    """All products of the generators, identity first."""
    elements = [np.eye(3)]
    frontier = [np.asarray(g, dtype=float) for g in generators]
    while frontier:
        candidate = frontier.pop()
        if any(np.allclose(candidate, e, atol=1e-9) for e in elements):
            continue
        elements.append(candidate)
        frontier.extend(candidate @ e for e in list(elements))
        frontier.extend(e @ candidate for e in list(elements))
    return elements


def _orbit(operations: Sequence[np.ndarray], point) -> list[np.ndarray]:
    images: list[np.ndarray] = []
    for op in operations:
        image = op @ np.asarray(point, dtype=float)
        if not any(np.linalg.norm(image - other) < 1e-6 for other in images):
            images.append(image)
    return images


def orbit_structure(
    operations: Sequence[np.ndarray],
    calcium_sites: Sequence,
    phosphate_sites: Sequence[tuple[Sequence[float], np.ndarray]],
    label: str,
) -> Structure:
    """
    Replicate Ca sites and rigid PO4 units (P position, O offsets) over a point
    group. Improper operations carry the tetrahedron through the full isometry.
    """
    calcium = [image for site in calcium_sites for image in _orbit(operations, site)]
    phosphorus, offsets = [], []
    for p_position, o_offsets in phosphate_sites:
        for op in operations:
            image = op @ np.asarray(p_position, dtype=float)
            if any(np.linalg.norm(image - other) < 1e-6 for other in phosphorus):
                continue
            phosphorus.append(image)
            offsets.append(np.asarray(o_offsets) @ op.T)
    s = _assemble(calcium, phosphorus, offsets, label=label)
    if s.census() != STOICHIOMETRY:
        raise GeometryError(f"{label} orbit produced {s.census()}, expected {STOICHIOMETRY}")
    return s


def _s6_operations() -> list[np.ndarray]:
    return close_group([geometry_service.improper_rotation_matrix((0.0, 0.0, 1.0), 6)])


def _check_collisions(s: Structure, limit: float) -> None:
    closest = float(pdist(s.positions).min())
    if closest < limit:
        raise S6CollisionError(f"two generated atoms are {closest:.3f} Å apart (limit {limit} Å)")


def build_s6(params: Optional[S6Params] = None, template: Optional[PhosphateTemplate] = None) -> Structure:
    """Exactly S6 Ca9(PO4)6 about z: central Ca at the origin, axial pair at ±z_axial."""
    params = params or S6Params()
    template = template or PhosphateTemplate()
    offsets = Rotation.from_euler("xyz", params.orient).apply(template.offsets())
    s = orbit_structure(
        _s6_operations(),
        calcium_sites=[(0.0, 0.0, 0.0), (0.0, 0.0, params.z_axial), params.ca_orbit],
        phosphate_sites=[(params.p_orbit, offsets)],
        label="S6",
    )
    _check_collisions(s, S6_COLLISION_DISTANCE)
    return s


def _mirror_x_tetrahedron(template: PhosphateTemplate, twist_deg: float) -> np.ndarray:
    """Tetrahedron whose own mirror plane is x = 0, twisted about x."""
    rotation = Rotation.from_euler("z", 45.0, degrees=True)
    return (Rotation.from_euler("x", twist_deg, degrees=True) * rotation).apply(template.offsets())


def build_template(group: TemplateGroup, template: Optional[PhosphateTemplate] = None) -> Structure:
    """Exact-symmetry Ca9(PO4)6 structure for one of the hand-built groups."""
    template = template or PhosphateTemplate()
    z_axis = (0.0, 0.0, 1.0)
    c3 = geometry_service.proper_rotation_matrix(z_axis, 3)
    mirror_x = geometry_service.mirror_matrix((1.0, 0.0, 0.0))

    if group == TemplateGroup.S6:
        return build_s6(S6Params(), template)

    if group == TemplateGroup.TH:
        cube = DEFAULT_DIAGONAL / math.sqrt(3.0) / 2.0
        cyclic = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        operations = close_group([cyclic, geometry_service.proper_rotation_matrix(z_axis, 2), -np.eye(3)])
        # a tetrahedron with mirror planes xy and xz and a C2 along x
        offsets = Rotation.from_euler("x", 45.0, degrees=True).apply(template.offsets())
        return orbit_structure(
            operations,
            calcium_sites=[(0.0, 0.0, 0.0), (cube, cube, cube)],
            phosphate_sites=[((cube, 0.0, 0.0), offsets)],
            label="Th",
        )

    if group == TemplateGroup.D3D:
        c2_x = geometry_service.proper_rotation_matrix((1.0, 0.0, 0.0), 2)
        operations = close_group([c3, c2_x, -np.eye(3)])
        return orbit_structure(
            operations,
            calcium_sites=[(0.0, 0.0, 0.0), (0.0, 0.0, 3.75), (3.4, 0.0, 0.0)],
            phosphate_sites=[((0.0, 2.75, 2.1), _mirror_x_tetrahedron(template, 20.0))],
            label="D3d",
        )

    if group == TemplateGroup.C3V:
        operations = close_group([c3, mirror_x])
        azimuth = math.radians(10.0)
        return orbit_structure(
            operations,
            calcium_sites=[
                (0.0, 0.0, 0.0),
                (0.0, 0.0, 3.75),
                (0.0, 0.0, -3.5),
                (3.3 * math.cos(azimuth), 3.3 * math.sin(azimuth), 0.6),
            ],
            phosphate_sites=[
                ((0.0, 2.75, 2.1), _mirror_x_tetrahedron(template, 20.0)),
                ((0.0, -2.75, -2.1), _mirror_x_tetrahedron(template, -35.0)),
            ],
            label="C3v",
        )

    raise UsageError(f"no template for group {group}")


# Perturbation and random starts

def perturb(s: Structure, magnitude: float, seed: int = 0) -> Structure:
    """Uniform noise in [−magnitude, magnitude] on every coordinate."""
    if magnitude < 0:
        raise UsageError(f"perturbation magnitude must be non-negative, got {magnitude}")
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-magnitude, magnitude, size=s.positions.shape)
    return s.with_positions(s.positions + noise)


def random_s6_starts(
    n: int,
    seed: int = 0,
    length_spread: float = 0.3,
    angle_spread: float = 0.3,
    center: Optional[S6Params] = None,
) -> list[S6Params]:
    """The centre parameters followed by n − 1 uniform draws around them."""
    if n < 1:
        raise UsageError(f"need at least one start, got {n}")
    center = center or S6Params()
    rng = np.random.default_rng(seed)
    spread = np.array([length_spread] * 7 + [angle_spread] * 3)
    starts = [center]
    base = center.to_vector()
    while len(starts) < n:
        vector = base + rng.uniform(-1.0, 1.0, size=10) * spread
        vector[0] = abs(vector[0])
        starts.append(S6Params.from_vector(vector))
    return starts
