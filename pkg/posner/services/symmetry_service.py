import logging
import math
import re
from itertools import combinations
from typing import Iterable, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation

from posner.core.config import settings
from posner.core.errors import GeometryError, UsageError
from posner.models.enums import ElementKind
from posner.schemas.structure import Structure
from posner.schemas.symmetry import PointGroup, SymmetryElement
from posner.services import geometry_service
from posner.services.batch import ordered_map

logger = logging.getLogger(__name__)

LINEAR_RATIO = 1e-4
CANDIDATE_MERGE_DEG = 0.05
LOWER_BOUND_CHUNK = 4_000_000

_FIXED_ORDERS = {
    "C1": 1, "Cs": 2, "Ci": 2,
    "T": 12, "Th": 24, "Td": 24,
    "O": 24, "Oh": 48,
    "I": 60, "Ih": 120,
    "C∞v": math.inf, "D∞h": math.inf, "Kh": math.inf,
}
_AXIAL_LABEL = re.compile(r"^(C|S|D)(\d+)(v|h|d)?$")
_KIND_RANK = {
    ElementKind.IDENTITY: 0,
    ElementKind.INVERSION: 1,
    ElementKind.PROPER_ROTATION: 2,
    ElementKind.IMPROPER_ROTATION: 3,
    ElementKind.MIRROR: 4,
}


def group_order(label: str) -> float:
    if label in _FIXED_ORDERS:
        return _FIXED_ORDERS[label]
    match = _AXIAL_LABEL.match(label)
    if not match:
        raise UsageError(f"unknown Schoenflies label '{label}'")
    family, n, suffix = match.group(1), int(match.group(2)), match.group(3)
    if family == "S":
        if suffix is not None:
            raise UsageError(f"unknown Schoenflies label '{label}'")
        return n
    if family == "C":
        return n if suffix is None else 2 * n
    return 2 * n if suffix is None else 4 * n


def molecular_radius(s: Structure) -> float:
    return geometry_service.molecular_radius(s)


def element_matrix(e: SymmetryElement) -> np.ndarray:
    if e.kind == ElementKind.IDENTITY:
        return np.eye(3)
    if e.kind == ElementKind.INVERSION:
        return -np.eye(3)
    if e.kind == ElementKind.PROPER_ROTATION:
        return geometry_service.proper_rotation_matrix(e.axis, e.order)
    if e.kind == ElementKind.IMPROPER_ROTATION:
        return geometry_service.improper_rotation_matrix(e.axis, e.order)
    return geometry_service.mirror_matrix(e.axis)


def _species_blocks(symbols: tuple[str, ...]) -> list[np.ndarray]:
    blocks: dict[str, list[int]] = {}
    for index, symbol in enumerate(symbols):
        blocks.setdefault(symbol, []).append(index)
    return sorted((np.array(idx) for idx in blocks.values()), key=len)


def _perfect_matching(mask: np.ndarray) -> Optional[np.ndarray]:
    matching = maximum_bipartite_matching(csr_matrix(mask.astype(np.int8)), perm_type="column")
    if np.any(matching < 0):
        return None
    return matching


def _bottleneck_assignment(images: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Smallest d such that every image can be paired with a distinct target no
    further than d away, plus that pairing (image i -> target match[i]).
    """
    dist = cdist(images, targets)
    if dist.shape[0] == 1:
        return float(dist[0, 0]), np.zeros(1, dtype=int)

    lower = max(dist.min(axis=1).max(), dist.min(axis=0).max())
    values = np.unique(dist[dist >= lower])
    lo, hi = 0, len(values) - 1
    found: dict[int, np.ndarray] = {}
    while lo < hi:
        mid = (lo + hi) // 2
        matching = _perfect_matching(dist <= values[mid])
        if matching is None:
            lo = mid + 1
        else:
            found[mid] = matching
            hi = mid
    matching = found.get(lo)
    if matching is None:
        matching = _perfect_matching(dist <= values[lo])
    return float(values[lo]), matching


def _centered(s: Structure) -> np.ndarray:
    return s.positions - geometry_service.centroid(s)


def _bottleneck(x: np.ndarray, blocks: list[np.ndarray], matrix: np.ndarray) -> float:
    images = x @ matrix.T
    return max(_bottleneck_assignment(images[idx], x[idx])[0] for idx in blocks)


def score_element(s: Structure, e: SymmetryElement) -> float:
    """Worst matched displacement under `e`, divided by the molecular radius."""
    radius = molecular_radius(s)
    if radius <= 0.0:
        raise GeometryError("molecular radius is zero; scores are undefined")
    x = _centered(s)
    return _bottleneck(x, _species_blocks(s.symbols), element_matrix(e)) / radius


def equivalence_permutation(s: Structure, e: SymmetryElement) -> list[int]:
    """perm[i] is the atom the image of atom i lands on under the best matching."""
    x = _centered(s)
    images = x @ element_matrix(e).T
    perm = np.arange(s.n_atoms)
    for idx in _species_blocks(s.symbols):
        _, matching = _bottleneck_assignment(images[idx], x[idx])
        perm[idx] = idx[matching]
    return perm.tolist()


def _canonical_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip each vector so its first non-negligible component is positive."""
    significant = np.abs(vectors) > 1e-8
    first = np.argmax(significant, axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), first])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def _unique_directions(vectors: np.ndarray, merge_deg: float) -> np.ndarray:
    if len(vectors) == 0:
        return np.zeros((0, 3))
    cos_limit = math.cos(math.radians(merge_deg))
    kept = np.empty_like(vectors)
    count = 0
    for vector in vectors:
        if count and np.max(np.abs(kept[:count] @ vector)) >= cos_limit:
            continue
        kept[count] = vector
        count += 1
    return kept[:count].copy()


def _normalized(vectors: np.ndarray, floor: float) -> np.ndarray:
    if len(vectors) == 0:
        return np.zeros((0, 3))
    norms = np.linalg.norm(vectors, axis=1)
    keep = norms > floor
    return vectors[keep] / norms[keep, None]


def candidate_axes(s: Structure, tol: float) -> np.ndarray:
    """
    Directions worth testing: principal axes, atom directions, same-species
    pair midpoints and differences and same-species triple normals. Pairs and
    triples whose centroid distances differ by more than tol·radius can never
    be images of each other and are skipped.
    """
    x = _centered(s)
    radius = molecular_radius(s)
    band = tol * radius
    floor = 1e-6 * radius
    sources: list[np.ndarray] = []

    if s.n_atoms >= 2:
        inertia = geometry_service.inertia_tensor(s)
        # axes spanning a degenerate moment pair are arbitrary
        paired = {k for pair in inertia.degenerate_pairs for k in pair} if inertia.degenerate else set()
        sources.append(inertia.axes[[k for k in range(3) if k not in paired]])
    sources.append(_normalized(x, floor))

    norms = np.linalg.norm(x, axis=1)
    for idx in _species_blocks(s.symbols):
        if len(idx) < 2:
            continue
        pairs = np.array(list(combinations(idx, 2)))
        close = np.abs(norms[pairs[:, 0]] - norms[pairs[:, 1]]) <= band
        pairs = pairs[close]
        if len(pairs):
            sources.append(_normalized(0.5 * (x[pairs[:, 0]] + x[pairs[:, 1]]), floor))
            sources.append(_normalized(x[pairs[:, 0]] - x[pairs[:, 1]], floor))
        if len(idx) < 3:
            continue
        triples = np.array(list(combinations(idx, 3)))
        spread = norms[triples].max(axis=1) - norms[triples].min(axis=1)
        triples = triples[spread <= band]
        if len(triples):
            a, b, c = x[triples[:, 0]], x[triples[:, 1]], x[triples[:, 2]]
            sources.append(_normalized(np.cross(b - a, c - a), floor * floor))

    stacked = np.concatenate([src for src in sources if len(src)], axis=0)
    return _unique_directions(_canonical_sign(stacked), CANDIDATE_MERGE_DEG)


def _operation_table(axes: np.ndarray, n_max: int):
    """Every (kind, axis index, order) to try, with its 3x3 matrix."""
    kinds: list[ElementKind] = [ElementKind.INVERSION]
    axis_index: list[int] = [-1]
    orders: list[int] = [2]
    matrices = [-np.eye(3)[None]]

    count = len(axes)
    if count:
        mirrors = np.eye(3)[None] - 2.0 * np.einsum("ka,kb->kab", axes, axes)
        for n in range(2, n_max + 1):
            rotations = Rotation.from_rotvec(axes * (2.0 * math.pi / n)).as_matrix()
            matrices.append(rotations)
            kinds.extend([ElementKind.PROPER_ROTATION] * count)
            axis_index.extend(range(count))
            orders.extend([n] * count)
        for n in range(3, 2 * n_max + 1):
            rotations = Rotation.from_rotvec(axes * (2.0 * math.pi / n)).as_matrix()
            matrices.append(np.einsum("kab,kbc->kac", mirrors, rotations))
            kinds.extend([ElementKind.IMPROPER_ROTATION] * count)
            axis_index.extend(range(count))
            orders.extend([n] * count)
        matrices.append(mirrors)
        kinds.extend([ElementKind.MIRROR] * count)
        axis_index.extend(range(count))
        orders.extend([1] * count)

    return kinds, np.array(axis_index), np.array(orders), np.concatenate(matrices, axis=0)


def _lower_bounds(x: np.ndarray, blocks: list[np.ndarray], matrices: np.ndarray, limit: float) -> np.ndarray:
    """
    Per-operation lower bound on the bottleneck: no perfect matching can beat
    the worst nearest-neighbour distance. Species are processed smallest first
    and operations already above `limit` are dropped from later passes.
    """
    bounds = np.zeros(len(matrices))
    alive = np.arange(len(matrices))
    for idx in blocks:
        if len(alive) == 0:
            break
        targets = x[idx]
        m = len(idx)
        chunk = max(1, LOWER_BOUND_CHUNK // (m * m * 3))
        for start in range(0, len(alive), chunk):
            ops = alive[start:start + chunk]
            images = np.einsum("kab,mb->kma", matrices[ops], targets)
            diff = images[:, :, None, :] - targets[None, None, :, :]
            d2 = np.einsum("kijc,kijc->kij", diff, diff)
            worst = np.maximum(d2.min(axis=2).max(axis=1), d2.min(axis=1).max(axis=1))
            bounds[ops] = np.maximum(bounds[ops], np.sqrt(worst))
        alive = alive[bounds[alive] <= limit]
    return bounds


def merge_elements(elements: Iterable[SymmetryElement], merge_deg: float) -> list[SymmetryElement]:
    """Collapse same-kind, same-order elements whose axes lie within `merge_deg`, keeping the lower score."""
    cos_limit = math.cos(math.radians(merge_deg))
    kept: list[SymmetryElement] = []
    for element in sorted(elements, key=lambda e: (_KIND_RANK[e.kind], -e.order, e.score)):
        duplicate = False
        for other in kept:
            if other.kind != element.kind or other.order != element.order:
                continue
            if element.axis is None or abs(float(np.dot(other.axis, element.axis))) >= cos_limit:
                duplicate = True
                break
        if not duplicate:
            kept.append(element)
    return sorted(kept, key=_element_sort_key)


def _element_sort_key(e: SymmetryElement):
    return (_KIND_RANK[e.kind], -e.order, tuple(-c for c in (e.axis or (0.0, 0.0, 0.0))))


def find_elements(
    s: Structure,
    tol: float,
    n_max: Optional[int] = None,
    merge_deg: Optional[float] = None,
) -> list[SymmetryElement]:
    """Every element scoring <= tol, deduplicated by axis and order. Identity is always present."""
    if tol <= 0:
        raise UsageError(f"tolerance must be positive, got {tol}")
    n_max = n_max or settings.POSNER_MAX_ROTATION_ORDER
    merge_deg = merge_deg if merge_deg is not None else settings.POSNER_AXIS_MERGE_DEG

    accepted = [SymmetryElement.identity()]
    radius = molecular_radius(s)
    if s.n_atoms == 1 or radius <= 0.0:
        return accepted

    x = _centered(s)
    blocks = _species_blocks(s.symbols)
    axes = candidate_axes(s, tol)
    kinds, axis_index, orders, matrices = _operation_table(axes, n_max)

    limit = tol * radius
    bounds = _lower_bounds(x, blocks, matrices, limit)
    survivors = np.flatnonzero(bounds <= limit)
    logger.debug(
        f"{len(axes)} candidate axes, {len(matrices)} operations, {len(survivors)} pass the lower bound"
    )

    for op in survivors:
        score = _bottleneck(x, blocks, matrices[op]) / radius
        if score > tol:
            continue
        kind = kinds[op]
        if kind == ElementKind.INVERSION:
            accepted.append(SymmetryElement.inversion(score))
        elif kind == ElementKind.MIRROR:
            accepted.append(SymmetryElement.mirror(axes[axis_index[op]], score))
        elif kind == ElementKind.PROPER_ROTATION:
            accepted.append(SymmetryElement.rotation(axes[axis_index[op]], int(orders[op]), score))
        else:
            accepted.append(SymmetryElement.improper(axes[axis_index[op]], int(orders[op]), score))

    return merge_elements(accepted, merge_deg)


def _covers(e: SymmetryElement, improper: bool, angle: float, angle_tol: float) -> bool:
    """Whether some power of `e` rotates by `angle` (proper or improper part as requested)."""
    if e.kind not in (ElementKind.PROPER_ROTATION, ElementKind.IMPROPER_ROTATION):
        return False
    if e.kind == ElementKind.PROPER_ROTATION and improper:
        return False
    step = 2.0 * math.pi / e.order
    for k in range(e.order + 1):
        # even-order S_n: odd powers are improper, even powers proper
        if e.kind == ElementKind.IMPROPER_ROTATION and e.order % 2 == 0 and (k % 2 == 1) != improper:
            continue
        if abs(angle - k * step) <= angle_tol:
            return True
    return False


def _present(
    elements: list[SymmetryElement],
    improper: bool,
    axis: Optional[np.ndarray],
    angle: float,
    cos_parallel: float,
    angle_tol: float,
) -> bool:
    """
    Whether the operation (improper: mirror through the plane normal to `axis`
    after rotating by `angle`) is generated by a single accepted element or a
    mirror/inversion companion of one.
    """
    if not improper and angle <= angle_tol:
        return True
    if improper and angle >= math.pi - angle_tol:
        return any(e.kind == ElementKind.INVERSION for e in elements)

    on_axis = [e for e in elements if e.axis is not None and abs(float(np.dot(e.axis, axis))) >= cos_parallel]
    if improper and angle <= angle_tol:
        return any(e.kind == ElementKind.MIRROR for e in on_axis)
    if any(_covers(e, improper, angle, angle_tol) for e in on_axis):
        return True
    if improper:
        if any(e.kind == ElementKind.MIRROR for e in on_axis) and any(_covers(e, False, angle, angle_tol) for e in on_axis):
            return True
        if any(e.kind == ElementKind.INVERSION for e in elements):
            return any(_covers(e, False, math.pi - angle, angle_tol) for e in on_axis)
    return False


def is_closed(elements: list[SymmetryElement], relation_deg: Optional[float] = None) -> bool:
    """True when every pairwise product of the elements is itself accounted for by the set."""
    relation_deg = relation_deg if relation_deg is not None else settings.POSNER_AXIS_RELATION_DEG
    cos_parallel = math.cos(math.radians(relation_deg))
    angle_tol = math.radians(relation_deg)

    active = [e for e in elements if e.kind != ElementKind.IDENTITY]
    if len(active) < 2:
        return True
    matrices = np.stack([element_matrix(e) for e in active])
    products = np.einsum("aij,bjk->abik", matrices, matrices).reshape(-1, 3, 3)
    improper = np.linalg.det(products) < 0
    rotvecs = Rotation.from_matrix(np.where(improper[:, None, None], -products, products)).as_rotvec()
    angles = np.linalg.norm(rotvecs, axis=1)

    for index in range(len(products)):
        angle = float(angles[index])
        axis = rotvecs[index] / angle if angle > 1e-9 else None
        if improper[index]:
            # -P rotates by pi - phi, where phi is the rotation part of the improper operation
            angle = math.pi - angle
            if axis is None:
                angle = math.pi
        if not _present(active, bool(improper[index]), axis, angle, cos_parallel, angle_tol):
            return False
    return True


def consistent_elements(
    elements: list[SymmetryElement],
    relation_deg: Optional[float] = None,
) -> list[SymmetryElement]:
    """
    Largest score-threshold subset of `elements` that is closed under
    composition. Elements are only ever dropped worst-score first, so the
    result grows monotonically with the detection tolerance.
    """
    thresholds = sorted({e.score for e in elements if e.kind != ElementKind.IDENTITY}, reverse=True)
    for threshold in thresholds:
        subset = [e for e in elements if e.score <= threshold]
        if is_closed(subset, relation_deg):
            if len(subset) < len(elements):
                logger.debug(
                    f"Dropped {len(elements) - len(subset)} elements scoring above {threshold:.4f} "
                    f"to keep the element set closed"
                )
            return subset
    return [e for e in elements if e.kind == ElementKind.IDENTITY]


def _is_linear(s: Structure) -> bool:
    moments = geometry_service.inertia_tensor(s).moments
    return moments[0] > 0 and moments[-1] < LINEAR_RATIO * moments[0]


def _distinct_rotation_axes(elements: list[SymmetryElement], cos_parallel: float) -> list[tuple[np.ndarray, int]]:
    axes: list[tuple[np.ndarray, int]] = []
    for e in elements:
        if e.kind != ElementKind.PROPER_ROTATION:
            continue
        vector = np.asarray(e.axis)
        for index, (axis, order) in enumerate(axes):
            if abs(float(axis @ vector)) >= cos_parallel:
                axes[index] = (axis, max(order, e.order))
                break
        else:
            axes.append((vector, e.order))
    return axes


def assemble_point_group(
    elements: list[SymmetryElement],
    tol: float,
    relation_deg: Optional[float] = None,
) -> PointGroup:
    """
    Schoenflies label from an element set. Each rotation axis is tried as the
    principal axis and the interpretation with the largest group order wins
    (ties: higher n, then the lexicographically larger axis).
    """
    relation_deg = relation_deg if relation_deg is not None else settings.POSNER_AXIS_RELATION_DEG
    cos_parallel = math.cos(math.radians(relation_deg))
    sin_perpendicular = math.sin(math.radians(relation_deg))

    mirrors = [np.asarray(e.axis) for e in elements if e.kind == ElementKind.MIRROR]
    impropers = [(np.asarray(e.axis), e.order) for e in elements if e.kind == ElementKind.IMPROPER_ROTATION]
    two_fold = [np.asarray(e.axis) for e in elements if e.kind == ElementKind.PROPER_ROTATION and e.order == 2]
    has_inversion = any(e.kind == ElementKind.INVERSION for e in elements)
    axes = _distinct_rotation_axes(elements, cos_parallel)

    def parallel(a, b):
        return abs(float(a @ b)) >= cos_parallel

    def perpendicular(a, b):
        return abs(float(a @ b)) <= sin_perpendicular

    interpretations: list[tuple[float, int, tuple, str, Optional[np.ndarray]]] = [(1, 0, (), "C1", None)]
    if mirrors:
        interpretations.append((2, 1, (), "Cs", None))
    if has_inversion:
        interpretations.append((2, 0, (), "Ci", None))

    high = [(axis, n) for axis, n in axes if n >= 3]
    if len(high) >= 2:
        top = max(n for _, n in high)
        if top >= 5:
            label = "Ih" if has_inversion else "I"
        elif top == 4:
            label = "Oh" if has_inversion else "O"
        elif has_inversion:
            label = "Th"
        elif mirrors:
            label = "Td"
        else:
            label = "T"
        interpretations.append((group_order(label), top, (), label, None))

    for axis, n in axes:
        sigma_h = any(parallel(axis, normal) for normal in mirrors)
        sigma_v = any(perpendicular(axis, normal) for normal in mirrors)
        if any(perpendicular(axis, other) for other in two_fold):
            if sigma_h:
                label = f"D{n}h"
            elif sigma_v:
                label = f"D{n}d"
            else:
                label = f"D{n}"
        elif sigma_h:
            label = f"C{n}h"
        elif sigma_v:
            label = f"C{n}v"
        elif any(order == 2 * n and parallel(axis, vector) for vector, order in impropers):
            label = f"S{2 * n}"
        else:
            label = f"C{n}"
        interpretations.append((group_order(label), n, tuple(axis.tolist()), label, axis))

    order, _, _, label, axis = max(interpretations, key=lambda item: item[:3])
    return PointGroup(
        schoenflies=label,
        order=order,
        elements=tuple(elements),
        tolerance=tol,
        principal_axis=None if axis is None else tuple(float(c) for c in axis),
    )


def detect_point_group(
    s: Structure,
    tol: Optional[float] = None,
    n_max: Optional[int] = None,
) -> PointGroup:
    tol = tol if tol is not None else settings.POSNER_DEFAULT_TOLERANCE
    if tol <= 0:
        raise UsageError(f"tolerance must be positive, got {tol}")

    if s.n_atoms == 1 or molecular_radius(s) <= 0.0:
        return PointGroup(schoenflies="Kh", order=math.inf, elements=(SymmetryElement.identity(),), tolerance=tol)

    if _is_linear(s):
        elements = [SymmetryElement.identity()]
        inversion = SymmetryElement.inversion()
        score = score_element(s, inversion)
        if score <= tol:
            elements.append(inversion.with_score(score))
        label = "D∞h" if len(elements) == 2 else "C∞v"
        axis = geometry_service.inertia_tensor(s).axes[-1]
        return PointGroup(
            schoenflies=label,
            order=math.inf,
            elements=tuple(elements),
            tolerance=tol,
            principal_axis=tuple(float(c) for c in axis),
        )

    elements = consistent_elements(find_elements(s, tol, n_max))
    group = assemble_point_group(elements, tol)
    logger.debug(f"Detected {group.schoenflies} (order {group.order}) with {len(elements)} elements at tol {tol}")
    return group


def detect_many(structures: list[Structure], tol: Optional[float] = None, workers: Optional[int] = None) -> list[PointGroup]:
    """Detect each structure's group; byte-identical frames are detected once."""
    slots: dict[tuple, int] = {}
    unique: list[Structure] = []
    index = []
    for s in structures:
        key = (s.symbols, s.positions.tobytes())
        if key not in slots:
            slots[key] = len(unique)
            unique.append(s)
        index.append(slots[key])
    if len(unique) < len(structures):
        logger.debug(f"Detecting {len(unique)} distinct frames out of {len(structures)}")
    groups = ordered_map(lambda s: detect_point_group(s, tol), unique, workers)
    return [groups[i] for i in index]


def contains_element(elements: Iterable[SymmetryElement], wanted: SymmetryElement, angle_deg: float = 2.0) -> bool:
    cos_limit = math.cos(math.radians(angle_deg))
    for e in elements:
        if e.kind != wanted.kind or e.order != wanted.order:
            continue
        if wanted.axis is None or abs(float(np.dot(e.axis, wanted.axis))) >= cos_limit:
            return True
    return False
