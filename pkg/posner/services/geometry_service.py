import logging

import numpy as np
from scipy.spatial.transform import Rotation

from posner.core.errors import GeometryError, StructureMismatchError
from posner.schemas.structure import InertiaResult, RigidTransform, Structure

logger = logging.getLogger(__name__)

DEGENERATE_GAP = 1e-6


def centroid(s: Structure) -> np.ndarray:
    return s.positions.mean(axis=0)


def center_of_mass(s: Structure, masses=None) -> np.ndarray:
    masses = s.masses if masses is None else np.asarray(masses, dtype=float)
    return (masses[:, None] * s.positions).sum(axis=0) / masses.sum()


def inertia_tensor(s: Structure, masses=None) -> InertiaResult:
    """
    Inertia tensor about the centre of mass with principal moments in
    descending order. `axes[k]` is the principal axis of `moments[k]`.
    """
    if s.n_atoms < 2:
        raise GeometryError("inertia tensor needs at least two atoms")
    masses = s.masses if masses is None else np.asarray(masses, dtype=float)
    r = s.positions - center_of_mass(s, masses)
    if np.max(np.linalg.norm(r, axis=1)) < 1e-12:
        raise GeometryError("all atoms coincide; inertia tensor is degenerate")

    squared = np.einsum("i,i->", masses, np.einsum("ij,ij->i", r, r))
    tensor = squared * np.eye(3) - np.einsum("i,ij,ik->jk", masses, r, r)
    tensor = 0.5 * (tensor + tensor.T)

    values, vectors = np.linalg.eigh(tensor)
    order = np.argsort(values)[::-1]
    moments = np.clip(values[order], 0.0, None)
    axes = vectors[:, order].T

    scale = max(float(moments[0]), 1e-300)
    degenerate = tuple(
        (i, j) for i in range(3) for j in range(i + 1, 3)
        if abs(moments[i] - moments[j]) / scale < DEGENERATE_GAP
    )
    return InertiaResult(tensor=tensor, moments=moments, axes=axes, degenerate_pairs=degenerate)


def check_compatible(a: Structure, b: Structure) -> None:
    if a.n_atoms != b.n_atoms:
        raise StructureMismatchError(f"atom counts differ: {a.n_atoms} vs {b.n_atoms}")
    if not a.same_atoms(b):
        first = next(i for i, (x, y) in enumerate(zip(a.symbols, b.symbols)) if x != y)
        raise StructureMismatchError(
            f"element sequences differ at atom {first}: {a.symbols[first]} vs {b.symbols[first]}"
        )


def rmsd(a: Structure, b: Structure) -> float:
    check_compatible(a, b)
    diff = a.positions - b.positions
    return float(np.sqrt(np.einsum("ij,ij->", diff, diff) / a.n_atoms))


def apply_transform(s: Structure, t: RigidTransform) -> Structure:
    return s.with_positions(s.positions @ t.rotation.T + t.translation)


def compose_transforms(first: RigidTransform, second: RigidTransform) -> RigidTransform:
    """x -> second(first(x))."""
    return RigidTransform(
        rotation=second.rotation @ first.rotation,
        translation=second.rotation @ first.translation + second.translation,
    )


def molecular_radius(s: Structure) -> float:
    return float(np.max(np.linalg.norm(s.positions - centroid(s), axis=1)))


def unit(vector) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    norm = np.linalg.norm(vector)
    if norm < 1e-12:
        raise GeometryError("cannot normalise a zero vector")
    return vector / norm


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    return Rotation.from_rotvec(unit(axis) * angle).as_matrix()


def mirror_matrix(normal) -> np.ndarray:
    n = unit(normal)
    return np.eye(3) - 2.0 * np.outer(n, n)


def improper_rotation_matrix(axis, order: int) -> np.ndarray:
    """Rotation by 2π/order about `axis` followed by reflection through the perpendicular plane."""
    return mirror_matrix(axis) @ rotation_about_axis(axis, 2.0 * np.pi / order)


def proper_rotation_matrix(axis, order: int) -> np.ndarray:
    return rotation_about_axis(axis, 2.0 * np.pi / order)


def translate(s: Structure, offset) -> Structure:
    return s.with_positions(s.positions + np.asarray(offset, dtype=float))
