import logging
import math
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from posner.core.errors import EmptySelectionError, UsageError
from posner.schemas.stats import TimelineSegment
from posner.schemas.structure import RigidTransform, Structure, Trajectory
from posner.services import geometry_service
from posner.services.batch import ordered_map

logger = logging.getLogger(__name__)

DEFAULT_SKIP_FRACTION = 0.05


def _weights(s: Structure, mass_weighted: bool) -> np.ndarray:
    return s.masses if mass_weighted else np.ones(s.n_atoms)


def kabsch(mobile: Structure, reference: Structure, mass_weighted: bool = False) -> RigidTransform:
    """
    Proper rigid transform taking `mobile` onto `reference` with the least
    (optionally mass-weighted) squared deviation.
    """
    geometry_service.check_compatible(mobile, reference)
    weights = _weights(reference, mass_weighted)
    mobile_center = geometry_service.center_of_mass(mobile, weights)
    reference_center = geometry_service.center_of_mass(reference, weights)
    if mobile.n_atoms == 1:
        return RigidTransform(rotation=np.eye(3), translation=reference_center - mobile_center)

    # align_vectors(a, b) returns R with a ~ R b and always det(R) = +1
    rotation, _ = Rotation.align_vectors(
        reference.positions - reference_center,
        mobile.positions - mobile_center,
        weights=weights,
    )
    matrix = rotation.as_matrix()
    return RigidTransform(rotation=matrix, translation=reference_center - matrix @ mobile_center)


def superpose(mobile: Structure, reference: Structure, mass_weighted: bool = False) -> Structure:
    return geometry_service.apply_transform(mobile, kabsch(mobile, reference, mass_weighted))


def align_trajectory(
    traj: Trajectory,
    reference: Structure,
    mass_weighted: bool = False,
    workers: Optional[int] = None,
) -> Trajectory:
    geometry_service.check_compatible(traj.frames[0], reference)
    frames = ordered_map(lambda frame: superpose(frame, reference, mass_weighted), traj.frames, workers)
    logger.debug(f"Aligned {len(frames)} frames")
    return traj.with_frames(frames)


def skip_count(n_frames: int, skip_fraction: float) -> int:
    """⌈skip_fraction·F⌉ with float noise rounded away first (0.05·900 must give 45)."""
    if not 0.0 <= skip_fraction < 1.0:
        raise UsageError(f"skip fraction must lie in [0, 1), got {skip_fraction}")
    return math.ceil(round(skip_fraction * n_frames, 9))


def select_reference(
    traj: Trajectory,
    ref_index: Optional[int] = None,
    skip_fraction: float = DEFAULT_SKIP_FRACTION,
) -> Structure:
    """The frame alignment targets; defaults to the first post-equilibration frame."""
    if ref_index is None:
        ref_index = skip_count(traj.n_frames, skip_fraction)
        if ref_index >= traj.n_frames:
            raise EmptySelectionError(f"skipping {ref_index} of {traj.n_frames} frames leaves nothing to align to")
    if not -traj.n_frames <= ref_index < traj.n_frames:
        raise UsageError(f"reference frame {ref_index} is outside a {traj.n_frames}-frame trajectory")
    return traj.frames[ref_index]


def _mean_structure(frames, label: str) -> Structure:
    positions = np.mean(np.stack([frame.positions for frame in frames]), axis=0)
    return frames[0].with_positions(positions, energy=None, time_fs=None, label=label)


def time_average(traj: Trajectory, skip_fraction: float = DEFAULT_SKIP_FRACTION) -> Structure:
    """Per-atom mean over the frames left after the equilibration cut. Frames must already be aligned."""
    skipped = skip_count(traj.n_frames, skip_fraction)
    if skipped >= traj.n_frames:
        raise EmptySelectionError(f"skipping {skipped} of {traj.n_frames} frames leaves nothing to average")
    return _mean_structure(traj.frames[skipped:], label="time-average")


def phase_average(traj: Trajectory, segment: TimelineSegment) -> Structure:
    if segment.end_frame >= traj.n_frames:
        raise EmptySelectionError(
            f"segment {segment.start_frame}-{segment.end_frame} runs past a {traj.n_frames}-frame trajectory"
        )
    frames = traj.frames[segment.start_frame:segment.end_frame + 1]
    return _mean_structure(frames, label=f"{segment.group_label}-phase-average")


def frame_rmsds(traj: Trajectory, reference: Structure) -> np.ndarray:
    return np.array([geometry_service.rmsd(frame, reference) for frame in traj.frames])
