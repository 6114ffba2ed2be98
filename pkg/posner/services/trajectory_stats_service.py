import logging
from decimal import Decimal
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA
from sklearn.metrics import silhouette_score

from posner.core.errors import ClusterCountError, EmptySelectionError, MissingEnergyError, ModeIndexError, UsageError
from posner.models.enums import KSelectionMethod
from posner.schemas.stats import (
    ClusterResult,
    EnergyStats,
    FormationCheck,
    HistogramBins,
    KSelection,
    ModeDisplacement,
    PcaResult,
    PersistenceStats,
    TimelineSegment,
)
from posner.schemas.structure import Structure, Trajectory
from posner.services import geometry_service, symmetry_service

logger = logging.getLogger(__name__)

DEFAULT_SKIP_FRAMES = 500
DEFAULT_HISTOGRAM_BINS = 50
LOW_SYMMETRY_LABELS = ("C1", "Cs", "Ci")
KMEANS_MAX_ITERATIONS = 300
SILHOUETTE_SAMPLE = 2000


# Symmetry timelines

def frame_labels(
    traj: Trajectory,
    tol: Optional[float] = None,
    skip_frames: int = DEFAULT_SKIP_FRAMES,
    workers: Optional[int] = None,
) -> list[str]:
    if skip_frames < 0:
        raise UsageError(f"skip_frames must be non-negative, got {skip_frames}")
    if skip_frames >= traj.n_frames:
        raise EmptySelectionError(f"skipping {skip_frames} of {traj.n_frames} frames leaves no frames to label")
    groups = symmetry_service.detect_many(list(traj.frames[skip_frames:]), tol, workers)
    return [group.schoenflies for group in groups]


def segments_from_labels(labels: Sequence[str], first_frame: int, timestep_fs: float) -> list[TimelineSegment]:
    """Merge runs of equal consecutive labels. Frame numbers are absolute trajectory indices."""
    segments: list[TimelineSegment] = []
    start = 0
    for index in range(1, len(labels) + 1):
        if index == len(labels) or labels[index] != labels[start]:
            segments.append(TimelineSegment(
                start_frame=first_frame + start,
                end_frame=first_frame + index - 1,
                group_label=labels[start],
                duration_fs=(index - start) * timestep_fs,
            ))
            start = index
    return segments


def symmetry_timeline(
    traj: Trajectory,
    tol: Optional[float] = None,
    skip_frames: int = DEFAULT_SKIP_FRAMES,
    timestep_fs: Optional[float] = None,
    workers: Optional[int] = None,
) -> list[TimelineSegment]:
    timestep_fs = timestep_fs if timestep_fs is not None else traj.timestep_fs
    if timestep_fs is None or timestep_fs <= 0:
        raise UsageError("a positive timestep is required to build a symmetry timeline")

    labels = frame_labels(traj, tol, skip_frames, workers)
    segments = segments_from_labels(labels, skip_frames, timestep_fs)
    logger.info(f"Timeline over {len(labels)} frames: {len(segments)} segments")
    return segments


def _require_segments(timeline: Sequence[TimelineSegment]) -> None:
    if not timeline:
        raise EmptySelectionError("timeline has no segments")


def occurrence_histogram(timeline: Sequence[TimelineSegment]) -> dict[str, float]:
    """Frame-weighted percentage per label, in order of first appearance."""
    _require_segments(timeline)
    total = sum(segment.n_frames for segment in timeline)
    counts: dict[str, int] = {}
    for segment in timeline:
        counts[segment.group_label] = counts.get(segment.group_label, 0) + segment.n_frames
    return {label: 100.0 * count / total for label, count in counts.items()}


def persistence_stats(timeline: Sequence[TimelineSegment]) -> list[PersistenceStats]:
    _require_segments(timeline)
    durations: dict[str, list[float]] = {}
    for segment in timeline:
        durations.setdefault(segment.group_label, []).append(segment.duration_fs)
    return [
        PersistenceStats(
            group_label=label,
            max_duration_fs=max(values),
            mean_duration_fs=sum(values) / len(values),
            segment_count=len(values),
            total_duration_fs=sum(values),
        )
        for label, values in durations.items()
    ]


def longest_high_symmetry_phase(
    timeline: Sequence[TimelineSegment],
    low_labels: Iterable[str] = LOW_SYMMETRY_LABELS,
) -> Optional[TimelineSegment]:
    """Longest segment whose label is not a low-symmetry one; ties go to the earliest."""
    low = set(low_labels)
    best: Optional[TimelineSegment] = None
    for segment in timeline:
        if segment.group_label in low:
            continue
        if best is None or segment.duration_fs > best.duration_fs:
            best = segment
    return best


def max_step_displacement(traj: Trajectory) -> float:
    """Largest |Δx| of any atom between consecutive frames, over the earlier frame's molecular radius."""
    worst = 0.0
    for previous, current in zip(traj.frames, traj.frames[1:]):
        radius = geometry_service.molecular_radius(previous)
        if radius <= 0.0:
            continue
        step = np.linalg.norm(current.positions - previous.positions, axis=1).max()
        worst = max(worst, float(step / radius))
    return worst


# Energies

def _energies(frames: Sequence[Structure], first_index: int = 0) -> np.ndarray:
    values = []
    for offset, frame in enumerate(frames):
        if frame.energy is None:
            raise MissingEnergyError(first_index + offset)
        values.append(frame.energy)
    return np.array(values, dtype=float)


def _energy_summary(energies: np.ndarray, bins: int) -> EnergyStats:
    if bins < 1:
        raise UsageError(f"histogram needs at least one bin, got {bins}")
    counts, edges = np.histogram(energies, bins=bins)
    return EnergyStats(
        mean=float(energies.mean()),
        std=float(energies.std()),
        min=float(energies.min()),
        max=float(energies.max()),
        spread=float(energies.max() - energies.min()),
        n_frames=int(energies.size),
        histogram=HistogramBins(edges=edges.tolist(), counts=counts.tolist()),
    )


def energy_stats(traj: Trajectory, bins: int = DEFAULT_HISTOGRAM_BINS) -> EnergyStats:
    return _energy_summary(_energies(traj.frames), bins)


def phase_energy_stats(traj: Trajectory, segment: TimelineSegment, bins: int = DEFAULT_HISTOGRAM_BINS) -> EnergyStats:
    if segment.end_frame >= traj.n_frames:
        raise EmptySelectionError(
            f"segment {segment.start_frame}-{segment.end_frame} runs past a {traj.n_frames}-frame trajectory"
        )
    frames = traj.frames[segment.start_frame:segment.end_frame + 1]
    return _energy_summary(_energies(frames, segment.start_frame), bins)


def formation_check(e_cluster: float, e_unit: float, n: int) -> FormationCheck:
    """delta = e_cluster − n·e_unit in decimal arithmetic; negative means the cluster is favoured."""
    if n < 1:
        raise UsageError(f"unit count must be at least 1, got {n}")
    cluster = Decimal(str(e_cluster))
    unit = Decimal(str(e_unit))
    delta = cluster - n * unit
    return FormationCheck(e_cluster=cluster, e_unit=unit, n=n, delta=delta, more_stable=delta < 0)


# PCA

def _flat_coordinates(traj: Trajectory, mass_weighted: bool) -> np.ndarray:
    x = traj.coordinates().reshape(traj.n_frames, -1)
    if mass_weighted:
        x = x * np.repeat(np.sqrt(traj.frames[0].masses), 3)
    return x


def _coordinate_scale(pca_result: PcaResult) -> np.ndarray:
    """Per-coordinate factor mapping PCA space back to Å."""
    if not pca_result.mass_weighted:
        return np.ones(3 * pca_result.mean.n_atoms)
    return np.repeat(1.0 / np.sqrt(pca_result.mean.masses), 3)


def pca(traj: Trajectory, mass_weighted: bool = False) -> PcaResult:
    """
    Principal components of the flattened frame coordinates (covariance
    divisor F−1), largest variance first. Frames must already be aligned.
    """
    if traj.n_frames < 2:
        raise EmptySelectionError("PCA needs at least two frames")

    x = _flat_coordinates(traj, mass_weighted)
    model = PCA(svd_solver="full").fit(x)
    eigenvalues = np.clip(model.explained_variance_, 0.0, None)
    vectors = model.components_.copy()
    signs = np.sign(vectors[np.arange(len(vectors)), np.abs(vectors).argmax(axis=1)])
    vectors *= np.where(signs == 0, 1.0, signs)[:, None]

    total = eigenvalues.sum()
    explained = eigenvalues / total if total > 0 else np.zeros_like(eigenvalues)
    mean = traj.frames[0].with_positions(
        traj.coordinates().mean(axis=0), energy=None, time_fs=None, label="pca-mean"
    )
    logger.info(
        f"PCA over {traj.n_frames} frames: leading eigenvalue {eigenvalues[0]:.4g} "
        f"({100 * explained[0]:.1f}% of variance)"
    )
    return PcaResult(
        mean=mean,
        eigenvalues=eigenvalues,
        eigenvectors=vectors,
        explained_fraction=explained,
        mass_weighted=mass_weighted,
        n_frames=traj.n_frames,
    )


def _check_mode(pca_result: PcaResult, mode: int) -> None:
    if not 0 <= mode < pca_result.n_modes:
        raise ModeIndexError(f"mode {mode} is out of range; {pca_result.n_modes} modes available")


def eigenmode_displacements(pca_result: PcaResult, mode: int, amplitude: Optional[float] = None) -> ModeDisplacement:
    """Per-atom displacement of one mode; amplitude defaults to √eigenvalue."""
    _check_mode(pca_result, mode)
    if amplitude is None:
        amplitude = float(np.sqrt(pca_result.eigenvalues[mode]))
    flat = pca_result.eigenvectors[mode] * amplitude * _coordinate_scale(pca_result)
    vectors = flat.reshape(-1, 3)
    magnitudes = np.linalg.norm(vectors, axis=1)
    return ModeDisplacement(
        mode=mode,
        amplitude=amplitude,
        vectors=vectors,
        magnitudes=magnitudes,
        max_magnitude=float(magnitudes.max()),
        max_atom=int(magnitudes.argmax()),
    )


def project_frames(pca_result: PcaResult, traj: Trajectory, modes: Optional[int] = None) -> np.ndarray:
    """(F, modes) essential-dynamics coordinates of each frame."""
    modes = pca_result.n_modes if modes is None else modes
    if not 1 <= modes <= pca_result.n_modes:
        raise ModeIndexError(f"cannot project onto {modes} modes; {pca_result.n_modes} available")
    scale = 1.0 / _coordinate_scale(pca_result)
    deviations = (traj.coordinates() - pca_result.mean.positions).reshape(traj.n_frames, -1) * scale
    return deviations @ pca_result.eigenvectors[:modes].T


def mode_structure(pca_result: PcaResult, mode: int, sign: int = 1, amplitude: Optional[float] = None) -> Structure:
    """mean ± amplitude·mode."""
    if sign not in (1, -1):
        raise UsageError(f"sign must be +1 or -1, got {sign}")
    displacement = eigenmode_displacements(pca_result, mode, amplitude)
    suffix = "plus" if sign > 0 else "minus"
    return pca_result.mean.with_positions(
        pca_result.mean.positions + sign * displacement.vectors,
        label=f"mode-{mode}-{suffix}",
    )


# Clustering

def _silhouette(x: np.ndarray, assignments: np.ndarray, seed: int) -> Optional[float]:
    n_labels = len(np.unique(assignments))
    if n_labels < 2 or n_labels > len(x) - 1:
        return None
    sample_size = SILHOUETTE_SAMPLE if len(x) > SILHOUETTE_SAMPLE else None
    return float(silhouette_score(x, assignments, sample_size=sample_size, random_state=seed))


def kmeans(
    traj: Trajectory,
    k: int,
    seed: int = 0,
    n_init: int = 10,
    max_iterations: int = KMEANS_MAX_ITERATIONS,
) -> ClusterResult:
    """
    Lloyd k-means on flattened aligned coordinates with k-means++ seeding.
    Iteration stops once assignments no longer change.
    """
    if not 1 <= k <= traj.n_frames:
        raise ClusterCountError(f"k must lie in [1, {traj.n_frames}], got {k}")

    x = traj.coordinates().reshape(traj.n_frames, -1)
    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=n_init,
        max_iter=max_iterations,
        tol=0.0,
        algorithm="lloyd",
        random_state=seed,
    ).fit(x)
    assignments = model.labels_.astype(int)

    template = traj.frames[0]
    centroids = tuple(
        template.with_positions(
            x[assignments == cluster].mean(axis=0).reshape(-1, 3) if np.any(assignments == cluster)
            else model.cluster_centers_[cluster].reshape(-1, 3),
            energy=None, time_fs=None, label=f"cluster-{cluster}",
        )
        for cluster in range(k)
    )
    result = ClusterResult(
        k=k,
        assignments=assignments,
        centroids=centroids,
        inertia=float(model.inertia_),
        silhouette=_silhouette(x, assignments, seed),
        iterations=int(model.n_iter_),
    )
    logger.debug(f"k-means k={k}: inertia {result.inertia:.4g}, silhouette {result.silhouette}")
    return result


def _elbow(inertias: dict[int, float]) -> int:
    """k farthest below the straight line joining the first and last (k, inertia) points."""
    ks = sorted(inertias)
    if len(ks) < 3:
        return ks[0]
    first, last = ks[0], ks[-1]
    span = inertias[first] - inertias[last]
    if span <= 0:
        return first
    best, best_gap = first, -np.inf
    for k in ks:
        line = inertias[first] - span * (k - first) / (last - first)
        gap = (line - inertias[k]) / span
        if gap > best_gap + 1e-12:
            best, best_gap = k, gap
    return best


def select_k(
    traj: Trajectory,
    k_range: Iterable[int] = range(2, 7),
    seed: int = 0,
    method: KSelectionMethod = KSelectionMethod.SILHOUETTE,
    n_init: int = 10,
) -> KSelection:
    """Pick k by mean silhouette (ties to the smaller k) or by the inertia elbow."""
    ks = sorted(set(k_range))
    if not ks or ks[0] < 2 or ks[-1] > traj.n_frames:
        raise ClusterCountError(f"k range must lie within [2, {traj.n_frames}], got {ks}")

    scores: dict[int, float] = {}
    inertias: dict[int, float] = {}
    for k in ks:
        result = kmeans(traj, k, seed, n_init)
        inertias[k] = result.inertia
        scores[k] = result.silhouette if result.silhouette is not None else -1.0

    if method == KSelectionMethod.ELBOW:
        chosen = _elbow(inertias)
    else:
        chosen = ks[0]
        for k in ks[1:]:
            if scores[k] > scores[chosen]:
                chosen = k
    logger.info(f"Selected k={chosen} by {method.value}")
    return KSelection(k=chosen, method=method, scores=scores, inertias=inertias)
