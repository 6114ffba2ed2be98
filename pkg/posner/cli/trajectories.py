import logging
from pathlib import Path
from typing import Optional

import click

from posner.cli.dependencies import (
    aligned_production_run,
    load_trajectory,
    mass_weighted_option,
    out_dir_option,
    parse_k_range,
    skip_fraction_option,
    tolerance_option,
    trajectory_argument,
    workers_option,
)
from posner.core import paths
from posner.core.config import settings
from posner.core.errors import MissingEnergyError
from posner.models.enums import KSelectionMethod
from posner.schemas.generation import SampleTrajectoryConfig
from posner.schemas.report import AverageSummary, ClusterSummary, ModeSummary, PcaSummary, PhaseSummary
from posner.services import (
    alignment_service,
    geometry_service,
    report_service,
    sample_service,
    symmetry_service,
    trajectory_stats_service,
)
from posner.storage import files, xyz

logger = logging.getLogger(__name__)

timestep_option = click.option(
    "--timestep-fs", type=click.FloatRange(min=0.0, min_open=True), default=None,
    help="Frame spacing in fs [default: from the frame times].",
)


def _label(structure, tol: Optional[float]) -> str:
    return symmetry_service.detect_point_group(structure, tol).schoenflies


@click.command("sample")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="XYZ trajectory to write.")
@click.option("--seed", type=int, default=SampleTrajectoryConfig().seed, show_default=True)
def sample(out_path: Path, seed: int):
    """Write the synthetic Posner-like trajectory with planted symmetry phases."""
    result = sample_service.build_sample_trajectory(SampleTrajectoryConfig(seed=seed))
    xyz.write_traj(out_path, result.trajectory)
    click.echo(f"frames: {result.trajectory.n_frames}")
    for phase in result.phases:
        click.echo(f"{phase.kind.value}: {phase.start_frame}-{phase.end_frame}")
    click.echo(f"amplitude bound: {result.amplitude_bound:.6f} Å")


@click.command("timeline")
@trajectory_argument
@tolerance_option
@click.option("--skip", "skip_frames", type=click.IntRange(min=0),
              default=trajectory_stats_service.DEFAULT_SKIP_FRAMES, show_default=True,
              help="Equilibration frames left out of the timeline.")
@timestep_option
@workers_option
@out_dir_option
def timeline(
    traj_path: Path,
    tol: Optional[float],
    skip_frames: int,
    timestep_fs: Optional[float],
    workers: Optional[int],
    out_dir: Path,
):
    """
    Label every production frame and merge equal runs into segments.
    """
    traj = load_trajectory(traj_path, timestep_fs)
    segments = trajectory_stats_service.symmetry_timeline(traj, tol, skip_frames, timestep_fs, workers)
    occurrence = trajectory_stats_service.occurrence_histogram(segments)
    persistence = trajectory_stats_service.persistence_stats(segments)
    tolerance = tol if tol is not None else settings.POSNER_DEFAULT_TOLERANCE
    step = timestep_fs if timestep_fs is not None else traj.timestep_fs

    phase = trajectory_stats_service.longest_high_symmetry_phase(segments)
    average_label, phase_energy = None, None
    if phase is not None:
        window = traj.slice(phase.start_frame, phase.end_frame + 1)
        aligned = alignment_service.align_trajectory(window, window.frames[0], workers=workers)
        local = phase.model_copy(update={"start_frame": 0, "end_frame": phase.n_frames - 1})
        average_label = _label(alignment_service.phase_average(aligned, local), tol)
        try:
            phase_energy = trajectory_stats_service.phase_energy_stats(traj, phase)
        except MissingEnergyError as exc:
            logger.info(f"No phase energy statistics: {exc.detail}")
    summary = PhaseSummary(
        segment=phase,
        average_label=average_label,
        energy=phase_energy,
        max_step_displacement=trajectory_stats_service.max_step_displacement(traj.slice(skip_frames, traj.n_frames)),
    )

    files.write_csv(paths.timeline_csv_path(out_dir), report_service.TIMELINE_HEADER,
                    report_service.timeline_rows(segments))
    files.write_json(
        paths.occurrence_path(out_dir),
        report_service.occurrence_payload(tolerance, skip_frames, step, occurrence),
    )
    files.write_json(paths.persistence_path(out_dir), [stats.model_dump() for stats in persistence])
    files.write_json(paths.phase_summary_path(out_dir), summary)

    click.echo(f"segments: {len(segments)}")
    for label, percent in occurrence.items():
        click.echo(f"{label}: {percent:.2f}%")
    if phase is not None:
        click.echo(f"longest high-symmetry phase: {phase.group_label} frames {phase.start_frame}-{phase.end_frame} "
                   f"({phase.duration_fs:g} fs), average {average_label}")
    click.echo(f"max step displacement: {summary.max_step_displacement:.4f}")


@click.command("average")
@trajectory_argument
@skip_fraction_option
@click.option("--ref", "ref_index", type=int, default=None,
              help="Reference frame index [default: first frame after the skip].")
@mass_weighted_option
@tolerance_option
@workers_option
@out_dir_option
def average(
    traj_path: Path,
    skip_fraction: float,
    ref_index: Optional[int],
    mass_weighted: bool,
    tol: Optional[float],
    workers: Optional[int],
    out_dir: Path,
):
    """Superpose every frame on a reference and average the production frames."""
    traj = load_trajectory(traj_path)
    reference, aligned, skipped = aligned_production_run(traj, skip_fraction, ref_index, mass_weighted, workers)
    mean = alignment_service.time_average(aligned, skip_fraction)
    label = _label(mean, tol)
    rmsds = alignment_service.frame_rmsds(aligned.slice(skipped, aligned.n_frames), reference)

    summary = AverageSummary(
        skip_fraction=skip_fraction,
        reference_index=(ref_index if ref_index is not None else skipped) % traj.n_frames,
        frames_averaged=traj.n_frames - skipped,
        label=label,
        rmsd_to_reference=geometry_service.rmsd(mean, reference),
        max_aligned_rmsd=float(rmsds.max()),
    )
    xyz.write_xyz(paths.average_xyz_path(out_dir), mean)
    files.write_json(paths.average_summary_path(out_dir), summary)
    click.echo(f"{label} (averaged {summary.frames_averaged} frames)")


@click.command("pca")
@trajectory_argument
@click.option("--modes", "n_modes", type=click.IntRange(min=1), default=5, show_default=True)
@skip_fraction_option
@mass_weighted_option
@click.option("--display-scale", type=float, default=3.0, show_default=True,
              help="Arrow elongation recorded for figures; CSV vectors stay unscaled.")
@tolerance_option
@workers_option
@out_dir_option
def pca(
    traj_path: Path,
    n_modes: int,
    skip_fraction: float,
    mass_weighted: bool,
    display_scale: float,
    tol: Optional[float],
    workers: Optional[int],
    out_dir: Path,
):
    """
    Principal components of the aligned production frames. Modes are numbered from 0.
    """
    traj = load_trajectory(traj_path)
    _, aligned, skipped = aligned_production_run(traj, skip_fraction, mass_weighted=mass_weighted, workers=workers)
    production = aligned.slice(skipped, aligned.n_frames)
    result = trajectory_stats_service.pca(production, mass_weighted)

    files.write_csv(
        paths.pca_eigen_csv_path(out_dir),
        ("mode", "eigenvalue", "explained_fraction"),
        [(m, repr(float(value)), repr(float(fraction)))
         for m, (value, fraction) in enumerate(zip(result.eigenvalues, result.explained_fraction))],
    )
    xyz.write_xyz(paths.pca_mean_xyz_path(out_dir), result.mean)

    modes = []
    for m in range(n_modes):
        displacement = trajectory_stats_service.eigenmode_displacements(result, m)
        files.write_csv(
            paths.pca_mode_csv_path(out_dir, m),
            ("atom", "element", "dx", "dy", "dz", "magnitude"),
            [
                (atom, symbol, *(repr(float(c)) for c in vector), repr(float(size)))
                for atom, (symbol, vector, size) in enumerate(
                    zip(result.mean.symbols, displacement.vectors, displacement.magnitudes)
                )
            ],
        )
        modes.append(ModeSummary(
            mode=m,
            eigenvalue=float(result.eigenvalues[m]),
            explained_fraction=float(result.explained_fraction[m]),
            amplitude=displacement.amplitude,
            max_displacement=displacement.max_magnitude,
            max_atom=displacement.max_atom,
            plus_label=_label(trajectory_stats_service.mode_structure(result, m, 1), tol),
            minus_label=_label(trajectory_stats_service.mode_structure(result, m, -1), tol),
        ))

    projections = trajectory_stats_service.project_frames(result, production, n_modes)
    files.write_csv(
        paths.pca_projections_csv_path(out_dir),
        ("frame", *(f"pc{m}" for m in range(n_modes))),
        [(skipped + index, *(repr(float(c)) for c in row)) for index, row in enumerate(projections)],
    )

    summary = PcaSummary(
        n_frames=result.n_frames,
        skip_fraction=skip_fraction,
        mass_weighted=mass_weighted,
        total_variance=float(result.eigenvalues.sum()),
        mean_label=_label(result.mean, tol),
        display_scale=display_scale,
        modes=modes,
    )
    files.write_json(paths.pca_summary_path(out_dir), summary)
    click.echo(f"mean structure: {summary.mean_label}")
    for mode in modes:
        click.echo(f"mode {mode.mode}: eigenvalue {mode.eigenvalue:.6g} Å² ({100 * mode.explained_fraction:.2f}%), "
                   f"max displacement {mode.max_displacement:.4f} Å on atom {mode.max_atom}, "
                   f"{mode.minus_label}/{mode.plus_label}")


@click.command("cluster")
@trajectory_argument
@click.option("--k", "k_value", default="auto", show_default=True, help="Cluster count, or 'auto'.")
@click.option("--k-range", callback=parse_k_range, default="2..6", show_default=True,
              help="Candidate k for --k auto, as LOW..HIGH.")
@click.option("--method", type=click.Choice([m.value for m in KSelectionMethod]),
              default=KSelectionMethod.SILHOUETTE.value, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@skip_fraction_option
@tolerance_option
@workers_option
@out_dir_option
def cluster(
    traj_path: Path,
    k_value: str,
    k_range: range,
    method: str,
    seed: int,
    skip_fraction: float,
    tol: Optional[float],
    workers: Optional[int],
    out_dir: Path,
):
    """k-means over the aligned production frames."""
    traj = load_trajectory(traj_path)
    _, aligned, skipped = aligned_production_run(traj, skip_fraction, workers=workers)
    production = aligned.slice(skipped, aligned.n_frames)

    scores: dict[int, float] = {}
    if k_value == "auto":
        selection = trajectory_stats_service.select_k(production, k_range, seed, KSelectionMethod(method))
        k, scores = selection.k, selection.scores
    else:
        try:
            k = int(k_value)
        except ValueError:
            raise click.BadParameter(f"expected an integer or 'auto', got '{k_value}'", param_hint="--k") from None
    result = trajectory_stats_service.kmeans(production, k, seed)

    files.write_csv(
        paths.assignments_csv_path(out_dir),
        ("frame", "cluster"),
        [(skipped + index, int(c)) for index, c in enumerate(result.assignments)],
    )
    labels = []
    for index, centroid in enumerate(result.centroids):
        xyz.write_xyz(paths.centroid_xyz_path(out_dir, index), centroid)
        labels.append(_label(centroid, tol))

    summary = ClusterSummary(
        k=k,
        seed=seed,
        method=method if k_value == "auto" else "fixed",
        sizes=result.cluster_sizes(),
        inertia=result.inertia,
        silhouette=result.silhouette,
        centroid_labels=labels,
        scores_per_k={str(key): value for key, value in scores.items()},
    )
    files.write_json(paths.clusters_summary_path(out_dir), summary)
    click.echo(f"k: {k}")
    for key, value in scores.items():
        click.echo(f"silhouette k={key}: {value:.4f}")
    for index, (size, label) in enumerate(zip(summary.sizes, labels)):
        click.echo(f"cluster {index}: {size} frames, centroid {label}")


@click.command("energy-stats")
@trajectory_argument
@click.option("--bins", type=click.IntRange(min=1), default=trajectory_stats_service.DEFAULT_HISTOGRAM_BINS,
              show_default=True)
@out_dir_option
def energy_stats(traj_path: Path, bins: int, out_dir: Path):
    """Energy mean, spread and histogram over all frames."""
    traj = load_trajectory(traj_path)
    stats = trajectory_stats_service.energy_stats(traj, bins)
    files.write_json(paths.energy_stats_path(out_dir), stats)
    click.echo(f"mean: {stats.mean:.6f} eV")
    click.echo(f"std: {stats.std:.6f} eV")
    click.echo(f"min: {stats.min:.6f} eV")
    click.echo(f"max: {stats.max:.6f} eV")
    click.echo(f"spread: {stats.spread:.6f} eV")


commands = (sample, timeline, average, pca, cluster, energy_stats)
