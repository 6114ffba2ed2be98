"""Options and loaders shared by the subcommands."""
import logging
from pathlib import Path
from typing import Optional

import click

from posner.core.config import settings
from posner.schemas.structure import Structure, Trajectory
from posner.services import alignment_service
from posner.storage import xyz

logger = logging.getLogger(__name__)

out_dir_option = click.option(
    "--out", "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("."),
    show_default=True,
    help="Directory the artifacts are written to.",
)
tolerance_option = click.option(
    "--tol", type=float, default=None,
    help=f"Detection tolerance as a fraction of the molecular radius [default: {settings.POSNER_DEFAULT_TOLERANCE}].",
)
workers_option = click.option(
    "--workers", type=click.IntRange(min=1), default=None,
    help="Threads for per-frame work [default: POSNER_WORKERS].",
)
skip_fraction_option = click.option(
    "--skip-fraction", type=click.FloatRange(0.0, 1.0, max_open=True),
    default=alignment_service.DEFAULT_SKIP_FRACTION, show_default=True,
    help="Leading fraction of frames dropped as equilibration.",
)
mass_weighted_option = click.option(
    "--mass-weighted/--unweighted", default=False, show_default=True,
    help="Mass-weight the superposition and the covariance.",
)
trajectory_argument = click.argument("traj_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))


def load_trajectory(path: Path, timestep_fs: Optional[float] = None) -> Trajectory:
    traj = xyz.read_traj(path, timestep_fs=timestep_fs)
    logger.info(f"Loaded {traj.n_frames} frames of {traj.frames[0].n_atoms} atoms from {path}")
    return traj


def aligned_production_run(
    traj: Trajectory,
    skip_fraction: float,
    ref_index: Optional[int] = None,
    mass_weighted: bool = False,
    workers: Optional[int] = None,
) -> tuple[Structure, Trajectory, int]:
    """Reference frame, every frame superposed on it, and the equilibration cut."""
    reference = alignment_service.select_reference(traj, ref_index, skip_fraction)
    aligned = alignment_service.align_trajectory(traj, reference, mass_weighted, workers)
    skipped = alignment_service.skip_count(traj.n_frames, skip_fraction)
    return reference, aligned, skipped


def parse_float_list(ctx, param, value: Optional[str]) -> Optional[tuple[float, ...]]:
    if value is None:
        return None
    try:
        return tuple(float(item) for item in value.split(",") if item.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got '{value}'") from None


def parse_int_list(ctx, param, value: Optional[str]) -> Optional[tuple[int, ...]]:
    if value is None:
        return None
    try:
        return tuple(int(item) for item in value.split(",") if item.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got '{value}'") from None


def parse_k_range(ctx, param, value: str) -> range:
    low, sep, high = value.partition("..")
    try:
        low_k, high_k = int(low), int(high) if sep else int(low)
    except ValueError:
        raise click.BadParameter(f"expected LOW..HIGH, got '{value}'") from None
    if high_k < low_k:
        raise click.BadParameter(f"empty k range '{value}'")
    return range(low_k, high_k + 1)
